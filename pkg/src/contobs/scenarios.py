"""Built-in scenario data: the academic ensemble and the two aortic networks."""
from __future__ import annotations

import numpy as np

from .fit import ChannelData, StepEnsemble

Q_DATA = np.array([1, 2, 4, 5, 4, 7, 7, 7, 8, 10]) / 10
R_DATA = np.array([9, 8, 6, 4, 4, 3, 2, 2, -1, 0]) / 10
CW_DATA = np.array([-3, -3, -2, -2, 1, 0, 1, 2, 3, 6]) / 20
CTHETA_DATA = np.array([12, 11, 14, 13, 15, 16, 18, 19, 18, 20]) / 20


def _poly_channels(coefs, f, df):
    return ChannelData([lambda x, c=c: c * f(x) for c in coefs],
                       [lambda x, c=c: c * df(x) for c in coefs])


def academic_ensemble(q=Q_DATA, r=R_DATA, c_w=CW_DATA, c_theta=CTHETA_DATA,
                      m1: int = 1, m2: int | None = None, g=None) -> StepEnsemble:
    """Unit transport speeds, ``w = c_w x (x + 1)``, ``theta = c_theta x`` and ``f = 1``."""
    m = len(q)
    one = ChannelData([lambda x: np.ones_like(np.asarray(x, dtype=float))] * m,
                      [lambda x: np.zeros_like(np.asarray(x, dtype=float))] * m)
    m2 = m if m2 is None else m2
    return StepEnsemble(
        lam=one, mu=one,
        w=_poly_channels(c_w, lambda x: x * (x + 1), lambda x: 2 * x + 1),
        theta=_poly_channels(c_theta, lambda x: np.asarray(x, dtype=float),
                             lambda x: np.ones_like(np.asarray(x, dtype=float))),
        q=np.asarray(q, float), r=np.asarray(r, float), f=np.ones(m),
        g=np.ones(m2 - m1 + 1) if g is None else g, m1=m1, m2=m2)
