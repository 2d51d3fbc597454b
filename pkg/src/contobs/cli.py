"""Command line: fit | gains | certify | simulate | all, plus show-config.

Exit codes: 0 success, 2 configuration error, 3 assumption violation,
4 numerical failure (including fit thresholds left unmet in adaptive mode).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import platform
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from .config import KINDS, ScenarioConfig, default_config, dump_config, load_config
from .errors import AssumptionViolation, ConfigError, NumericalFailure
from .pipeline import build_problem, run_certify, run_fit, run_gains, run_simulate

log = logging.getLogger("contobs")

STAGES = ("fit", "gains", "certify", "simulate", "all")
EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 2, 3, 4
DIGITS = 12


def fmt(x) -> str:
    return f"{float(x):.{DIGITS}g}"


def clean(obj):
    """Plain Python containers with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    if isinstance(obj, complex):
        return [float(fmt(obj.real)), float(fmt(obj.imag))]
    return obj


class Writer:
    """Writes output files and keeps their digests for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {out} not writable: {exc}") from exc
        self.files: dict[str, str] = {}

    def bytes(self, name: str, data: bytes) -> Path:
        path = self.out / name
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def yaml(self, name: str, obj) -> Path:
        return self.bytes(name, yaml.safe_dump(clean(obj), sort_keys=True).encode())

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
        return self.bytes(name, buf.getvalue().encode())


def _plots(w: Writer, ts) -> None:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "contobs", "svg.fonttype": "path"}):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
        ax1.plot(ts.t, ts.CX, label="CX")
        ax1.plot(ts.t, ts.CXhat, "--", label="CX estimate")
        ax1.legend(loc="upper right")
        ax2.plot(ts.t, ts.err)
        ax2.set_xlabel("t")
        ax2.set_ylabel("CX - CX estimate")
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        w.bytes("estimate.svg", buf.getvalue())

        fig, ax = plt.subplots(figsize=(7, 3))
        ax.semilogy(ts.t, np.maximum(np.abs(ts.err), 1e-300))
        ax.set_xlabel("t")
        ax.set_ylabel("|CX - CX estimate|")
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        w.bytes("error_log.svg", buf.getvalue())


def _write_fit(w: Writer, params, report) -> None:
    w.yaml("coefficients.yaml", {"params": params.to_dict(), "report": report.to_dict()})
    rows = [[name, report.residuals.get(name, np.nan), report.l2_errors.get(name, np.nan),
             report.gaps[name], report.thresholds[name]] for name in report.gaps]
    w.csv("residuals.csv", ["parameter", "residual", "l2_error", "gap", "threshold"], rows)


def _write_gains(w: Writer, res) -> None:
    w.yaml("gains.yaml", {"observer": res.gain.to_dict(), "injection": res.injection.to_dict()})
    w.yaml("detectability.yaml", res.detectability.to_dict())
    n = res.gamma2_at_zero.shape[1]
    w.csv("gamma2_at_zero.csv", ["y"] + [f"k{k}" for k in range(n)],
          np.column_stack([res.gamma2_y, res.gamma2_at_zero]))


def _write_series(w: Writer, ts) -> None:
    w.csv("timeseries.csv", ["t", "CX", "CXhat", "err", "Y", "Yhat"],
          np.column_stack([ts.t, ts.CX, ts.CXhat, ts.err, ts.Y, ts.Yhat]))
    _plots(w, ts)


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "PyYAML", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def run_pipeline(cfg: ScenarioConfig, stage: str, out: Path, say=print) -> int:
    """Run ``stage`` (prerequisites included) and write its outputs; returns the exit code."""
    w = Writer(out)
    timings, summary = {}, {}
    code = EXIT_OK
    want = {"fit": {"fit"}, "gains": {"gains"}, "certify": {"certify"},
            "simulate": {"simulate"}, "all": {"fit", "gains", "certify", "simulate"}}[stage]

    t0 = time.perf_counter()
    prob = build_problem(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        params, report = run_fit(cfg, prob)
    timings["fit"] = time.perf_counter() - t0
    summary["fit"] = {"satisfied": report.satisfied, "M": report.M, "M_y": report.M_y,
                      "residuals": report.residuals,
                      "warnings": [str(c.message) for c in caught]}
    if "fit" in want:
        _write_fit(w, params, report)
        say(f"fit: M={report.M} M_y={report.M_y} thresholds "
            f"{'met' if report.satisfied else 'not met'}")
        for name, r in report.residuals.items():
            say(f"  {name:6s} residual {fmt(r)}")
    if cfg.fit.adaptive and not report.satisfied:
        say("fit: accuracy thresholds unreachable within the order cap")
        code = EXIT_NUMERICAL

    gains = None
    if want & {"gains", "simulate"}:
        t0 = time.perf_counter()
        gains = run_gains(cfg, params, prob.ode)
        timings["gains"] = time.perf_counter() - t0
        summary["gains"] = {"spectral_abscissa": gains.gain.spectral_abscissa,
                            "projection_error": gains.injection.projection_error}
        if "gains" in want:
            _write_gains(w, gains)
            say(f"gains: |L|max={fmt(np.max(np.abs(gains.gain.L)))} closed-loop abscissa "
                f"{fmt(gains.gain.spectral_abscissa)}")

    if "certify" in want:
        t0 = time.perf_counter()
        rep = run_certify(cfg, params)
        timings["certify"] = time.perf_counter() - t0
        d = rep.to_dict()
        w.yaml("certificate.yaml", d)
        summary["certify"] = {k: d[k] for k in ("condition_met", "margin", "delta", "rhs", "M_G")}
        say(f"certify: condition {'met' if rep.condition_met else 'not met'}")
        for k in ("M_G1", "M_G2", "M_RQ", "M_R", "m_lam", "m_mu", "delta", "rhs", "margin"):
            v = d[k]
            say(f"  {k:6s} {'n/a' if v is None else fmt(v)}")
        if rep.reason:
            say(f"  reason: {rep.reason}")

    if "simulate" in want:
        t0 = time.perf_counter()
        sim = run_simulate(cfg, prob, params, gains)
        timings["simulate"] = time.perf_counter() - t0
        ts = sim.series
        _write_series(w, ts)
        T = cfg.simulate.T
        tr, tail = ts.window_max(0, min(1.0, T)), ts.window_max(max(0.0, T - 1), T)
        summary["simulate"] = {"transient_max": tr, "tail_max": tail, "dt": ts.dt,
                               "projection_residual": sim.projection_residual}
        say(f"simulate: T={fmt(T)} dt={fmt(ts.dt)} max|err| first second {fmt(tr)}, "
            f"last second {fmt(tail)}")

    manifest = {"config": cfg.to_dict(), "versions": _versions(), "stage": stage,
                "timings_s": timings, "summary": summary,
                "files": dict(sorted(w.files.items()))}
    w.bytes("config.yaml", dump_config(cfg).encode())
    manifest["files"]["config.yaml"] = w.files["config.yaml"]
    w.bytes("manifest.yaml", yaml.safe_dump(clean(manifest), sort_keys=True).encode())
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contobs", description=(
        "Continuum observer for large-scale hyperbolic PDE networks driven by a "
        "harmonic ODE: fit, gain synthesis, stability certificate and simulation."))
    p.add_argument("command", nargs="?", choices=STAGES + ("show-config",),
                   help="pipeline stage to run (default: all)")
    p.add_argument("--config", type=Path, help="scenario YAML file")
    p.add_argument("--scenario", choices=KINDS, default="academic",
                   help="built-in scenario used when no --config is given")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--stage", choices=STAGES, help="same as the positional command")
    p.add_argument("--quiet", action="store_true", help="print errors only")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    say = (lambda *a, **k: None) if args.quiet else print
    try:
        cfg = load_config(args.config) if args.config else default_config(args.scenario).validate()
        if args.command == "show-config":
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        stage = args.stage or args.command or "all"
        out = args.out or Path(cfg.output_dir)
        return run_pipeline(cfg, stage, out, say)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionViolation as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
