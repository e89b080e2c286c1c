"""Command line entry point: ``ksdelta {run,sweep,blowup,bumps} <config>``.

Exit codes: 0 ok, 2 configuration error, 3 breakdown during ``run``,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .config import Config, ConfigError, load_config
from .harness import SweepSpec, blowup_probe, bump_study, delta_sweep, run
from .solver import LinearSolveError

EXIT_OK, EXIT_CONFIG, EXIT_BREAKDOWN, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULT_BUMP_DELTAS = (1e-2, 5e-3, 2e-3, 1e-3, 5e-4)

log = logging.getLogger("ksdelta")


def _deltas(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse deltas {text!r}") from None
    if any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("deltas must be positive")
    return vals


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    path = Path(p)
    return path if path.is_absolute() else base / path


def _check_writable(*paths: Path | None, dirs: tuple[Path | None, ...] = ()) -> None:
    for d in dirs:
        if d is not None:
            try:
                d.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigError(f"outputs: cannot create directory {d}: {exc}") from None
    for p in paths:
        if p is None:
            continue
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"outputs: cannot create directory for {p}: {exc}") from None


def _fit_path(cfg: Config, base: Path, summary: Path) -> Path:
    if cfg.outputs.fit_csv:
        return _resolve(base, cfg.outputs.fit_csv)
    return summary.with_name(summary.stem + "_fit.csv")


def cmd_run(cfg: Config, base: Path, args) -> int:
    diag = _resolve(base, cfg.outputs.diag_csv)
    snapdir = _resolve(base, cfg.outputs.snapshot_dir)
    _check_writable(diag, dirs=(snapdir,))
    record = cfg.outputs.record_times or []
    res = run(cfg.to_params(), cfg.to_init(), cfg.time.T, grid=cfg.to_grid(), record_times=record,
              scheme=cfg.scheme, ctrl=cfg.to_controller(), newton=cfg.to_newton())
    io.write_diag_csv(diag, res.records)
    if snapdir is not None:
        for k, st in enumerate(res.snapshots):
            io.write_snapshot(snapdir / io.snapshot_name("rho", k), st.rho, st.t)
            io.write_snapshot(snapdir / io.snapshot_name("c", k), st.c, st.t)
    if res.broke_down:
        print(f"breakdown at t={res.final.t:.17g}: {res.message}", file=sys.stderr)
        return EXIT_BREAKDOWN
    return EXIT_OK


def cmd_sweep(cfg: Config, base: Path, args) -> int:
    if args.deltas is None or len(set(args.deltas)) < 2:
        raise ConfigError("--deltas: at least two deltas required")
    summary = _resolve(base, cfg.outputs.summary_csv)
    fit = _fit_path(cfg, base, summary)
    _check_writable(summary, fit)
    rec = cfg.outputs.record_times
    spec = SweepSpec(
        deltas=tuple(args.deltas), base=cfg.to_params(), T=cfg.time.T, grid=cfg.to_grid(),
        dt=cfg.time.dt, init=cfg.to_init(), scheme=cfg.scheme,
        record_times=tuple(rec) if rec else None, error_norm=cfg.sweep.error_norm,
        newton=cfg.to_newton(),
    )
    res = delta_sweep(spec, n_jobs=cfg.sweep.n_jobs)
    io.write_table(summary, ("delta", "error", "valid"), zip(res.deltas, res.errors, res.valid))
    io.write_table(fit, ("fitted_exponent", "fit_r2", "poor_fit", "error_norm"),
                   [(res.fitted_exponent, res.fit_r2, res.poor_fit, spec.error_norm)])
    return EXIT_OK


def cmd_blowup(cfg: Config, base: Path, args) -> int:
    summary = _resolve(base, cfg.outputs.summary_csv)
    _check_writable(summary)
    rep = blowup_probe(cfg.to_params(), cfg.to_init(), cfg.time.T, cfg.to_grid(),
                       scheme=cfg.scheme, ctrl=cfg.to_controller(), newton=cfg.to_newton())
    io.write_table(
        summary,
        ("alpha", "delta", "T_break", "final_dt", "final_linf", "breakdown"),
        [(rep.alpha, rep.delta, rep.T_break, rep.final_dt, rep.final_linf, rep.breakdown)],
    )
    return EXIT_OK


def cmd_bumps(cfg: Config, base: Path, args) -> int:
    deltas = args.deltas or list(DEFAULT_BUMP_DELTAS)
    if len(set(deltas)) < 2:
        raise ConfigError("--deltas: at least two deltas required")
    if cfg.grid.kind != "radial":
        raise ConfigError("grid.kind: bumps runs on a radial grid")
    if cfg.params.c_boundary != "dirichlet0":
        raise ConfigError("params.c_boundary: bumps needs dirichlet0")
    summary = _resolve(base, cfg.outputs.summary_csv)
    fit = _fit_path(cfg, base, summary)
    _check_writable(summary, fit)
    b = cfg.bumps
    ctrl = cfg.to_controller()
    rep = bump_study(deltas, cfg.to_params(), cfg.to_grid(), init=cfg.to_init(), scheme=cfg.scheme,
                     ctrl=ctrl, newton=cfg.to_newton(), level=b.level, steady_tol=b.steady_tol,
                     T_max=b.T_max, n_jobs=b.n_jobs)
    io.write_table(
        summary,
        ("delta", "radius", "rho_max", "t_steady", "steady_residual", "converged"),
        [(r.delta, r.radius, r.rho_max, r.t_steady, r.steady_residual, r.converged) for r in rep.rows],
    )
    io.write_table(
        fit,
        ("a", "a_r2", "b", "b_r2", "level", "poor_fit", "radius_interpolation"),
        [(rep.a, rep.a_r2, rep.b, rep.b_r2, rep.level, rep.poor_fit, "linear")],
    )
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "blowup": cmd_blowup, "bumps": cmd_bumps}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksdelta", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("run", "single simulation; writes diagnostics CSV and snapshots"),
        ("sweep", "delta sweep against the delta=0 reference"),
        ("blowup", "run until the step controller breaks down"),
        ("bumps", "steady bump radius/height scaling in delta"),
    ]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="JSON configuration file")
        if name in ("sweep", "bumps"):
            sp.add_argument("--deltas", type=_deltas, default=None, help="comma-separated list")
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = Path(args.config)
    try:
        cfg = load_config(path)
        return COMMANDS[args.command](cfg, path.resolve().parent, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LinearSolveError, RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
