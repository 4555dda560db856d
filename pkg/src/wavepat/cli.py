"""Command-line front end (``wavepat``).

Settings resolve in the order: built-in defaults, ``--config`` file, flags.
Exit codes: 0 success, 2 configuration or input error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .assembly import ProblemConfig, assemble_system
from .pat import (CFLViolation, forward_simulate, make_phantom, phantom_from_descriptor, reconstruct,
                  shape_from_dict, smiley)
from .solver import SolverError
from .studies import ALPHA_COLUMNS, DIMS_COLUMNS, RHO_COLUMNS, dims_table, study_alpha, study_rho

log = logging.getLogger("wavepat")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


@dataclass
class RunConfig:
    d: int = 2                   # spatial dimension
    level_t: int = 2             # temporal refinement level
    level_x: int = 2             # spatial refinement level
    T: float = 0.25              # final time
    alpha: float = 1.0           # regularization weight
    rho: float = 1.0             # augmentation weight
    degree: int = 2              # spline degree
    omega_s_lo: float = 0.25     # observation box (lo, hi)^d
    omega_s_hi: float = 0.75
    tol: float = 1e-8            # MINRES relative tolerance
    maxit: int = 20000           # MINRES iteration cap
    seed: int = 42               # random start for iteration studies
    stop: str = "error"          # stopping rule of the random-start studies
    out: str = ""                # output file or directory

    def problem(self) -> ProblemConfig:
        return ProblemConfig(d=self.d, level_t=self.level_t, level_x=self.level_x, T=self.T,
                             alpha=self.alpha, rho=self.rho, degree=self.degree,
                             omega_s=(self.omega_s_lo, self.omega_s_hi))


def _coerce(name: str, value):
    typ = {f.name: f.type for f in fields(RunConfig)}[name]
    conv = {"int": int, "float": float, "str": str}[typ]
    try:
        return conv(value)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {value!r} as {typ}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        names = {f.name for f in fields(RunConfig)}
        for k, v in io.read_config(args.config).items():
            if k == "level":
                values["level_t"] = values["level_x"] = v
            elif k in names:
                values[k] = v
            else:
                raise ValueError(f"{args.config}: unknown key {k!r}")
    if getattr(args, "level", None) is not None:
        values["level_t"] = values["level_x"] = args.level
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem")
    g.add_argument("--config", help="INI-style config file ([section] key = value)")
    g.add_argument("--d", type=int)
    g.add_argument("--level", type=int, help="set both --level-t and --level-x")
    g.add_argument("--level-t", dest="level_t", type=int)
    g.add_argument("--level-x", dest="level_x", type=int)
    g.add_argument("--T", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--maxit", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--stop", choices=["error", "residual"])
    g.add_argument("--out")
    g.add_argument("-v", "--verbose", action="store_true")


def _emit(columns, rows, cfg: dict, out: str) -> None:
    if out:
        io.write_csv(out, columns, rows, cfg)
        print(f"wrote {out}")
    else:
        widths = [max(len(c), *(len(io._fmt(r[i])) for r in rows)) for i, c in enumerate(columns)]
        print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
        for r in rows:
            print("  ".join(io._fmt(v).rjust(w) for v, w in zip(r, widths)))


def cmd_dims(args, cfg: RunConfig) -> int:
    rows = dims_table(cfg.d, args.levels)
    _emit(DIMS_COLUMNS, rows, {"d": cfg.d, "levels": args.levels}, cfg.out)
    return 0


def cmd_study_alpha(args, cfg: RunConfig) -> int:
    rows = study_alpha(cfg.d, args.levels, args.alphas, rho=cfg.rho, tol=cfg.tol, maxit=cfg.maxit,
                       seed=cfg.seed, stop=cfg.stop, kappa=not args.no_kappa)
    meta = dict(asdict(cfg), levels=args.levels, alphas=args.alphas)
    _emit(ALPHA_COLUMNS, rows, meta, cfg.out)
    return 0 if all(r[-1] for r in rows) else EXIT_SOLVER


def cmd_study_rho(args, cfg: RunConfig) -> int:
    level = args.level if args.level is not None else 5
    rows = study_rho(cfg.d, level, args.rhos, args.alphas, tol=cfg.tol, maxit=cfg.maxit,
                     seed=cfg.seed, stop=cfg.stop)
    meta = dict(asdict(cfg), level=level, rhos=args.rhos, alphas=args.alphas)
    _emit(RHO_COLUMNS, rows, meta, cfg.out)
    return 0 if all(r[-1] for r in rows) else EXIT_SOLVER


def cmd_export(args, cfg: RunConfig) -> int:
    system = assemble_system(cfg.problem())
    out = Path(cfg.out or ".")
    blocks = ["A", "B", "P_Lambda", "Q", "R", "V", "G_W"] if args.block == "all" else [args.block]
    comment = json.dumps(asdict(cfg))
    for b in blocks:
        path = out / f"{b}.mtx"
        io.write_matrix(path, getattr(system, b), comment)
        print(f"wrote {path}")
    return 0


def cmd_phantom(args, cfg: RunConfig) -> int:
    if args.shapes:
        with open(args.shapes) as fh:
            try:
                shapes = [shape_from_dict(s) for s in json.load(fh)]
            except (json.JSONDecodeError, TypeError, KeyError) as e:
                raise io.FormatError(f"{args.shapes}: {e}") from None
        name = Path(args.shapes).stem
    else:
        shapes, name = smiley(), "smiley"
    ph = make_phantom(shapes, level=args.phantom_level, name=name)
    out = Path(cfg.out or f"{name}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(ph.descriptor(), indent=2))
    print(f"wrote {out}")
    return 0


def _load_phantom(path):
    try:
        desc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise io.FormatError(f"{path}:{e.lineno}: {e.msg}") from None
    return phantom_from_descriptor(desc)


def cmd_forward(args, cfg: RunConfig) -> int:
    ph = _load_phantom(args.phantom)
    trace = forward_simulate(ph, spatial_level=args.fwd_level, T=cfg.T, n_steps=args.steps,
                             omega_s=(cfg.omega_s_lo, cfg.omega_s_hi))
    out = cfg.out or "trace.npz"
    io.save_trace(out, trace)
    print(f"wrote {out}")
    return 0


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    trace = io.load_trace(args.trace)
    phantom = _load_phantom(args.phantom) if args.phantom else None
    if phantom is None and trace.phantom.get("shapes") is not None and not args.no_metrics:
        phantom = phantom_from_descriptor(trace.phantom)
    res = reconstruct(cfg.problem(), trace, phantom, tol=cfg.tol, maxit=cfg.maxit)
    out = Path(cfg.out or "result")
    out.mkdir(parents=True, exist_ok=True)
    meta = asdict(cfg)
    io.write_field(out / "u_rec.csv", res.u_rec, {"config": meta})
    hist = res.report.residual_history
    io.write_csv(out / "residuals.csv", ["iteration", "residual"], list(enumerate(hist)), meta)
    summary = {"config": meta, "iterations": res.report.iterations, "converged": res.report.converged,
               "final_relative_residual": res.report.final_relative_residual}
    if res.metrics is not None:
        summary.update(rel_l2=res.metrics.rel_l2, rel_h1_semi=res.metrics.rel_h1_semi,
                       metrics_relative=res.metrics.relative)
    (out / "metrics.json").write_text(json.dumps(summary, indent=2))
    io.write_pgm(out / "u_rec.pgm", io.render_field(res.u_rec, args.grid))
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}))
    return 0 if res.report.converged else EXIT_SOLVER


def cmd_render(args, cfg: RunConfig) -> int:
    field = io.read_field(args.field)
    out = cfg.out or str(Path(args.field).with_suffix(".pgm"))
    io.write_pgm(out, io.render_field(field, args.grid), args.vmin, args.vmax, args.maxval)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavepat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dims", help="DoF counts per refinement level")
    _common(s)
    s.add_argument("--levels", type=int, nargs="+", default=[2, 3, 4, 5])
    s.set_defaults(func=cmd_dims)

    s = sub.add_parser("study-alpha", help="condition numbers and MINRES iterations over alpha")
    _common(s)
    s.add_argument("--levels", type=int, nargs="+", default=[2, 3])
    s.add_argument("--alphas", type=float, nargs="+", default=[1.0, 1e-2, 1e-5, 1e-7])
    s.add_argument("--no-kappa", action="store_true", help="skip the dense eigensolve")
    s.set_defaults(func=cmd_study_alpha)

    s = sub.add_parser("study-rho", help="MINRES iterations over rho (default level 5)")
    _common(s)
    s.add_argument("--rhos", type=float, nargs="+", default=[1.0, 1e-2, 1e-5])
    s.add_argument("--alphas", type=float, nargs="+", default=[1.0])
    s.set_defaults(func=cmd_study_rho)

    s = sub.add_parser("export", help="write system blocks in MatrixMarket format")
    _common(s)
    s.add_argument("--block", default="all", choices=["all", "A", "B", "P_Lambda", "Q", "R", "V", "G_W"])
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("phantom", help="write a phantom descriptor (smiley by default)")
    _common(s)
    s.add_argument("--shapes", help="JSON list of shapes (disk, rect, annular_arc)")
    s.add_argument("--phantom-level", type=int, default=8)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("forward", help="simulate boundary data for a phantom")
    _common(s)
    s.add_argument("phantom")
    s.add_argument("--fwd-level", type=int, default=None, help="spatial level (default: phantom level)")
    s.add_argument("--steps", type=int, default=2**10)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("reconstruct", help="recover the initial field from a trace")
    _common(s)
    s.add_argument("trace")
    s.add_argument("--phantom", help="phantom descriptor for error metrics (default: from trace)")
    s.add_argument("--no-metrics", action="store_true")
    s.add_argument("--grid", type=int, default=512)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("render", help="render a spline field CSV to PGM")
    _common(s)
    s.add_argument("field")
    s.add_argument("--grid", type=int, default=512)
    s.add_argument("--vmin", type=float)
    s.add_argument("--vmax", type=float)
    s.add_argument("--maxval", type=int, default=255, choices=[255, 65535])
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command not in ("dims", "study-alpha", "study-rho"):
            cfg.problem()  # validate early
        return args.func(args, cfg)
    except (SolverError, np.linalg.LinAlgError) as e:
        print(f"wavepat: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError, CFLViolation) as e:
        print(f"wavepat: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
