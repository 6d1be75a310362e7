"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 Picard non-convergence,
4 loss of positive definiteness, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import studies
from .config import KEYS, RunConfig, build_config, load_config, parse_pairs
from .diagnostics import LEDGER_COLUMNS, initial_energy
from .io import OutputError, write_csv, write_vtk
from .matfunc import DomainError
from .params import ConfigError
from .mesh import build_crisscross
from .mms import ErrorAccumulator, tensor, velocity
from .spaces import FESpaces
from .stepper import NonConvergence, PDViolation, Stepper, run

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_PD, EXIT_IO = 0, 2, 3, 4, 5
ERROR_COLUMNS = ("step", "t", "err_v_L2", "err_v_H1", "err_B_L2", "err_B_H1", "err_p_L2")

log = logging.getLogger("vefem")


def _range(text: str):
    a, sep, b = text.partition("..")
    try:
        lo = int(a)
        hi = int(b) if sep else lo
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a..b', got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return list(range(lo, hi + 1))


def _parser():
    ap = argparse.ArgumentParser(prog="vefem", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help=f"override a configuration key ({', '.join(KEYS)})")
    common.add_argument("--output-dir", help="directory for CSV/VTK output")
    common.add_argument("--quiet", action="store_true", help="no progress lines")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="single trajectory")
    p.add_argument("--k", type=int)
    p.add_argument("--l", type=int)
    p.add_argument("--vtk", choices=("none", "final", "all"))
    p.add_argument("--sources", choices=("on", "off"))

    p = sub.add_parser("convergence", parents=[common], help="temporal or spatial study")
    p.add_argument("--mode", choices=("temporal", "spatial"), required=True)
    p.add_argument("--k-range", type=_range, help="mesh levels a..b")
    p.add_argument("--l-range", type=_range, help="time levels a..b")

    p = sub.add_parser("stability", parents=[common], help="zero-source energy check")
    p.add_argument("--k", type=int)
    p.add_argument("--l", type=int)

    p = sub.add_parser("verify-lambda", parents=[common], help="chain-rule identity check")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    values = parse_pairs("\n".join(args.set))
    for key in ("k", "l", "vtk"):
        if getattr(args, key, None) is not None and args.command != "verify-lambda":
            values[key] = getattr(args, key)
    if getattr(args, "sources", None) is not None:
        values["sources"] = args.sources == "on"
    if args.output_dir is not None:
        values["output_dir"] = args.output_dir
    mode = {"convergence": f"convergence-{getattr(args, 'mode', '')}"}.get(args.command,
                                                                          args.command)
    values["mode"] = mode
    return build_config(values, cfg)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror or exc}") from None
    return out


def cmd_simulate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    params = cfg.resolved_params()
    spaces = FESpaces(build_crisscross(cfg.k))
    stepper = Stepper(spaces, params, cfg.solver,
                      studies.mms_sources(params) if cfg.sources else None)
    hooks = []
    if cfg.vtk == "all":
        def vtk_hook(state, prev):
            write_vtk(spaces.mesh, out / f"state_{state.n:05d}.vtk", state.v, state.p,
                      state.B, title=f"step {state.n} t={state.t:.6g}")
        hooks.append(vtk_hook)
    state0 = stepper.initial_state(lambda x: velocity(x, 0.0), lambda x: tensor(x, 0.0))
    c0 = initial_energy(spaces, state0.v, state0.B, params, lambda x: tensor(x, 0.0))
    log.info("initial energy: lumped %.12g, quadrature %.12g, min eig %.12g",
             c0["energy_lumped"], c0["energy_quadrature"], state0.min_eig_B)
    if cfg.vtk == "all":
        write_vtk(spaces.mesh, out / "state_00000.vtk", state0.v, state0.p, state0.B)
    errors = ErrorAccumulator(spaces, params.dt) if cfg.sources else None
    header = cfg.as_dict()
    try:
        res = run(stepper, state0, errors=errors, hooks=hooks)
    except (NonConvergence, PDViolation) as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            _write_ledger(out, partial.ledger, header, cfg.sources)
        raise
    _write_ledger(out, res.ledger, header, cfg.sources)
    if errors is not None:
        rows = [dict(zip(ERROR_COLUMNS, (i + 1,) + h)) for i, h in enumerate(errors.history)]
        write_csv(rows, out / "errors.csv", ERROR_COLUMNS, header)
        log.info("errors: %s", ", ".join(f"{k}={v:.6e}" for k, v in errors.summary().items()))
    if cfg.vtk == "final":
        f = res.final
        write_vtk(spaces.mesh, out / "final.vtk", f.v, f.p, f.B, title=f"t={f.t:.6g}")
    print(f"completed {len(res.ledger)} steps, mean Picard iterations "
          f"{np.mean(res.iterations):.3f}, min eigenvalue {min(res.min_eigs):.12g}")
    return EXIT_OK


def _write_ledger(out, ledger, header, sources):
    from .diagnostics import verify_step
    rows = []
    for row in ledger:
        status, margin = verify_step(row, sources_active=sources)
        rows.append(dict(row, verify=status, margin=margin))
    write_csv(rows, out / "energy.csv", LEDGER_COLUMNS + ("verify", "margin"), header)


def cmd_convergence(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    temporal = cfg.mode == "convergence-temporal"
    if temporal:
        ks = args.k_range or [5]
        ls = args.l_range or [3, 4, 5, 6]
        if len(ks) != 1:
            raise ConfigError("temporal mode fixes the mesh level: give a single k")
        levels = [(ks[0], l) for l in ls]
    else:
        ks = args.k_range or [3, 4, 5]
        ls = args.l_range or [7]
        if len(ls) != 1:
            raise ConfigError("spatial mode fixes the time level: give a single l")
        levels = [(k, ls[0]) for k in ks]
    name = "convergence_temporal.csv" if temporal else "convergence_spatial.csv"
    header = cfg.as_dict()
    header["levels"] = " ".join(f"{k}:{l}" for k, l in levels)
    rows = []

    def flush(row):
        rows.append(row)
        write_csv(rows, out / name, studies.CONVERGENCE_COLUMNS, header)

    studies.convergence_rows(levels, cfg.params, cfg.solver,
                             "temporal" if temporal else "spatial", on_row=flush)
    for row in rows:
        print(",".join(f"{row[c]}" for c in studies.CONVERGENCE_COLUMNS))
    return EXIT_OK


def cmd_stability(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stepper, state0, res, energies = studies.stability_run(cfg.k, cfg.l, cfg.params, cfg.solver)
    header = cfg.as_dict()
    write_csv(res.ledger, out / "stability.csv", LEDGER_COLUMNS + ("verify", "margin"), header)
    failed = [r["step"] for r in res.ledger if r["verify"] != "pass"]
    monotone = all(b <= a + 1e-8 * (1 + abs(a)) for a, b in zip(energies, energies[1:]))
    print(f"steps {len(res.ledger)}, inequality failures {len(failed)}, "
          f"energy non-increasing {monotone}, min eigenvalue {min(res.min_eigs):.12g}")
    return EXIT_OK


def cmd_verify_lambda(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    rows = studies.verify_lambda(args.k, args.trials, args.seed, cfg.params)
    header = dict(cfg.as_dict(), k=args.k, trials=args.trials, seed=args.seed)
    write_csv(rows, out / "verify_lambda.csv", ("trial", "functional", "scale", "bound", "passed"),
              header)
    worst = max(abs(r["functional"]) / r["bound"] for r in rows)
    print(f"trials {len(rows)}, passed {sum(r['passed'] for r in rows)}, "
          f"worst |functional|/bound {worst:.3e}")
    return EXIT_OK


def main(argv=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "convergence":
            return cmd_convergence(cfg, args)
        if args.command == "stability":
            return cmd_stability(cfg)
        return cmd_verify_lambda(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except (PDViolation, DomainError) as exc:
        print(f"positive definiteness lost: {exc}", file=sys.stderr)
        return EXIT_PD
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
