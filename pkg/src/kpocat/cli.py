"""Command-line entry point: ``kpocat <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from . import basis, experiments

_UNITS = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3, "T": 1024**4}


def parse_bytes(text: str) -> int:
    """``"8G"``, ``"512M"``, ``"1.5GiB"`` or a plain byte count."""
    m = re.fullmatch(r"\s*([0-9.]+)\s*([KMGT]?)(?:i?B)?\s*", text, re.IGNORECASE)
    if not m:
        raise argparse.ArgumentTypeError(f"cannot parse memory size {text!r}")
    return int(float(m.group(1)) * _UNITS[m.group(2).upper()])


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--J", type=int, help="number of output bins (multiple of 5)")
    p.add_argument("--L", type=int, help="maximum number of output photons")
    p.add_argument("--A-p", dest="A_p", type=float, help="pump drive amplitude")
    p.add_argument("--B", type=float, help="LPF bandwidth in units of K")
    p.add_argument("--kappa-ex", dest="kappa_ex", type=float, help="external decay rate in units of K")
    p.add_argument("--T", type=float, help="simulated time in units of 1/K")
    p.add_argument("--shortcut", choices=["none", "eq12", "ref15"], help="counterdiabatic pump term")
    p.add_argument("--substep", dest="substep_target", type=float,
                   help="target RK4 step in units of 1/K (default 0.025)")
    p.add_argument("--paper-faithful", dest="full_truncation", action="store_true",
                   help="use L=6 with the full KPO cutoffs (tens of GiB at J=80)")
    p.add_argument("--memory-budget", type=parse_bytes, default=basis.DEFAULT_MEMORY_BUDGET,
                   help="refuse to allocate more than this for one state copy (default 8G)")
    p.add_argument("--allow-over-budget", action="store_true",
                   help="warn instead of refusing when the budget is exceeded")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kpocat", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t1 = sub.add_parser("table1", help="run one of the four reference settings")
    t1.add_argument("variant", choices=experiments.VARIANTS)
    _sim_flags(t1)
    t1.add_argument("--out-dir", type=Path, help="directory for params/summary/CSV outputs")
    t1.add_argument("--psd", action="store_true", help="project rho onto the PSD cone before fitting")

    js = sub.add_parser("jsweep", help="n_out versus J and the n0 - b/J fit")
    js.add_argument("--variant", choices=experiments.VARIANTS, default="a")
    js.add_argument("--Js", type=int, nargs="+", default=[20, 40, 60, 80])
    _sim_flags(js)
    js.add_argument("--out-dir", type=Path)

    ck = sub.add_parser("closed-kpo", help="closed KPO under a linear pump ramp")
    ck.add_argument("mode", choices=["none", "eq12", "ref15"])
    ck.add_argument("--ramp-time", type=float, default=10.0)
    ck.add_argument("--p-final", type=float, default=2.0)
    ck.add_argument("--cutoff", type=int, default=30)
    ck.add_argument("--dt", type=float, default=1e-3)
    ck.add_argument("--out-dir", type=Path)

    le = sub.add_parser("loss-estimate", help="internal-loss bound and quality factors")
    le.add_argument("--K-hz", type=float, default=10e6, help="K/2pi in Hz")
    le.add_argument("--omega-hz", type=float, default=10e9, help="omega_KPO/2pi in Hz")
    le.add_argument("--kappa-ex", dest="kappa_ex", type=float, default=0.2, help="kappa_ex/K")
    le.add_argument("--K-I-t", dest="K_I_t", type=float, default=10.0, help="K * I_t")
    g = le.add_mutually_exclusive_group()
    g.add_argument("--kappa-in", type=float, help="kappa_in/K")
    g.add_argument("--Q-in", type=float)
    g.add_argument("--loss-bound", type=float, help="target kappa_in * I_t (default 0.1)")
    return ap


def _overrides(args) -> dict:
    keys = ("J", "L", "A_p", "B", "kappa_ex", "T", "shortcut", "substep_target")
    ov = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    ov["memory_budget"] = args.memory_budget
    ov["allow_over_budget"] = args.allow_over_budget
    return ov


def _print_memory(params) -> None:
    lay = basis.layout(params.sector_spec, params.memory_budget, allow_over_budget=True)
    gib = lay.memory_bytes / 1024**3
    # the bin propagator updates the state in place, so one copy dominates
    print(f"state: J={params.J} L={params.L} cutoffs={params.kpo_cutoffs} "
          f"amplitudes={lay.total:,} memory={gib:.2f} GiB",
          file=sys.stderr, flush=True)


def cmd_table1(args) -> int:
    params = experiments.variant_params(args.variant, _overrides(args), args.full_truncation)
    _print_memory(params)
    basis.layout(params.sector_spec, params.memory_budget, params.allow_over_budget)
    res = experiments.run_table1(args.variant, _overrides(args), args.out_dir,
                                 full_truncation=args.full_truncation, psd=args.psd)
    print(json.dumps(experiments._jsonable(res.summary()), indent=2, sort_keys=True))
    return 0


def cmd_jsweep(args) -> int:
    ov = _overrides(args)
    ov.pop("J", None)
    fit, rows = experiments.run_j_sweep(args.variant, tuple(args.Js), ov)
    out = {"runs": rows, "fit": fit.to_dict()}
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "jsweep.json").write_text(json.dumps(out, indent=2))
    print(json.dumps(out, indent=2))
    return 0


def cmd_closed_kpo(args) -> int:
    res = experiments.run_closed_kpo(args.mode, args.cutoff, args.ramp_time, args.p_final, dt=args.dt)
    out = {"mode": res.mode, "final_fidelity": res.final_fidelity, "final_n": float(res.n[-1]),
           "oscillation": res.oscillation}
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        res.to_csv(args.out_dir / f"closed_kpo_{res.mode}.csv")
        (args.out_dir / "summary.json").write_text(json.dumps(out, indent=2))
    print(json.dumps(out, indent=2))
    return 0


def cmd_loss(args) -> int:
    bound = args.loss_bound
    if args.kappa_in is None and args.Q_in is None and bound is None:
        bound = 0.1
    est = experiments.estimate_loss(args.K_hz, args.omega_hz, args.kappa_ex, args.K_I_t,
                                    kappa_in_over_K=args.kappa_in, Q_in=args.Q_in, loss_bound=bound)
    print(json.dumps(est.to_dict(), indent=2))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"table1": cmd_table1, "jsweep": cmd_jsweep, "closed-kpo": cmd_closed_kpo,
                "loss-estimate": cmd_loss}
    try:
        return handlers[args.command](args)
    except basis.MemoryBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
