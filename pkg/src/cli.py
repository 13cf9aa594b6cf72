"""Command-line surface.

Exit codes: 0 success, 2 usage / configuration errors, 3 runtime errors
(including training divergence).  Results go to stdout or ``--out``; logs go
to stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from src.base_selection import (
    STRATEGIES, BaseIndexSet, EnergyProfile, lhe_profile_step, select,
)
from src.errors import ConfigError, LbpError
from src.flops import flops_lora, flops_table1
from src.harness import (
    low_frequency_signal, run_experiment, run_sweep, save_weights,
)
from src.helpers import _ensure_dir, setup_logging, write_csv, write_json
from src.lbp import LbpWhtMode, LinearLayerState, exact_backward, gradient_error, lbp_wht_backward
from src.models import load_config, sweep_from_dict
from src.models.config import config_from_dict
from src.tensor_core import Rng, load_tensor, save_tensor
from src.wht import basis_matrix, build_flat_bases, make_plan, project, reverse_project, spectrum

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("sweep values must be positive integers")
    return values


def _plan_for(rows, order, length=None):
    return make_plan(length or rows, order)


def _selection(args, plan):
    if getattr(args, "selection", None):
        with open(args.selection, "r", encoding="utf-8") as f:
            return BaseIndexSet.from_json(f.read())
    return select(args.strategy, args.param, plan.n)


# -- commands ----------------------------------------------------------------
def cmd_transform(args):
    x = load_tensor(args.input)
    plan = _plan_for(x.shape[0], args.order, args.len)
    bases = _selection(args, plan)
    coeffs = project(x, bases, plan, method=args.method)
    out = coeffs if args.mode == "project" else reverse_project(coeffs, bases, plan, method=args.method)
    save_tensor(out, args.out)
    print(f"{args.mode}: {x.shape[0]}x{x.shape[1]} -> {out.shape[0]}x{out.shape[1]} "
          f"(order {plan.n}, rank {bases.rank}) written to {args.out}")
    return EXIT_OK


def cmd_bases(args):
    plan = make_plan(args.order * args.order, args.order)
    bases = build_flat_bases(plan)
    if args.out:
        save_tensor(basis_matrix(bases, plan), args.out)
        print(f"wrote {len(bases)} flattened bases ({plan.padded_len}x{len(bases)}) to {args.out}")
        return EXIT_OK
    for b in bases:
        print(f"B[{b.i},{b.j}]")
        for row in b.values.reshape(plan.n, plan.n):
            print("  " + " ".join("+" if v > 0 else "-" for v in row))
    return EXIT_OK


def cmd_select(args):
    profile = None
    if args.strategy == "lhe":
        if not args.profile:
            raise ConfigError("lhe selection needs at least one --profile tensor")
        steps = [load_tensor(p) for p in args.profile]
        plan = _plan_for(steps[0].shape[0], args.order, args.len)
        profile = EnergyProfile(plan.n)
        for g_y in steps:
            lhe_profile_step(profile, g_y, plan)
        n = plan.n
    else:
        if args.order is None:
            raise ConfigError(f"--order is required for strategy {args.strategy}")
        n = args.order
    sel = select(args.strategy, args.param, n, profile=profile)
    text = sel.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        print(f"wrote {args.strategy} selection of rank {sel.rank} to {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_flops(args):
    report = flops_table1(args.cx, args.cy, args.len, args.rank)
    data = report.to_dict()
    if args.lora_rank:
        data["lora"] = flops_lora(args.cx, args.cy, args.len, args.lora_rank)
    if args.json:
        print(json.dumps(data, indent=2))
        return EXIT_OK
    print(f"C_x={args.cx} C_y={args.cy} L={args.len} r={args.rank}")
    rows = [
        ("Vanilla BP", report.vanilla_bp),
        ("Projection", report.projection),
        ("Low-rank MM", report.lowrank_mm),
        ("Reverse projection", report.reverse_projection),
        ("LBP-WHT total", report.total_lbp),
        ("Overhead", report.overhead),
    ]
    if args.lora_rank:
        rows.append((f"LoRA (rank {args.lora_rank})", data["lora"]))
    for name, value in rows:
        print(f"  {name:<20} {value:>16,d}  {value / 1e6:10.1f} MFLOPs")
    print(f"  {'Speedup':<20} {report.speedup:>16.3f}x")
    print(f"  {'Overhead / vanilla':<20} {report.overhead / report.vanilla_bp:>16.2%}")
    return EXIT_OK


def _instance(rng, args):
    if args.signal == "lowfreq":
        x = low_frequency_signal(rng.split(0), args.len, args.cx)
        g_y = low_frequency_signal(rng.split(1), args.len, args.cy)
    else:
        x = rng.split(0).normal((args.len, args.cx))
        g_y = rng.split(1).normal((args.len, args.cy))
    w = rng.split(2).normal((args.cy, args.cx), scale=1.0 / np.sqrt(args.cx))
    return x, g_y, w


def grad_error_sweep(args):
    """Mean relative gradient errors per swept parameter, as CSV-ready rows."""
    plan = make_plan(args.len, args.order)
    rng = Rng(args.seed)
    instances = [_instance(rng.split(k), args) for k in range(args.instances)]
    rows = []
    for param in args.sweep:
        errs_gx, errs_gw, rank = [], [], None
        for x, g_y, w in instances:
            profile = None
            if args.strategy == "lhe":
                profile = lhe_profile_step(EnergyProfile(plan.n), g_y, plan)
            bases = select(args.strategy, param, plan.n, profile=profile)
            rank = bases.rank
            state = LinearLayerState(w=w, mode=LbpWhtMode(bases, plan), cached_x=x)
            err = gradient_error(exact_backward(state, g_y), lbp_wht_backward(state, g_y))
            errs_gx.append(err.err_gx)
            errs_gw.append(err.err_gw)
        total = flops_table1(args.cx, args.cy, args.len, rank).total_lbp
        rows.append((rank, float(np.mean(errs_gx)), float(np.mean(errs_gw)), total / 1e6))
        log.info("%s-%d: rank %d err_gx %.3e err_gw %.3e", args.strategy, param, rank,
                 rows[-1][1], rows[-1][2])
    return rows


def cmd_grad_error(args):
    header = ("rank", "err_gx", "err_gw", "total_mflops")
    rows = grad_error_sweep(args)
    write_csv(args.out or sys.stdout, header, rows)
    return EXIT_OK


def cmd_spectrum(args):
    x = load_tensor(args.input)
    plan = _plan_for(x.shape[0], args.order, args.len)
    energy = spectrum(x, plan)
    header = ["i"] + [str(j) for j in range(plan.n)]
    rows = [[i] + [float(v) for v in energy[i]] for i in range(plan.n)]
    write_csv(args.out or sys.stdout, header, rows)
    return EXIT_OK


def _with_seed(data, seed):
    if seed is not None:
        data = dict(data)
        data["seed"] = seed
    return data


def cmd_train(args):
    cfg = config_from_dict(_with_seed(load_config(args.config), args.seed))
    model, tlog = run_experiment(cfg)
    out_dir = _ensure_dir(args.out_dir)
    tlog.write_csv(os.path.join(out_dir, "train_log.csv"))
    tlog.write_summary(os.path.join(out_dir, "summary.json"), cfg)
    if args.save_weights:
        save_weights(model, os.path.join(out_dir, "weights"))
    print(f"{tlog.label}: final eval_acc {tlog.final_eval_acc:.4f}, "
          f"{tlog.cum_flops / 1e6:.1f} backward MFLOPs, artifacts in {out_dir}")
    return EXIT_OK


def cmd_sweep(args):
    data = load_config(args.config)
    if isinstance(data, dict) and "base" in data:
        data = dict(data, base=_with_seed(data["base"], args.seed))
    sweep = sweep_from_dict(data)
    result = run_sweep(sweep)
    out_dir = _ensure_dir(args.out_dir)
    slope_by_label = {}
    for rows, slopes in ((result.lbp_rows(), result.slopes), (result.lora_rows(), result.lora_slopes)):
        ordered = sorted(rows, key=lambda r: r.cum_mflops)
        for row, slope in zip(ordered[1:], slopes):
            slope_by_label[row.label] = slope
    table = []
    for row in result.rows:
        row.log.write_csv(os.path.join(out_dir, f"{row.label}.csv"))
        table.append((row.label, row.rank, row.final_eval_acc, row.cum_mflops,
                      slope_by_label.get(row.label, "")))
    write_csv(os.path.join(out_dir, "sweep.csv"),
              ("label", "rank", "final_eval_acc", "cum_mflops", "marginal_acc_per_mflop"), table)
    write_json(os.path.join(out_dir, "sweep.json"), {
        "strategy": sweep.strategy,
        "params": list(sweep.params),
        "lora_ranks": list(sweep.lora_ranks),
        "runs": [r.log.summary() | {"rank": r.rank} for r in result.rows],
        "marginal_accuracy": result.slopes,
        "lora_marginal_accuracy": result.lora_slopes,
    })
    write_csv(sys.stdout, ("label", "rank", "final_eval_acc", "cum_mflops"),
              [t[:4] for t in table])
    return EXIT_OK


# -- parser ------------------------------------------------------------------
def _add_selection_flags(p, strategy_default="lp_l1"):
    p.add_argument("--strategy", choices=STRATEGIES, default=strategy_default)
    p.add_argument("--param", type=_positive_int, default=4,
                   help="r_l1 / r_inf for low-pass strategies, rank for lhe")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Low-rank backpropagation via Walsh-Hadamard transformation",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log INFO (-v) or DEBUG (-vv) to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="project or round-trip an LBPW tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=_positive_int)
    p.add_argument("--len", type=_positive_int, help="tokens per sample (default: all rows)")
    _add_selection_flags(p, strategy_default="full")
    p.add_argument("--selection", help="BaseIndexSet JSON overriding --strategy/--param")
    p.add_argument("--mode", choices=("project", "roundtrip"), default="project")
    p.add_argument("--method", choices=("fast", "naive"), default="fast")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("bases", help="print or dump the flattened 2D WHT bases")
    p.add_argument("--order", type=_positive_int, required=True)
    p.add_argument("--out", help="write the n^2 x n^2 base matrix as an LBPW tensor")
    p.set_defaults(func=cmd_bases)

    p = sub.add_parser("select", help="emit a base selection as JSON")
    _add_selection_flags(p)
    p.add_argument("--order", type=_positive_int)
    p.add_argument("--len", type=_positive_int)
    p.add_argument("--profile", nargs="+", help="g_y tensors profiled for lhe, one step each")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("flops", help="analytical backward FLOPs for one linear layer")
    p.add_argument("--cx", type=_positive_int, required=True)
    p.add_argument("--cy", type=_positive_int, required=True)
    p.add_argument("--len", type=_positive_int, required=True)
    p.add_argument("--rank", type=_positive_int, required=True)
    p.add_argument("--lora-rank", type=_positive_int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("grad-error", help="gradient error of LBP-WHT against exact BP")
    p.add_argument("--cx", type=_positive_int, required=True)
    p.add_argument("--cy", type=_positive_int, required=True)
    p.add_argument("--len", type=_positive_int, required=True)
    p.add_argument("--order", type=_positive_int)
    p.add_argument("--strategy", choices=STRATEGIES, default="lp_l1")
    p.add_argument("--sweep", type=_int_list, required=True, help="comma-separated parameters")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--instances", type=_positive_int, default=10)
    p.add_argument("--signal", choices=("white", "lowfreq"), default="white")
    p.add_argument("--out")
    p.set_defaults(func=cmd_grad_error)

    p = sub.add_parser("spectrum", help="n x n WHT energy map of a tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--order", type=_positive_int)
    p.add_argument("--len", type=_positive_int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("train", help="train the desk-scale model from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=os.path.join("runs", "train"))
    p.add_argument("--seed", type=int)
    p.add_argument("--save-weights", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="rank sweep against exact BP and LoRA")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=os.path.join("runs", "sweep"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LbpError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
