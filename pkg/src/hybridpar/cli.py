"""Command-line front end.

    hybridpar plan --model M.json --cluster C.json [--out plan.json]
    hybridpar enumerate --group-size 8 [--no-prune]
    hybridpar estimate --model M.json --cluster C.json --strategy tp:2,dp:4 --batch 8
    hybridpar sweep --model M.json --cluster C.json --budgets 8,12,16,20
    hybridpar oracle-plan --model M.json --cluster C.json --batches 2,4

Exit codes: 0 success, 1 bad input, 2 no plan fits in memory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .cluster import GiB, group_bandwidth, load_cluster
from .cost_model import CostProfile, estimate_layer_cost, estimate_memory, load_profile
from .errors import InfeasibleError, ValidationError
from .model_ir import load_model
from .oracle import exhaustive_plan
from .planner import GUIDELINES, ParallelPlan, optimize
from .strategy import enumerate_strategies, parse_strategy

EXIT_OK, EXIT_CONFIG, EXIT_OOM = 0, 1, 2

log = logging.getLogger("hybridpar")


@dataclass
class RunConfig:
    subcommand: str
    model_path: Optional[Path] = None
    cluster_path: Optional[Path] = None
    profile_path: Optional[Path] = None
    batch_candidates: Optional[list[int]] = None
    pp_guideline: str = "layers"
    output_path: Optional[Path] = None


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _threads() -> Optional[int]:
    raw = os.environ.get("PLANNER_THREADS")
    if not raw:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"PLANNER_THREADS must be an integer, got {raw!r}") from None


def _load_inputs(cfg: RunConfig):
    if cfg.model_path is None or cfg.cluster_path is None:
        raise ValidationError("--model and --cluster are required")
    for p in (cfg.model_path, cfg.cluster_path, cfg.profile_path):
        if p is not None and not p.is_file():
            raise ValidationError(f"{p}: no such file")
    model = load_model(cfg.model_path)
    cluster = load_cluster(cfg.cluster_path)
    profile = load_profile(cfg.profile_path) if cfg.profile_path else CostProfile()
    return model, cluster, profile


def strategy_ribbon(strategies) -> str:
    """Run-length summary of consecutive layers, e.g. ``[tp:2,dp:4] x8 | [sdp:8] x24``."""
    runs = []
    for s in strategies:
        label = str(s) or "single"
        if runs and runs[-1][0] == label:
            runs[-1][1] += 1
        else:
            runs.append([label, 1])
    return " | ".join(f"[{label}] x{count}" for label, count in runs)


def plan_summary(plan: ParallelPlan) -> str:
    lines = [
        f"batch size {plan.global_batch_size}, PP degree {plan.pp_degree} "
        f"({plan.group_size} devices per stage), {plan.micro_batch_count} micro-batches",
        f"iteration {plan.iteration_time_ms:.3f} ms, "
        f"throughput {plan.throughput_samples_per_s:.3f} samples/s",
    ]
    for i, stage in enumerate(plan.stages):
        start, end = stage.layer_range
        lines.append(f"  stage {i} layers [{start}, {end}): {strategy_ribbon(stage.per_layer_strategy)}"
                     f"  peak {stage.peak_memory_bytes / GiB:.2f} GiB")
    return "\n".join(lines)


def _write_or_print(text: str, path: Optional[Path]):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _emit_plan(plan: ParallelPlan, cfg: RunConfig):
    print(plan_summary(plan))
    payload = json.dumps(plan.to_dict(), indent=2) + "\n"
    if cfg.output_path is not None:
        cfg.output_path.write_text(payload)
        print(f"plan written to {cfg.output_path}")
    else:
        sys.stdout.write(payload)


def cmd_plan(cfg: RunConfig, use_oracle: bool = False) -> int:
    model, cluster, profile = _load_inputs(cfg)
    try:
        if use_oracle:
            if not cfg.batch_candidates:
                raise ValidationError("oracle-plan needs an explicit --batches list")
            plan = exhaustive_plan(model, cluster, profile, cfg.batch_candidates, cfg.pp_guideline)
        else:
            plan = optimize(model, cluster, profile, cfg.batch_candidates, cfg.pp_guideline,
                            max_workers=_threads())
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        if exc.diagnostic != str(exc):
            print(f"  {exc.diagnostic}", file=sys.stderr)
        return EXIT_OOM
    _emit_plan(plan, cfg)
    return EXIT_OK


def cmd_enumerate(group_size: int, prune: bool, output_path: Optional[Path] = None) -> int:
    sset = enumerate_strategies(group_size, prune=prune)
    _write_or_print(json.dumps(sset.to_dict()) + "\n", output_path)
    return EXIT_OK


ESTIMATE_COLUMNS = ["layer", "strategy", "forward_ms", "backward_ms", "comm_ms_unoverlapped",
                    "total_ms", "params_bytes", "grads_bytes", "optimizer_bytes",
                    "activation_bytes", "memory_total_bytes"]


def cmd_estimate(cfg: RunConfig, strategy_text: str, batch: int,
                 csv_path: Optional[Path] = None) -> int:
    model, cluster, profile = _load_inputs(cfg)
    strategy = parse_strategy(strategy_text)
    bw = group_bandwidth(cluster, strategy.group_size)
    rows = []
    for layer in model.layers:
        cost = estimate_layer_cost(layer, strategy, batch, bw, profile)
        mem = estimate_memory(layer, strategy, batch, profile)
        rows.append([layer.id, str(strategy), cost.forward_ms, cost.backward_ms,
                     cost.comm_ms_unoverlapped, cost.total_ms, mem.params_bytes, mem.grads_bytes,
                     mem.optimizer_bytes, mem.activation_bytes, mem.total])

    print(f"strategy [{strategy or 'single'}] on {strategy.group_size} device(s), "
          f"batch {batch}, bandwidth {bw} GB/s")
    print(f"{'layer':>5} {'fwd ms':>10} {'bwd ms':>10} {'comm ms':>10} {'total ms':>10} {'mem MiB':>10}")
    for r in rows:
        print(f"{r[0]:>5} {r[2]:>10.3f} {r[3]:>10.3f} {r[4]:>10.3f} {r[5]:>10.3f} {r[10] / (1 << 20):>10.1f}")
    print(f"{'sum':>5} {sum(r[2] for r in rows):>10.3f} {sum(r[3] for r in rows):>10.3f} "
          f"{sum(r[4] for r in rows):>10.3f} {sum(r[5] for r in rows):>10.3f} "
          f"{sum(r[10] for r in rows) / (1 << 20):>10.1f}")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ESTIMATE_COLUMNS)
    writer.writerows(rows)
    if csv_path is None:
        print()
        sys.stdout.write(buf.getvalue())
    else:
        Path(csv_path).write_text(buf.getvalue())
    return EXIT_OK


SWEEP_COLUMNS = ["budget_gb", "batch_size", "pp_degree", "micro_batches", "iteration_time_ms",
                 "throughput"]


def cmd_sweep(cfg: RunConfig, budgets_gb: list[float]) -> int:
    if not budgets_gb:
        raise ValidationError("--budgets needs at least one value")
    model, cluster, profile = _load_inputs(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for gb in budgets_gb:
        budget = int(gb * GiB)
        try:
            plan = optimize(model, cluster.with_budget(budget), profile, cfg.batch_candidates,
                            cfg.pp_guideline, max_workers=_threads())
        except InfeasibleError:
            writer.writerow([gb, "", "", "", "", 0.0])
            continue
        writer.writerow([gb, plan.global_batch_size, plan.pp_degree, plan.micro_batch_count,
                         plan.iteration_time_ms, plan.throughput_samples_per_s])
    _write_or_print(buf.getvalue(), cfg.output_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridpar",
                                     description="Hybrid data/tensor/pipeline parallelism planner.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def inputs(p, batches=True):
        p.add_argument("--model", type=Path)
        p.add_argument("--cluster", type=Path)
        p.add_argument("--profile", type=Path)
        if batches:
            p.add_argument("--batches", type=_int_list,
                           help="comma-separated ascending batch sizes (default 8, 16, 24, ...)")
            p.add_argument("--pp-guideline", choices=GUIDELINES, default="layers")
        p.add_argument("--out", type=Path)

    inputs(sub.add_parser("plan", help="search the best parallel plan"))
    inputs(sub.add_parser("oracle-plan", help="brute-force plan search (small models only)"))

    p = sub.add_parser("enumerate", help="dump the strategy set for a device group")
    p.add_argument("--group-size", type=int, required=True)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("estimate", help="per-layer cost and memory of one strategy")
    inputs(p, batches=False)
    p.add_argument("--strategy", default="", help='e.g. "tp:2,dp:4"; empty for one device')
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--csv", type=Path)

    p = sub.add_parser("sweep", help="best throughput for a list of memory budgets")
    inputs(p)
    p.add_argument("--budgets", type=_float_list, required=True, help="GB, comma-separated")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = RunConfig(
        subcommand=args.subcommand,
        model_path=getattr(args, "model", None),
        cluster_path=getattr(args, "cluster", None),
        profile_path=getattr(args, "profile", None),
        batch_candidates=getattr(args, "batches", None),
        pp_guideline=getattr(args, "pp_guideline", "layers"),
        output_path=getattr(args, "out", None),
    )
    try:
        if args.subcommand == "plan":
            return cmd_plan(cfg)
        if args.subcommand == "oracle-plan":
            return cmd_plan(cfg, use_oracle=True)
        if args.subcommand == "enumerate":
            return cmd_enumerate(args.group_size, not args.no_prune, cfg.output_path)
        if args.subcommand == "estimate":
            return cmd_estimate(cfg, args.strategy, args.batch, args.csv)
        if args.subcommand == "sweep":
            return cmd_sweep(cfg, args.budgets)
    except (ValidationError, InfeasibleError, OSError) as exc:
        # an infeasible batch split in `estimate` is a usage error, not an OOM plan
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
