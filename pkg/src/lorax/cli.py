"""Experiment runner CLI: run scenarios, sweep settings, aggregate reports,
and account for parameters. Exit codes: 0 success, 2 configuration error,
3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .backbone import BackboneConfig, build_backbone
from .engine import Scenario, Strategy, StrategyKind, run_scenario
from .errors import EXIT_OK, EXIT_RUNTIME, ConfigurationError, LoraxError
from .lora import count_all, count_trainable, image_equivalent_params, init_adapter_set, params_as_images
from .persist import load_run, save_run

SWEEP_AXES = ("rank", "combo", "lambda", "budget")


def _parse_bool(value: str) -> bool:
    low = str(value).lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _load_scenario_doc(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"scenario file {path} is not valid JSON: line {e.lineno} column {e.colno}: {e.msg}"
        ) from None


def _apply_overrides(doc: dict, args) -> dict:
    doc = dict(doc)
    strategy = dict(doc.get("strategy") or {})
    if getattr(args, "strategy", None):
        # switching the strategy kind drops the file's strategy-specific
        # settings, which were tuned for the strategy written there
        if strategy.get("kind") not in (None, args.strategy):
            strategy = {}
        strategy["kind"] = args.strategy
    if getattr(args, "rank", None) is not None:
        strategy["rank"] = args.rank
    if getattr(args, "combo", None):
        strategy["combo"] = args.combo
    if getattr(args, "diversity_weight", None) is not None:
        strategy["diversity_weight"] = args.diversity_weight
    doc["strategy"] = strategy
    for key in ("budget", "seed", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if getattr(args, "allow_resize", None) is not None:
        doc["allow_resize"] = args.allow_resize
    return doc


def _resolve_run(doc: dict, base_dir: str | None):
    strategy_cfg = dict(doc.get("strategy") or {})
    if "kind" not in strategy_cfg:
        strategy_cfg["kind"] = "lorax"
    strategy = Strategy.from_dict(strategy_cfg)
    scenario_cfg = {k: v for k, v in doc.items() if k != "strategy"}
    scenario = Scenario.from_config(scenario_cfg, base_dir=base_dir)
    return scenario, strategy


def _execute_run(doc: dict, base_dir: str | None, out_dir: str) -> dict:
    scenario, strategy = _resolve_run(doc, base_dir)
    record = run_scenario(scenario, strategy)
    save_run(out_dir, record)
    return {
        "out": out_dir,
        "strategy": strategy.kind.value,
        "metrics": record.metrics,
        "trainable_params_per_task": record.trainable_params_per_task,
    }


def _pct(value) -> str:
    return "N/A" if value is None else f"{100.0 * value:.2f}"


def _report_rows(run_dirs) -> list[dict]:
    rows = []
    for d in run_dirs:
        run = load_run(d)
        cfg = run["config"]
        bb = cfg.get("backbone", {})
        met = run["metrics"]
        rows.append({
            "run": os.path.basename(os.path.normpath(d)),
            "strategy": (cfg.get("strategy") or {}).get("kind", "?"),
            "backbone": f"vit-d{bb.get('depth', '?')}-e{bb.get('embed_dim', '?')}",
            "AA": met.get("AA"),
            "AAF": met.get("AAF"),
            "BWT": met.get("BWT"),
            "trainable": max(run["params"]["trainable_params_per_task"] or [0]),
            "dir": d,
        })
    rows.sort(key=lambda r: (r["strategy"], r["run"]))
    return rows


def _format_table(rows) -> str:
    header = "| run | strategy | backbone | AA | AAF | BWT | trainable |"
    sep = "|---|---|---|---|---|---|---|"
    lines = [header, sep]
    for r in rows:
        lines.append(
            f"| {r['run']} | {r['strategy']} | {r['backbone']} | {_pct(r['AA'])} "
            f"| {_pct(r['AAF'])} | {_pct(r['BWT'])} | {r['trainable']} |"
        )
    return "\n".join(lines)


def cmd_run(args) -> int:
    doc = _apply_overrides(_load_scenario_doc(args.scenario), args)
    base_dir = os.path.dirname(os.path.abspath(args.scenario))
    name = doc.get("name", "run")
    strat = (doc.get("strategy") or {}).get("kind", "lorax")
    out = args.out or os.path.join("runs", f"{name}_{strat}_s{doc.get('seed', 0)}")
    summary = _execute_run(doc, base_dir, out)
    met = summary["metrics"]
    print(f"run complete: {out}")
    print(f"  strategy={summary['strategy']} AA={_pct(met['AA'])} AAF={_pct(met['AAF'])} "
          f"BWT={_pct(met.get('BWT'))}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _apply_overrides(_load_scenario_doc(args.scenario), args)
    base_dir = os.path.dirname(os.path.abspath(args.scenario))
    out_root = args.out or os.path.join("runs", f"sweep_{args.axis}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    run_dirs = []
    for raw in values:
        d = dict(doc)
        strategy = dict(d.get("strategy") or {})
        if args.axis == "rank":
            strategy["rank"] = int(raw)
        elif args.axis == "combo":
            strategy["combo"] = raw
        elif args.axis == "lambda":
            strategy["diversity_weight"] = float(raw)
        elif args.axis == "budget":
            d["budget"] = int(raw)
        else:
            raise ConfigurationError(f"unknown sweep axis {args.axis!r}; expected one of {SWEEP_AXES}")
        d["strategy"] = strategy
        out_dir = os.path.join(out_root, f"{args.axis}_{raw}")
        _execute_run(d, base_dir, out_dir)
        run_dirs.append(out_dir)
    rows = _report_rows(run_dirs)
    table = _format_table(rows)
    os.makedirs(out_root, exist_ok=True)
    with open(os.path.join(out_root, "report.md"), "w") as fh:
        fh.write(table + "\n")
    _write_rows_csv(os.path.join(out_root, "report.csv"), rows)
    print(table)
    return EXIT_OK


def _write_rows_csv(path: str, rows):
    with open(path, "w") as fh:
        fh.write("run,strategy,backbone,AA,AAF,BWT,trainable\n")
        for r in rows:
            fh.write(f"{r['run']},{r['strategy']},{r['backbone']},{_pct(r['AA'])},"
                     f"{_pct(r['AAF'])},{_pct(r['BWT'])},{r['trainable']}\n")


def cmd_report(args) -> int:
    rows = _report_rows(args.run_dirs)
    table = _format_table(rows)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.md"), "w") as fh:
            fh.write(table + "\n")
        _write_rows_csv(os.path.join(args.out, "report.csv"), rows)
        for r in rows:
            run = load_run(r["dir"])
            matrix = run["matrix"]
            long_path = os.path.join(args.out, f"{r['run']}_matrix_long.csv")
            with open(long_path, "w") as fh:
                fh.write("task,episode,accuracy\n")
                for i in range(matrix.n):
                    for j in range(i, matrix.n):
                        if matrix.defined(i, j):
                            fh.write(f"{i + 1},{j + 1},{matrix.value(i, j)!r}\n")
    return EXIT_OK


def cmd_params(args) -> int:
    config = BackboneConfig(
        image_size=args.image_size, patch_size=args.patch_size, channels=args.channels,
        depth=args.depth, embed_dim=args.embed_dim, heads=args.heads, seed=0,
    )
    backbone = build_backbone(config)
    adapters = init_adapter_set(backbone, args.combo, args.rank)
    backbone_params = count_all(backbone)
    adapter_params = count_trainable(adapters)
    sites = {
        s.site_id: {"shape": list(s.shape), "params": args.rank * (s.shape[0] + s.shape[1])}
        for s in backbone.list_sites(args.combo)
    }
    h, w, c = (int(x) for x in args.exemplar_image.split(","))
    n = args.tasks
    head_out = n * args.classes_per_task
    report = {
        "backbone": config.to_dict(),
        "rank": args.rank,
        "combo": args.combo,
        "backbone_params": backbone_params,
        "adapter_params_per_task": adapter_params,
        "adapter_sites": sites,
        "full_rank_params_per_task": backbone_params,
        "adapter_to_full_rank_ratio": adapter_params / backbone_params,
        "tasks": n,
        "total_params_after_n_tasks": {
            "lorax": backbone_params + n * adapter_params + head_out * (n * config.embed_dim) + head_out,
            "der": n * backbone_params + head_out * (n * config.embed_dim) + head_out,
            "finetune": backbone_params + head_out * config.embed_dim + head_out,
        },
        "exemplar_image": {"height": h, "width": w, "channels": c,
                           "params_per_image": image_equivalent_params(h, w, c)},
        "adapter_params_as_images": params_as_images(adapter_params, h, w, c),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorax", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario + strategy and persist the results")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--strategy", choices=[k.value for k in StrategyKind])
    run.add_argument("--rank", type=int)
    run.add_argument("--combo", choices=["v", "qk", "qkv", "all"])
    run.add_argument("--lambda", dest="diversity_weight", type=float)
    run.add_argument("--budget", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--out", help="output run directory")
    run.add_argument("--allow-resize", dest="allow_resize", type=_parse_bool, default=None)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one scenario across a grid of one setting")
    sweep.add_argument("--scenario", required=True)
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--strategy", choices=[k.value for k in StrategyKind])
    sweep.add_argument("--rank", type=int)
    sweep.add_argument("--combo", choices=["v", "qk", "qkv", "all"])
    sweep.add_argument("--lambda", dest="diversity_weight", type=float)
    sweep.add_argument("--budget", type=int)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--epochs", type=int)
    sweep.add_argument("--out", help="output root directory")
    sweep.add_argument("--allow-resize", dest="allow_resize", type=_parse_bool, default=None)
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="aggregate stored runs into a comparison table")
    report.add_argument("run_dirs", nargs="+", help="run directories to compare")
    report.add_argument("--out", help="directory for report.md, report.csv and heatmap data")
    report.set_defaults(func=cmd_report)

    params = sub.add_parser("params", help="parameter accounting for a backbone + adapter setting")
    params.add_argument("--image-size", type=int, default=32)
    params.add_argument("--patch-size", type=int, default=4)
    params.add_argument("--channels", type=int, default=1)
    params.add_argument("--depth", type=int, default=4)
    params.add_argument("--embed-dim", type=int, default=64)
    params.add_argument("--heads", type=int, default=4)
    params.add_argument("--rank", type=int, default=4)
    params.add_argument("--combo", choices=["v", "qk", "qkv", "all"], default="all")
    params.add_argument("--tasks", type=int, default=4)
    params.add_argument("--classes-per-task", type=int, default=2)
    params.add_argument("--exemplar-image", default="224,224,3",
                        help="H,W,C of the reference stored image")
    params.add_argument("--out", help="optional JSON output file")
    params.set_defaults(func=cmd_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LoraxError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, OSError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
