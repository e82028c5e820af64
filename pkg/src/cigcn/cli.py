"""Command-line front end: ``prepare``, ``run``, ``bench`` and ``sweep``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock, Timeout

from .ced import CedConfig
from .errors import CigcnError, ConfigError
from .evaluation import MetricsReport, evaluate_stage, measure_retrain_cost
from .graph import build_incremental_graph, union_graph
from .ingest import assign_roles, load_stages, parse_interactions, split_stages, write_stages
from .pipeline import advance, check_method, initial
from .synthgen import SynthConfig, generate, write_dataset
from .training import FULL_RETRAIN, METHODS, TrainConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("cigcn")

INCOMPLETE = "INCOMPLETE"
GRID_KEYS = {"K", "gamma1", "gamma2"}


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    try:
        tc = TrainConfig.from_dict(cfg.get("train", {}))
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from None
    return replace(tc, seed=seed) if seed is not None else tc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# prepare ---------------------------------------------------------------

def cmd_prepare(args, cfg: dict) -> int:
    out = Path(args.out)
    n_stages = args.stages or cfg.get("stages")
    if args.synth:
        synth = SynthConfig.from_dict({**load_config(args.synth), **({"seed": args.seed} if args.seed is not None else {})})
        data, truth = generate(synth)
        src = write_dataset(data, truth, synth, out / "synth")
        n_stages = n_stages or synth.n_stages
    elif args.input:
        src = Path(args.input)
        if not src.exists():
            raise ConfigError(f"input file not found: {src}")
    else:
        raise ConfigError("prepare needs --input or --synth")
    if not n_stages:
        raise ConfigError("number of stages not given (--stages)")
    data = parse_interactions(src, args.delimiter)
    stages = split_stages(data, int(n_stages))
    train_end = args.train_end or cfg.get("train_end") or max(1, int(n_stages) * 3 // 4)
    valid_end = args.valid_end or cfg.get("valid_end") or min(int(n_stages), train_end + 1)
    roles = assign_roles(int(n_stages), int(train_end), int(valid_end))
    manifest = write_stages(stages, roles, out, args.delimiter)
    print(f"wrote {len(stages)} stages ({manifest['n_users']} users, {manifest['n_items']} items) to {out}")
    return 0


# run -------------------------------------------------------------------

def _ckpt_path(out: Path, method: str, t: int) -> Path:
    return out / method / f"stage_{t:03d}.ckpt"


def _metrics_path(out: Path, method: str, t: int) -> Path:
    return out / method / f"stage_{t:03d}.metrics.json"


def _resume_point(out: Path, method: str, n_stages: int) -> int:
    """Last stage whose checkpoint and metrics are both on disk, or -1."""
    for t in range(n_stages - 1, -1, -1):
        if _ckpt_path(out, method, t).exists() and _metrics_path(out, method, t).exists():
            return t
    return -1


def _prune(out: Path, method: str, t: int, keep_last: int | None) -> None:
    if not keep_last:
        return
    old = t - keep_last
    if old >= 0:
        for p in (_ckpt_path(out, method, old), _ckpt_path(out, method, old).with_suffix(".json")):
            p.unlink(missing_ok=True)


def run_experiment(stages, roles, methods: Sequence[str], config: TrainConfig, out, keep_last=None,
                   stop_after: int | None = None, eval_opts: dict | None = None) -> MetricsReport | None:
    """Bootstrap, retrain and evaluate every method; resumes from existing stage outputs."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    eval_opts = eval_opts or {}
    for m in methods:
        check_method(m)
    graphs = [build_incremental_graph(s) for s in stages]
    n = len(stages)
    marker = out / INCOMPLETE
    marker.write_text("run in progress or interrupted; stage outputs are partial\n", encoding="utf-8")
    timings = []
    stopped = False
    for method in methods:
        done = _resume_point(out, method, n)
        ckpt = load_checkpoint(_ckpt_path(out, method, done)) if done >= 0 else None
        for t in range(done + 1, n):
            if stop_after is not None and t > stop_after:
                stopped = True
                break
            t0 = time.perf_counter()
            ckpt = initial(method, stages, config) if t == 0 else advance(method, ckpt, stages, t, config)
            timings.append((t, method, time.perf_counter() - t0))
            save_checkpoint(ckpt, _ckpt_path(out, method, t))
            if t + 1 < n:
                metrics = evaluate_stage(ckpt.final, stages[t + 1], union_graph(graphs[:t + 1]), graphs[t],
                                         **eval_opts)
                row = {"status": "ok", "eval_role": roles[t + 1], **metrics}
            else:
                row = {"status": "no-next-stage", "eval_role": None}
            _write_json(_metrics_path(out, method, t), row)
            _prune(out, method, t, keep_last)
            log.info("%s stage %d done", method, t)
    if timings:
        with open(out / "timing.csv", "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if fh.tell() == 0:
                w.writerow(["stage", "method", "seconds"])
            w.writerows(timings)
    if stopped:
        return None
    report = MetricsReport()
    for method in methods:
        for t in range(n):
            row = json.loads(_metrics_path(out, method, t).read_text(encoding="utf-8"))
            status = row.pop("status")
            role = row.pop("eval_role")
            # stage files are key-sorted; restore overall, then inactive-user columns
            row = dict(sorted(row.items(), key=lambda kv: (kv[0].startswith(("inactive_", "n_inactive")),
                                                           not kv[0].startswith("n_"))))
            report.add(t, method, row if status == "ok" else None, eval_role=role)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    marker.unlink(missing_ok=True)
    return report


def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    return FileLock(str(out / ".lock"), timeout=0)


def _methods(args, cfg) -> list[str]:
    methods = args.methods or cfg.get("methods") or ["ci-lightgcn"]
    if isinstance(methods, str):
        methods = methods.split(",")
    if not methods:
        raise ConfigError("method list is empty")
    for m in methods:
        check_method(m)
    return list(methods)


def _effective(args, cfg: dict, config: TrainConfig, methods) -> dict:
    return {"train": config.to_dict(), "methods": list(methods), "data": str(args.data),
            "keep_last": getattr(args, "keep_last", None), "eval": cfg.get("eval", {})}


def cmd_run(args, cfg: dict) -> int:
    stages, roles, _ = load_stages(args.data)
    config = train_config(cfg, args.seed)
    methods = _methods(args, cfg)
    out = Path(args.out)
    with _locked(out):
        _write_json(out / "effective_config.json", _effective(args, cfg, config, methods))
        report = run_experiment(stages, roles, methods, config, out, keep_last=args.keep_last,
                                stop_after=args.stop_after, eval_opts=cfg.get("eval"))
    if report is None:
        print(f"stopped after stage {args.stop_after}; resume with the same command", file=sys.stderr)
        return 0
    for m in methods:
        print(f"{m}: mean recall@20 {report.mean(m, 'recall@20'):.4f}  ndcg@20 {report.mean(m, 'ndcg@20'):.4f}")
    return 0


# bench -----------------------------------------------------------------

def bench_rows(seconds: dict[str, dict[int, float]]) -> list[dict]:
    full = seconds.get(FULL_RETRAIN)
    rows = []
    for method, per_stage in seconds.items():
        for t, sec in per_stage.items():
            ratio = full[t] / sec if full is not None and sec > 0 else None
            rows.append({"stage": t, "method": method, "seconds": sec, "speedup_vs_full": ratio})
    return rows


def cmd_bench(args, cfg: dict) -> int:
    stages, _, _ = load_stages(args.data)
    config = train_config(cfg, args.seed)
    methods = _methods(args, cfg)
    out = Path(args.out)
    with _locked(out):
        seconds = {m: measure_retrain_cost(m, stages, config, repeats=args.repeats) for m in methods}
        rows = bench_rows(seconds)
        with open(out / "timing.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["stage", "method", "seconds", "speedup_vs_full"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    for m in methods:
        secs = list(seconds[m].values())
        line = f"{m}: mean {np.mean(secs):.4f}s/stage  last/first {secs[-1] / secs[0]:.2f}"
        if FULL_RETRAIN in seconds and m != FULL_RETRAIN:
            ratios = [r["speedup_vs_full"] for r in rows if r["method"] == m]
            line += f"  speedup vs full: mean {np.mean(ratios):.1f}x, final {ratios[-1]:.1f}x"
        print(line)
    return 0


# sweep -----------------------------------------------------------------

def grid_points(grid: dict) -> list[dict]:
    if not grid:
        raise ConfigError("sweep needs a non-empty 'grid' in the config")
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def apply_point(config: TrainConfig, point: dict) -> TrainConfig:
    ced = {k: point[k] for k in point if k in GRID_KEYS}
    rest = {k: v for k, v in point.items() if k not in GRID_KEYS}
    unknown = set(rest) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    new_ced = CedConfig(**{"K": config.ced.K, "gamma1": config.ced.gamma1, "gamma2": config.ced.gamma2, **ced})
    return replace(config, ced=new_ced, **rest)


def cmd_sweep(args, cfg: dict) -> int:
    stages, roles, _ = load_stages(args.data)
    base = train_config(cfg, args.seed)
    methods = _methods(args, cfg)
    points = grid_points(cfg.get("grid", {}))
    out = Path(args.out)
    metrics = ["recall@5", "recall@20", "ndcg@5", "ndcg@20", "inactive_recall@20"]
    summary = []
    with _locked(out):
        for k, point in enumerate(points):
            config = apply_point(base, point)
            report = run_experiment(stages, roles, methods, config, out / f"point_{k:03d}",
                                    eval_opts=cfg.get("eval"))
            test_stages = {r["stage"] for r in report.rows if r.get("eval_role") == "test"} or None
            for m in methods:
                row = {"point": k, **point, "method": m}
                row.update({c: report.mean(m, c, test_stages) for c in metrics})
                summary.append(row)
        fields = ["point", *sorted(points[0]), "method", *metrics]
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(summary)
    print(f"{len(points)} grid points, summary in {out / 'summary.csv'}")
    return 0


# entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, help="BLAS thread limit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cigcn", description="Incremental GCN recommender retraining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="split an interaction log into stages")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="TSV log: user, item, unix timestamp")
    src.add_argument("--synth", help="JSON synthetic-data config")
    p.add_argument("--stages", type=int)
    p.add_argument("--train-end", type=int)
    p.add_argument("--valid-end", type=int)
    p.add_argument("--delimiter", default="\t")
    p.set_defaults(func=cmd_prepare)

    for name, func, helptext in (("run", cmd_run, "retrain and evaluate stage by stage"),
                                 ("bench", cmd_bench, "per-stage retraining wall clock"),
                                 ("sweep", cmd_sweep, "hyper-parameter grid")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", required=True, help="directory written by prepare")
        p.add_argument("--methods", type=lambda s: s.split(","), help=f"comma list from {', '.join(METHODS)}")
        p.set_defaults(func=func)
        if name == "run":
            p.add_argument("--keep-last", type=int, help="keep only the newest N checkpoints per method")
            p.add_argument("--stop-after", type=int, help="stop after this stage (resume later)")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=1)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.threads:
            from threadpoolctl import threadpool_limits
            threadpool_limits(args.threads)
        return args.func(args, cfg)
    except Timeout:
        print(f"error: another experiment holds the lock on {args.out}", file=sys.stderr)
        return 3
    except (CigcnError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
