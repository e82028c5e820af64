"""Serve-next-stage evaluation, ranking metrics and retraining cost measurement."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyTruth, NoEvaluableUsers, UnknownUser
from .graph import IncrementalGraph
from .ingest import StageDataset
from .propagation import RepresentationSet

RECALL_KS = (5, 10, 20)
NDCG_KS = (5, 20)


def _final(reps) -> np.ndarray:
    return reps.final if isinstance(reps, RepresentationSet) else np.asarray(reps)


def rank_items(reps, user: int, exclusion: Iterable[int] = (), n_users: int | None = None) -> np.ndarray:
    """Items (global indices) by descending score; ties by ascending index."""
    final = _final(reps)
    if n_users is None:
        raise ValueError("n_users is required to locate the item block")
    if not 0 <= user < n_users:
        raise UnknownUser(user)
    items = np.arange(n_users, len(final))
    keep = ~np.isin(items, np.fromiter(exclusion, dtype=np.int64))
    items = items[keep]
    scores = final[items] @ final[user]
    return items[np.argsort(-scores, kind="stable")]


def recall_at_k(ranked: Sequence[int], truth, k: int) -> float:
    truth = set(truth)
    if not truth:
        raise EmptyTruth("recall needs at least one relevant item")
    hits = sum(1 for x in list(ranked)[:k] if x in truth)
    return hits / len(truth)


def ndcg_at_k(ranked: Sequence[int], truth, k: int) -> float:
    truth = set(truth)
    if not truth:
        raise EmptyTruth("ndcg needs at least one relevant item")
    dcg = sum(1.0 / math.log2(rank + 2) for rank, x in enumerate(list(ranked)[:k]) if x in truth)
    idcg = sum(1.0 / math.log2(rank + 2) for rank in range(min(len(truth), k)))
    return dcg / idcg


def _metric_names(recall_ks=RECALL_KS, ndcg_ks=NDCG_KS) -> list[str]:
    return [f"recall@{k}" for k in recall_ks] + [f"ndcg@{k}" for k in ndcg_ks]


def evaluate_stage(reps, next_stage: StageDataset, history: IncrementalGraph,
                   current: IncrementalGraph | None = None, exclude_history: bool = True,
                   require_history: bool = True, recall_ks=RECALL_KS, ndcg_ks=NDCG_KS,
                   block: int = 256) -> dict:
    """Average metrics over users of ``next_stage``; also over users inactive in ``current``."""
    final = _final(reps)
    n_users = history.n_users
    items = np.arange(n_users, history.n_nodes)
    truth: dict[int, set] = {}
    for u, i in next_stage.pairs:
        truth.setdefault(int(u), set()).add(int(i))
    users = sorted(u for u in truth if not require_history or history.degree[u] > 0)
    if not users:
        raise NoEvaluableUsers(f"no user of stage {next_stage.stage_index} has history")
    kmax = max(max(recall_ks), max(ndcg_ks))
    names = _metric_names(recall_ks, ndcg_ks)
    per_user = np.zeros((len(users), len(names)))
    for start in range(0, len(users), block):
        chunk = users[start:start + block]
        scores = final[chunk] @ final[items].T
        if exclude_history:
            for row, u in enumerate(chunk):
                scores[row, history.neighbors(u) - n_users] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        for row, u in enumerate(chunk):
            top = order[row]
            top = top[np.isfinite(scores[row, top])] + n_users
            vals = [recall_at_k(top, truth[u], k) for k in recall_ks] + \
                   [ndcg_at_k(top, truth[u], k) for k in ndcg_ks]
            per_user[start + row] = vals
    row = {"n_users": len(users)}
    row.update({n: float(v) for n, v in zip(names, per_user.mean(axis=0))})
    if current is not None:
        inactive = np.array([current.degree[u] == 0 for u in users])
        row["n_inactive_users"] = int(inactive.sum())
        means = per_user[inactive].mean(axis=0) if inactive.any() else [None] * len(names)
        row.update({f"inactive_{n}": (None if v is None else float(v)) for n, v in zip(names, means)})
    return row


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, stage: int, method: str, metrics: dict | None, **extra) -> dict:
        row = {"stage": stage, "method": method, **extra}
        if metrics is None:
            row["status"] = "no-next-stage"
        else:
            row["status"] = "ok"
            row.update(metrics)
        self.rows.append(row)
        return row

    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows}, indent=2) + "\n"

    def mean(self, method: str, column: str, stages: Iterable[int] | None = None) -> float:
        stages = None if stages is None else set(stages)
        vals = [r[column] for r in self.rows if r["method"] == method and r.get(column) is not None
                and (stages is None or r["stage"] in stages)]
        return float(np.mean(vals)) if vals else float("nan")


def measure_retrain_cost(method: str, stages: Sequence[StageDataset], config, repeats: int = 1,
                         start: int = 1) -> dict[int, float]:
    """Wall-clock seconds to advance ``method`` through each stage ``start..n-1``.

    An untimed pass first produces every predecessor checkpoint (and warms caches). Then
    ``repeats`` rounds each re-run all stages from those predecessors; the per-stage minimum
    is kept. Interleaving the rounds spreads slow machine phases across stages.
    """
    from .pipeline import advance, initial

    if len(stages) < 2:
        raise ValueError("need at least two stages")
    ckpts = [initial(method, stages, config)]
    for t in range(1, len(stages)):
        ckpts.append(advance(method, ckpts[-1], stages, t, config))
    seconds = {t: math.inf for t in range(start, len(stages))}
    for _ in range(max(1, repeats)):
        for t in seconds:
            t0 = time.perf_counter()
            advance(method, ckpts[t - 1], stages, t, config)
            seconds[t] = min(seconds[t], time.perf_counter() - t0)
    return seconds
