"""Stage trainers: bootstrap, incremental (IGC + CED) retraining and the two baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..ced import CedConfig, apply_table, mixing_matrix, type_restricted_knn
from ..errors import EmptyStage, InvalidConfig, StageMismatch
from ..graph import DegreeLedger, IncrementalGraph, build_incremental_graph, union_graph, update_ledger
from ..ingest import StageDataset
from ..propagation import FrozenLayerBank, full_propagate, igc_propagate
from .adam import AdamState, adam_step
from .checkpoint import Checkpoint
from .objective import IGCObjective, LightGCNObjective, NegativeSampler

log = logging.getLogger(__name__)

CI_LIGHTGCN = "ci-lightgcn"
I_LIGHTGCN = "i-lightgcn"
FULL_RETRAIN = "full-retrain"
FINE_TUNE = "fine-tune"
METHODS = (CI_LIGHTGCN, I_LIGHTGCN, FULL_RETRAIN, FINE_TUNE)


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 32
    n_layers: int = 2
    lr: float = 0.01
    lam: float = 1e-4
    epochs: int = 20
    batch_size: int = 1024
    seed: int = 0
    ced: CedConfig = field(default_factory=CedConfig)
    negatives_per_positive: int = 1
    n_filters: int = 1
    init_std: float = 0.1
    train_beta: bool = True
    train_filters: bool = True
    early_stop_patience: int | None = None

    def __post_init__(self):
        for name in ("dim", "n_layers", "batch_size", "negatives_per_positive", "n_filters"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.epochs < 0 or self.lr <= 0 or self.lam < 0 or self.init_std <= 0:
            raise InvalidConfig("epochs >= 0, lr > 0, lam >= 0 and init_std > 0 are required")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("ced"), dict):
            d["ced"] = CedConfig(**d["ced"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["ced"] = {"K": self.ced.K, "gamma1": self.ced.gamma1, "gamma2": self.ced.gamma2}
        return out


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    example_losses: list[np.ndarray] = field(default_factory=list)  # one array per epoch, batch order
    epochs_run: int = 0


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage])


def _init_new_rows(emb: np.ndarray, new_mask: np.ndarray, rng, std: float) -> None:
    idx = np.flatnonzero(new_mask)
    emb[idx] = rng.normal(0.0, std, size=(len(idx), emb.shape[1]))


def _train(objective: Callable, params: dict, trainable: Sequence[str], pairs_local: np.ndarray,
           sampler: NegativeSampler, to_local: np.ndarray, to_global_users: np.ndarray,
           rng: np.random.Generator, config: TrainConfig,
           validate: Callable[[dict], float] | None = None) -> TrainLog:
    """Mini-batch Adam over BPR triples; negatives resampled every epoch."""
    trainlog = TrainLog()
    adam = AdamState()
    n_pos = len(pairs_local)
    reps = config.negatives_per_positive
    best, best_params, patience = -np.inf, None, 0
    for epoch in range(config.epochs):
        order = np.repeat(rng.permutation(n_pos), reps)
        users_l = pairs_local[order, 0]
        items_l = pairs_local[order, 1]
        negs = to_local[sampler.sample(to_global_users[users_l], rng)]
        triples = np.stack([users_l, items_l, negs], axis=1)
        total, per_epoch = 0.0, []
        for start in range(0, len(triples), config.batch_size):
            batch = triples[start:start + config.batch_size]
            res = objective(params, batch)
            total += res.loss
            per_epoch.append(res.per_example)
            adam_step(params, {k: res.grads[k] for k in trainable}, adam, config.lr)
            if "beta" in trainable and params["beta"] < 0:
                params["beta"][...] = 0.0
        trainlog.epoch_losses.append(total)
        trainlog.example_losses.append(np.concatenate(per_epoch) if per_epoch else np.zeros(0))
        trainlog.epochs_run = epoch + 1
        if validate is not None and config.early_stop_patience:
            score = validate(params)
            if score > best:
                best, patience = score, 0
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                patience += 1
                if patience >= config.early_stop_patience:
                    break
    if best_params is not None:
        for k, v in best_params.items():
            params[k][...] = v
    return trainlog


def _local_pairs(pairs: np.ndarray, nodes: np.ndarray, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    to_local = np.full(n_nodes, -1, dtype=np.int64)
    to_local[nodes] = np.arange(len(nodes))
    return to_local[pairs], to_local


def _fresh_filters(config: TrainConfig) -> np.ndarray:
    return np.ones((config.n_layers, config.n_filters, 2))


def _train_lightgcn(graph: IncrementalGraph, pairs: np.ndarray, universe: np.ndarray, emb: np.ndarray,
                    rng, config: TrainConfig, validate=None) -> TrainLog:
    """Train plain LightGCN on the nodes touched by ``graph``; updates ``emb`` in place."""
    nodes = np.flatnonzero(graph.degree > 0)
    pairs_l, to_local = _local_pairs(pairs, nodes, graph.n_nodes)
    adj = graph.adjacency[nodes][:, nodes]
    objective = LightGCNObjective(adj, config.n_layers, config.lam)
    params = {"emb": emb[nodes].copy()}
    sampler = NegativeSampler(pairs, universe, graph.n_nodes)
    local_validate = None
    if validate is not None:
        def local_validate(p):
            full = emb.copy()
            full[nodes] = p["emb"]
            return validate(full)
    trainlog = _train(objective, params, ["emb"], pairs_l, sampler, to_local, nodes, rng, config, local_validate)
    emb[nodes] = params["emb"]
    return trainlog


def bootstrap_stage0(stage0: StageDataset, config: TrainConfig, method: str = CI_LIGHTGCN,
                     validate=None) -> Checkpoint:
    """Train plain LightGCN on the stage-0 graph from a seeded random start."""
    if len(stage0) == 0:
        raise EmptyStage("stage 0 has no interactions")
    idmap = stage0.idmap
    graph = build_incremental_graph(stage0)
    rng = stage_rng(config.seed, stage0.stage_index)
    emb = np.zeros((idmap.n_nodes, config.dim))
    _init_new_rows(emb, graph.degree > 0, rng, config.init_std)
    trainlog = _train_lightgcn(graph, stage0.pairs, stage0.pairs[:, 1], emb, rng, config, validate)
    reps = full_propagate(graph, emb, config.n_layers)
    ledger = update_ledger(DegreeLedger.empty(idmap.n_nodes), graph)
    return Checkpoint(
        stage=stage0.stage_index, method=method, n_users=idmap.user_count, n_items=idmap.item_count,
        emb=emb, beta=1.0, filters=_fresh_filters(config), ledger=ledger,
        frozen=FrozenLayerBank.from_layers(reps.layers, ledger.accumulated, stage0.stage_index),
        final=reps.final, train_log=trainlog,
    )


def _check_prev(ckpt_prev: Checkpoint, stage: StageDataset) -> None:
    if len(stage) == 0:
        raise EmptyStage(f"stage {stage.stage_index} has no interactions")
    if stage.stage_index != ckpt_prev.stage + 1:
        raise StageMismatch(f"checkpoint is stage {ckpt_prev.stage}, data is stage {stage.stage_index}")


def retrain_stage(ckpt_prev: Checkpoint, stage: StageDataset, config: TrainConfig,
                  method: str | None = None, validate=None) -> Checkpoint:
    """Incremental retraining of one stage (IGC forward, CED indirect/direct updates)."""
    _check_prev(ckpt_prev, stage)
    t = stage.stage_index
    ced = config.ced
    n_users = ckpt_prev.n_users
    graph = build_incremental_graph(stage)
    ledger = ckpt_prev.ledger
    d_old = ledger.accumulated
    active = graph.degree > 0
    seen = d_old > 0
    old_reps = ckpt_prev.final

    # inherit the previous parameters; brand-new nodes get fresh rows
    rng = stage_rng(config.seed, t)
    emb = ckpt_prev.emb.copy()
    _init_new_rows(emb, active & ~seen, rng, config.init_std)
    beta = float(ckpt_prev.beta)
    filters = ckpt_prev.filters.copy()
    frozen = ckpt_prev.frozen

    # inactive neighbours of active nodes, from stage t-1 representations
    if ced.gamma2 < 1.0:
        table_in = type_restricted_knn(old_reps, active & seen, ~active & seen, n_users, ced.K, t - 1)
        extra = np.concatenate(table_in.neighbors) if len(table_in) else np.zeros(0, np.int64)
    else:
        table_in = None
        extra = np.zeros(0, np.int64)
    nodes = np.union1d(np.flatnonzero(active), extra)
    pairs_l, to_local = _local_pairs(stage.pairs, nodes, graph.n_nodes)
    mixing = mixing_matrix(table_in, ced.gamma2, nodes) if table_in is not None else None
    objective = IGCObjective(
        graph.adjacency[nodes][:, nodes], d_old[nodes], graph.degree[nodes], frozen.scaled[:, nodes],
        config.n_layers, config.lam, mixing=mixing, active=active[nodes],
    )
    params = {"emb": emb[nodes].copy(), "beta": np.array(beta), "filters": filters}
    trainable = ["emb"] + (["beta"] if config.train_beta else []) + (["filters"] if config.train_filters else [])
    sampler = NegativeSampler(stage.pairs, stage.pairs[:, 1], graph.n_nodes)
    local_validate = None
    if validate is not None:
        def local_validate(p):
            full = emb.copy()
            full[nodes] = p["emb"]
            r = igc_propagate(graph, ledger, float(p["beta"]), p["filters"], full, frozen, config.n_layers)
            return validate(r.final)
    trainlog = _train(objective, params, trainable, pairs_l, sampler, to_local, nodes, rng, config, local_validate)
    emb[nodes] = params["emb"]
    beta = float(params["beta"])
    filters = params["filters"]

    # representations of all nodes
    reps = igc_propagate(graph, ledger, beta, filters, emb, frozen, config.n_layers)
    final = reps.final
    # direct update of inactive nodes from their nearest active nodes
    if ced.gamma1 < 1.0:
        table_ac = type_restricted_knn(old_reps, ~active & seen, active & seen, n_users, ced.K, t - 1)
        final = apply_table(final, table_ac, ced.gamma1)

    new_ledger = update_ledger(ledger, graph)
    return Checkpoint(
        stage=t, method=method or (CI_LIGHTGCN if ced.gamma1 < 1 or ced.gamma2 < 1 else I_LIGHTGCN),
        n_users=n_users, n_items=ckpt_prev.n_items, emb=emb, beta=beta, filters=filters.copy(),
        ledger=new_ledger, frozen=FrozenLayerBank.from_layers(reps.layers, new_ledger.accumulated, t),
        final=final, train_log=trainlog,
    )


def full_retrain(stages: Sequence[StageDataset], config: TrainConfig, init: Checkpoint | None = None,
                 validate=None) -> Checkpoint:
    """Plain LightGCN on the union graph of ``stages`` (0..t), warm-started from ``init`` if given."""
    if not stages or any(len(s) == 0 for s in stages):
        raise EmptyStage("full retraining needs non-empty stages")
    idmap = stages[0].idmap
    t = stages[-1].stage_index
    graphs = [build_incremental_graph(s) for s in stages]
    union = union_graph(graphs)
    ledger = DegreeLedger.empty(idmap.n_nodes)
    for g in graphs:
        ledger = update_ledger(ledger, g)
    rng = stage_rng(config.seed, t)
    if init is not None:
        if init.stage != t - 1:
            raise StageMismatch(f"warm start from stage {init.stage} for target stage {t}")
        emb = init.emb.copy()
        known = init.seen
    else:
        emb = np.zeros((idmap.n_nodes, config.dim))
        known = np.zeros(idmap.n_nodes, dtype=bool)
    _init_new_rows(emb, (union.degree > 0) & ~known, rng, config.init_std)
    pairs = np.concatenate([s.pairs for s in stages])
    pairs = np.unique(pairs, axis=0)
    trainlog = _train_lightgcn(union, pairs, pairs[:, 1], emb, rng, config, validate)
    reps = full_propagate(union, emb, config.n_layers)
    return Checkpoint(
        stage=t, method=FULL_RETRAIN, n_users=idmap.user_count, n_items=idmap.item_count, emb=emb,
        beta=1.0, filters=_fresh_filters(config), ledger=ledger,
        frozen=FrozenLayerBank.from_layers(reps.layers, ledger.accumulated, t),
        final=reps.final, train_log=trainlog,
    )


def fine_tune(ckpt_prev: Checkpoint, stage: StageDataset, config: TrainConfig, validate=None) -> Checkpoint:
    """Plain LightGCN on the stage graph alone, initialised from the previous parameters."""
    _check_prev(ckpt_prev, stage)
    t = stage.stage_index
    graph = build_incremental_graph(stage)
    rng = stage_rng(config.seed, t)
    emb = ckpt_prev.emb.copy()
    _init_new_rows(emb, (graph.degree > 0) & ~ckpt_prev.seen, rng, config.init_std)
    trainlog = _train_lightgcn(graph, stage.pairs, stage.pairs[:, 1], emb, rng, config, validate)
    reps = full_propagate(graph, emb, config.n_layers)
    ledger = update_ledger(ckpt_prev.ledger, graph)
    return Checkpoint(
        stage=t, method=FINE_TUNE, n_users=ckpt_prev.n_users, n_items=ckpt_prev.n_items, emb=emb,
        beta=ckpt_prev.beta, filters=ckpt_prev.filters.copy(), ledger=ledger,
        frozen=FrozenLayerBank.from_layers(reps.layers, ledger.accumulated, t),
        final=reps.final, train_log=trainlog,
    )


def incremental_config(config: TrainConfig, method: str) -> TrainConfig:
    """I-LightGCN is the incremental model with both CED weights pinned to 1."""
    if method == I_LIGHTGCN:
        return replace(config, ced=CedConfig(config.ced.K, 1.0, 1.0))
    return config
