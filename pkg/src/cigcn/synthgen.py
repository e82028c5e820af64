"""Seeded synthetic interaction streams with drifting user preferences.

Each user and item has a latent vector. In every stage a Bernoulli(inactive_fraction)
subset of users stays silent; the remaining users emit ``interactions_per_stage``
interactions in total, each choosing an item from the softmax of its latent scores.
Between stages every user vector is mixed with a fresh Gaussian direction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .ingest import InteractionLog, write_interactions

BASE_TIMESTAMP = 1_600_000_000


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 1000
    n_items: int = 500
    n_stages: int = 10
    interactions_per_stage: int = 2000
    latent_dim: int = 8
    drift_rate: float = 0.1
    inactive_fraction: float = 0.3
    seed: int = 0
    signal: float = 3.0  # std of the softmax logits

    def validate(self) -> None:
        for name in ("n_users", "n_items", "n_stages", "interactions_per_stage", "latent_dim"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if not 0.0 <= self.drift_rate <= 1.0:
            raise InvalidConfig("drift_rate must lie in [0, 1]")
        if not 0.0 <= self.inactive_fraction < 1.0:
            raise InvalidConfig("inactive_fraction must lie in [0, 1)")
        if self.signal < 0:
            raise InvalidConfig("signal must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


@dataclass
class GroundTruth:
    item_factors: np.ndarray  # (n_items, dim)
    user_factors: np.ndarray  # (n_stages, n_users, dim)
    inactive: np.ndarray  # (n_stages, n_users) bool

    def to_json(self, config: SynthConfig) -> str:
        return json.dumps({
            "config": asdict(config),
            "item_factors": self.item_factors.tolist(),
            "user_factors": self.user_factors.tolist(),
            "inactive_users": [np.flatnonzero(m).tolist() for m in self.inactive],
        }) + "\n"


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def generate(config: SynthConfig) -> tuple[InteractionLog, GroundTruth]:
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.latent_dim
    scale = config.signal / np.sqrt(d)
    items = rng.normal(size=(config.n_items, d))
    users = rng.normal(size=(config.n_users, d))
    mix = np.hypot(1.0 - config.drift_rate, config.drift_rate)

    log = InteractionLog()
    user_hist, inactive_hist = [], []
    per = config.interactions_per_stage
    for s in range(config.n_stages):
        if s > 0 and config.drift_rate > 0:
            fresh = rng.normal(size=users.shape)
            users = ((1.0 - config.drift_rate) * users + config.drift_rate * fresh) / mix
        inactive = rng.random(config.n_users) < config.inactive_fraction
        if inactive.all():
            inactive[rng.integers(config.n_users)] = False
        active = np.flatnonzero(~inactive)
        emitters = active[rng.integers(len(active), size=per)]
        uniq, inverse = np.unique(emitters, return_inverse=True)
        cdf = np.cumsum(_softmax_rows(scale * users[uniq] @ items.T), axis=1)
        draws = rng.random(per)
        chosen = np.array([min(np.searchsorted(cdf[r], x, side="right"), config.n_items - 1)
                           for r, x in zip(inverse, draws)], dtype=np.int64)
        ts0 = BASE_TIMESTAMP + s * per
        for k, (u, i) in enumerate(zip(emitters, chosen)):
            log.append(f"u{u}", f"i{i}", ts0 + k)
        user_hist.append(users.copy())
        inactive_hist.append(inactive)
    return log, GroundTruth(items, np.stack(user_hist), np.stack(inactive_hist))


def write_dataset(log: InteractionLog, truth: GroundTruth, config: SynthConfig, out_dir,
                  delimiter: str = "\t") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "interactions.tsv"
    write_interactions(log, path, delimiter)
    (out_dir / "ground_truth.json").write_text(truth.to_json(config), encoding="utf-8")
    return path
