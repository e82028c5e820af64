"""Stage checkpoints: little-endian binary body plus a JSON sidecar.

Layout (version 1)::

    magic    8 bytes  b"CIGCCKPT"
    header   8 x i64  version, stage, dim, n_layers, n_filters, n_users, n_items, ledger_upto
    method   i64 length + utf-8 bytes
    ledger   i64[n_nodes]
    emb      f64[n_nodes * dim]
    beta     f64
    filters  f64[n_layers * n_filters * 2]
    frozen   f64[n_layers * n_nodes * dim]
    final    f64[n_nodes * dim]
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..graph import DegreeLedger
from ..propagation import FrozenLayerBank

MAGIC = b"CIGCCKPT"
VERSION = 1
_HEADER = struct.Struct("<8q")


@dataclass
class Checkpoint:
    stage: int
    method: str
    n_users: int
    n_items: int
    emb: np.ndarray
    beta: float
    filters: np.ndarray  # (L, F, 2)
    ledger: DegreeLedger
    frozen: FrozenLayerBank
    final: np.ndarray
    train_log: object = field(default=None, compare=False, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def dim(self) -> int:
        return self.emb.shape[1]

    @property
    def n_layers(self) -> int:
        return self.filters.shape[0]

    @property
    def seen(self) -> np.ndarray:
        return self.ledger.accumulated > 0

    def to_bytes(self) -> bytes:
        L, F, _ = self.filters.shape
        method = self.method.encode("utf-8")
        parts = [
            MAGIC,
            _HEADER.pack(VERSION, self.stage, self.dim, L, F, self.n_users, self.n_items, self.ledger.upto_stage),
            struct.pack("<q", len(method)), method,
            np.ascontiguousarray(self.ledger.accumulated, dtype="<i8").tobytes(),
            np.ascontiguousarray(self.emb, dtype="<f8").tobytes(),
            struct.pack("<d", float(self.beta)),
            np.ascontiguousarray(self.filters, dtype="<f8").tobytes(),
            np.ascontiguousarray(self.frozen.scaled, dtype="<f8").tobytes(),
            np.ascontiguousarray(self.final, dtype="<f8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != MAGIC:
            raise CheckpointError("bad magic")
        off = 8
        version, stage, dim, L, F, n_users, n_items, upto = _HEADER.unpack_from(blob, off)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off += _HEADER.size
        (mlen,) = struct.unpack_from("<q", blob, off)
        off += 8
        method = blob[off:off + mlen].decode("utf-8")
        off += mlen
        n = n_users + n_items

        def take(dtype, count, shape):
            nonlocal off
            size = np.dtype(dtype).itemsize * count
            if off + size > len(blob):
                raise CheckpointError("truncated checkpoint")
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape).astype(dtype[1:])
            off += size
            return arr

        ledger = take("<i8", n, (n,))
        emb = take("<f8", n * dim, (n, dim))
        (beta,) = struct.unpack_from("<d", blob, off)
        off += 8
        filters = take("<f8", L * F * 2, (L, F, 2))
        frozen = take("<f8", L * n * dim, (L, n, dim))
        final = take("<f8", n * dim, (n, dim))
        if off != len(blob):
            raise CheckpointError("trailing bytes in checkpoint")
        return cls(stage, method, n_users, n_items, emb, beta, filters,
                   DegreeLedger(ledger, upto), FrozenLayerBank(frozen, stage), final)

    def sidecar(self, blob: bytes | None = None) -> dict:
        blob = self.to_bytes() if blob is None else blob
        return {
            "format": "cigcn-checkpoint",
            "version": VERSION,
            "method": self.method,
            "stage": self.stage,
            "dim": self.dim,
            "n_layers": self.n_layers,
            "n_filters": int(self.filters.shape[1]),
            "n_users": self.n_users,
            "n_items": self.n_items,
            "beta": float(self.beta),
            "filter_means": [[float(x) for x in row] for row in self.filters.mean(axis=1)],
            "seen_nodes": int(self.seen.sum()),
            "sha256": hashlib.sha256(blob).hexdigest(),
        }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = ckpt.to_bytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(ckpt.sidecar(blob), fh, indent=2)
        fh.write("\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
