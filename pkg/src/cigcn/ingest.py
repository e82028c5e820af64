"""Interaction log parsing and chronological stage splitting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyLog, InvalidBoundaries, InvalidStageCount, MalformedLine

TRAIN, VALID, TEST = "train", "valid", "test"


@dataclass
class InteractionLog:
    users: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)
    timestamps: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timestamps)

    def append(self, user: str, item: str, ts: int) -> None:
        if not user or not item:
            raise ValueError("empty user or item identifier")
        self.users.append(user)
        self.items.append(item)
        self.timestamps.append(int(ts))

    def records(self) -> list[tuple[str, str, int]]:
        return list(zip(self.users, self.items, self.timestamps))

    def sorted(self) -> "InteractionLog":
        """Stable sort by timestamp (ties keep input order)."""
        order = np.argsort(np.asarray(self.timestamps, dtype=np.int64), kind="stable")
        return InteractionLog(
            [self.users[k] for k in order],
            [self.items[k] for k in order],
            [self.timestamps[k] for k in order],
        )

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, int]]) -> "InteractionLog":
        log = cls()
        for u, i, ts in records:
            log.append(u, i, ts)
        return log


class IdMap:
    """Users occupy ``[0, user_count)``, items ``[user_count, user_count + item_count)``."""

    def __init__(self, user_ids: Sequence[str], item_ids: Sequence[str]):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self._users = {u: k for k, u in enumerate(self.user_ids)}
        self._items = {i: k + len(self.user_ids) for k, i in enumerate(self.item_ids)}
        if len(self._users) != len(self.user_ids) or len(self._items) != len(self.item_ids):
            raise ValueError("duplicate external ids")

    @classmethod
    def from_log(cls, log: InteractionLog) -> "IdMap":
        # ids are numbered in order of first appearance
        users = dict.fromkeys(log.users)
        items = dict.fromkeys(log.items)
        return cls(list(users), list(items))

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    @property
    def n_nodes(self) -> int:
        return self.user_count + self.item_count

    def user_index(self, ext: str) -> int:
        return self._users[ext]

    def item_index(self, ext: str) -> int:
        return self._items[ext]

    def external(self, index: int) -> str:
        if 0 <= index < self.user_count:
            return self.user_ids[index]
        if self.user_count <= index < self.n_nodes:
            return self.item_ids[index - self.user_count]
        raise KeyError(index)

    def is_user(self, index: int) -> bool:
        return 0 <= index < self.user_count


@dataclass
class StageDataset:
    stage_index: int
    pairs: np.ndarray  # (n, 2) int64 of distinct (user_index, item_index), first-occurrence order
    idmap: IdMap
    n_records: int = 0
    ts_min: int | None = None
    ts_max: int | None = None
    log: InteractionLog | None = None

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def users(self) -> np.ndarray:
        return np.unique(self.pairs[:, 0])

    @property
    def items(self) -> np.ndarray:
        return np.unique(self.pairs[:, 1])

    @classmethod
    def from_pairs(cls, stage_index: int, pairs, idmap: IdMap) -> "StageDataset":
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return cls(stage_index, _dedup(arr), idmap, n_records=len(arr))


def _dedup(pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    _, first = np.unique(pairs, axis=0, return_index=True)
    return pairs[np.sort(first)]


def parse_interactions(path, delimiter: str = "\t") -> InteractionLog:
    log = InteractionLog()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) < 3 or not parts[0] or not parts[1]:
                raise MalformedLine(line_no, line)
            try:
                ts = int(parts[2])
            except ValueError:
                raise MalformedLine(line_no, line) from None
            log.append(parts[0], parts[1], ts)
    return log


def write_interactions(log: InteractionLog, path, delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, ts in zip(log.users, log.items, log.timestamps):
            fh.write(f"{u}{delimiter}{i}{delimiter}{ts}\n")


def stage_sizes(n_records: int, n_stages: int) -> list[int]:
    base, rem = divmod(n_records, n_stages)
    return [base + (1 if s < rem else 0) for s in range(n_stages)]


def split_stages(log: InteractionLog, n_stages: int, idmap: IdMap | None = None) -> list[StageDataset]:
    """Partition the timestamp-sorted log into ``n_stages`` blocks of near-equal record count."""
    if len(log) == 0:
        raise EmptyLog("cannot split an empty log")
    if n_stages < 2:
        raise InvalidStageCount(f"n_stages must be >= 2, got {n_stages}")
    ordered = log.sorted()
    if idmap is None:
        idmap = IdMap.from_log(ordered)
    u_idx = np.fromiter((idmap.user_index(u) for u in ordered.users), dtype=np.int64, count=len(ordered))
    i_idx = np.fromiter((idmap.item_index(i) for i in ordered.items), dtype=np.int64, count=len(ordered))
    stages = []
    start = 0
    for s, size in enumerate(stage_sizes(len(ordered), n_stages)):
        stop = start + size
        block = InteractionLog(ordered.users[start:stop], ordered.items[start:stop], ordered.timestamps[start:stop])
        pairs = np.stack([u_idx[start:stop], i_idx[start:stop]], axis=1)
        stages.append(StageDataset(
            stage_index=s,
            pairs=_dedup(pairs),
            idmap=idmap,
            n_records=size,
            ts_min=min(block.timestamps) if size else None,
            ts_max=max(block.timestamps) if size else None,
            log=block,
        ))
        start = stop
    return stages


def assign_roles(n_stages: int, train_end: int, valid_end: int) -> list[str]:
    if not (0 < train_end < valid_end <= n_stages):
        raise InvalidBoundaries(f"need 0 < train_end < valid_end <= n_stages, got ({n_stages}, {train_end}, {valid_end})")
    return [TRAIN if s < train_end else VALID if s < valid_end else TEST for s in range(n_stages)]


def stage_manifest(stages: Sequence[StageDataset], roles: Sequence[str]) -> dict:
    idmap = stages[0].idmap
    return {
        "n_stages": len(stages),
        "n_users": idmap.user_count,
        "n_items": idmap.item_count,
        "stages": [
            {
                "stage": st.stage_index,
                "records": st.n_records,
                "pairs": len(st.pairs),
                "ts_min": st.ts_min,
                "ts_max": st.ts_max,
                "role": role,
                "file": f"stage_{st.stage_index:03d}.tsv",
            }
            for st, role in zip(stages, roles)
        ],
    }


def write_stages(stages: Sequence[StageDataset], roles: Sequence[str], out_dir, delimiter: str = "\t") -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = stage_manifest(stages, roles)
    manifest["delimiter"] = delimiter
    for st, entry in zip(stages, manifest["stages"]):
        write_interactions(st.log, out_dir / entry["file"], delimiter)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def load_stages(stage_dir) -> tuple[list[StageDataset], list[str], dict]:
    """Reload stage files written by ``write_stages``; indices are rebuilt identically."""
    stage_dir = Path(stage_dir)
    with open(stage_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    delimiter = manifest.get("delimiter", "\t")
    blocks = [parse_interactions(stage_dir / e["file"], delimiter) for e in manifest["stages"]]
    full = InteractionLog()
    for b in blocks:
        full.users += b.users
        full.items += b.items
        full.timestamps += b.timestamps
    idmap = IdMap.from_log(full)
    stages = []
    for s, b in enumerate(blocks):
        pairs = np.array([(idmap.user_index(u), idmap.item_index(i)) for u, i in zip(b.users, b.items)],
                         dtype=np.int64).reshape(-1, 2)
        stages.append(StageDataset(s, _dedup(pairs), idmap, n_records=len(b),
                                   ts_min=min(b.timestamps) if len(b) else None,
                                   ts_max=max(b.timestamps) if len(b) else None, log=b))
    roles = [e["role"] for e in manifest["stages"]]
    return stages, roles, manifest
