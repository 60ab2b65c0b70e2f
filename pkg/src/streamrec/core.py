"""Domain types shared across the stream pipeline.

Interactions travel through the system in columnar form (:class:`Interactions`)
because every hot path (sampling, negative checks, scoring) is vectorised over
numpy arrays.  :class:`Interaction` is the single-event view.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np


class Interaction(NamedTuple):
    """One implicit user-item event. The label is always 1."""

    user: int
    item: int
    timestamp: int
    seq: int


@dataclass(frozen=True)
class Interactions:
    """Column-oriented batch of interactions, ordered by ``seq``."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    seq: np.ndarray

    def __post_init__(self):
        n = len(self.users)
        if not (len(self.items) == len(self.timestamps) == len(self.seq) == n):
            raise ValueError("interaction columns must have equal length")

    @classmethod
    def empty(cls) -> Interactions:
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z)

    @classmethod
    def from_records(cls, records) -> Interactions:
        records = list(records)
        if not records:
            return cls.empty()
        arr = np.asarray([tuple(r) for r in records], dtype=np.int64)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())

    def __len__(self) -> int:
        return len(self.users)

    def __getitem__(self, idx) -> Interactions | Interaction:
        if isinstance(idx, (int, np.integer)):
            return Interaction(int(self.users[idx]), int(self.items[idx]),
                               int(self.timestamps[idx]), int(self.seq[idx]))
        return Interactions(self.users[idx], self.items[idx], self.timestamps[idx], self.seq[idx])

    def __iter__(self) -> Iterator[Interaction]:
        for i in range(len(self)):
            yield self[i]

    def concat(self, other: Interactions) -> Interactions:
        return Interactions(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.items, other.items]),
            np.concatenate([self.timestamps, other.timestamps]),
            np.concatenate([self.seq, other.seq]),
        )

    def chunks(self, size: int) -> Iterator[Interactions]:
        for start in range(0, len(self), size):
            yield self[start:start + size]


class Reservoir:
    """Bounded FIFO buffer of historical interactions.

    Backed by a numpy ring buffer; :meth:`view` returns the contents oldest
    first.  Inserting into a full reservoir evicts the smallest ``seq``.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError(f"reservoir capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self._cols = np.zeros((4, self.capacity), dtype=np.int64)
        self._start = 0
        self._size = 0
        self._last_seq = -1

    def __len__(self) -> int:
        return self._size

    @property
    def last_seq(self) -> int:
        return self._last_seq

    def insert(self, x: Interaction) -> Reservoir:
        if x.seq <= self._last_seq:
            raise ValueError(
                f"out-of-order insert: seq {x.seq} after {self._last_seq}")
        if self._size < self.capacity:
            pos = (self._start + self._size) % self.capacity
            self._size += 1
        else:
            pos = self._start
            self._start = (self._start + 1) % self.capacity
        self._cols[:, pos] = (x.user, x.item, x.timestamp, x.seq)
        self._last_seq = x.seq
        return self

    def extend(self, batch: Interactions) -> Reservoir:
        """Bulk FIFO insert; equivalent to inserting each element in order."""
        n = len(batch)
        if n == 0:
            return self
        seq = batch.seq
        if seq[0] <= self._last_seq or (n > 1 and np.any(np.diff(seq) <= 0)):
            raise ValueError("out-of-order insert: batch seq must exceed reservoir tail and increase")
        if n >= self.capacity:
            tail = batch[n - self.capacity:]
            self._cols[:] = np.vstack([tail.users, tail.items, tail.timestamps, tail.seq])
            self._start = 0
            self._size = self.capacity
        else:
            new = np.vstack([batch.users, batch.items, batch.timestamps, batch.seq])
            end = self._start + self._size
            pos = np.arange(end, end + n) % self.capacity
            self._cols[:, pos] = new
            overflow = max(0, self._size + n - self.capacity)
            self._start = (self._start + overflow) % self.capacity
            self._size = min(self.capacity, self._size + n)
        self._last_seq = int(seq[-1])
        return self

    def view(self) -> Interactions:
        idx = (self._start + np.arange(self._size)) % self.capacity
        c = self._cols[:, idx]
        return Interactions(c[0], c[1], c[2], c[3])

    def older_than(self, seq: int) -> Interactions:
        """Contents with ``seq`` strictly below the given value (a prefix)."""
        v = self.view()
        cut = int(np.searchsorted(v.seq, seq, side="left"))
        return v[:cut]

    @property
    def buffer(self) -> list[Interaction]:
        return list(self.view())


def reservoir_insert(reservoir: Reservoir, x: Interaction) -> Reservoir:
    return reservoir.insert(x)


class SeenIndex:
    """Exact record of every (user, item) pair fed to the system.

    Stored as a dense boolean matrix so membership tests vectorise.
    """

    def __init__(self, num_users: int, num_items: int):
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self._mask = np.zeros((self.num_users, self.num_items), dtype=bool)
        self._counts = np.zeros(self.num_users, dtype=np.int64)

    def record(self, user: int, item: int) -> None:
        if not self._mask[user, item]:
            self._mask[user, item] = True
            self._counts[user] += 1

    def record_batch(self, batch: Interactions) -> None:
        if len(batch) == 0:
            return
        keys = np.unique(batch.users * self.num_items + batch.items)
        users, items = np.divmod(keys, self.num_items)
        fresh = ~self._mask[users, items]
        self._mask[users[fresh], items[fresh]] = True
        np.add.at(self._counts, users[fresh], 1)

    def contains(self, user: int, item: int) -> bool:
        if not (0 <= user < self.num_users and 0 <= item < self.num_items):
            return False
        return bool(self._mask[user, item])

    def contains_many(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return self._mask[users, items]

    def items_of(self, user: int) -> set[int]:
        return set(np.flatnonzero(self._mask[user]).tolist())

    def count(self, user: int) -> int:
        return int(self._counts[user])

    def row(self, user: int) -> np.ndarray:
        return self._mask[user]


def seen_contains(index: SeenIndex, u: int, v: int) -> bool:
    return index.contains(u, v)


@dataclass(frozen=True)
class StreamSchedule:
    """Simulated processing (``n_p``) and receiving (``n_r``) volume per iteration."""

    n_p: int
    n_r: int

    def __post_init__(self):
        if self.n_p <= 0 or self.n_r <= 0:
            raise ValueError(f"n_p and n_r must be positive, got n_p={self.n_p}, n_r={self.n_r}")

    @property
    def regime(self) -> str:
        if self.n_r < self.n_p:
            return "underload"
        if self.n_r > self.n_p:
            return "overload"
        return "balanced"


SAMPLER_KINDS = ("STS", "NDO", "RR", "SW")
FUSER_KINDS = ("AEL", "AVG", "AdaW")
MODEL_KINDS = ("GMF", "MLP", "NeuMF")


@dataclass
class ExperimentConfig:
    alpha: float = 0.5
    lambda_new: float = 1.02
    lambda_res: float = 1.005
    reservoir_capacity: int = 10_000
    batch_size: int = 256
    n_p: int = 256
    n_r: int = 256
    num_models: int = 8
    model_kind: str = "NeuMF"
    embedding_dim: int = 16
    # empty -> [2d, d, d/2]
    mlp_layer_widths: tuple[int, ...] = ()
    learning_rate: float = 0.001
    l2_weight: float = 1e-6
    negative_ratio: int = 4
    memory_top_e: int = 10
    eval_negatives: int = 99
    top_k: int = 10
    rng_seed: int = 0
    sampler_kind: str = "STS"
    fuser_kind: str = "AEL"
    train_fraction: float = 0.9
    window_size: int = 0  # SW window; 0 -> batch_size
    workers: int = 1

    def __post_init__(self):
        self.mlp_layer_widths = tuple(int(w) for w in self.mlp_layer_widths)
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha ∈ [0,1] required, got alpha={self.alpha}")
        for name in ("lambda_new", "lambda_res"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} ≥ 1 required, got {name}={getattr(self, name)}")
        for name in ("reservoir_capacity", "batch_size", "n_p", "n_r", "num_models",
                     "embedding_dim", "memory_top_e", "eval_negatives", "top_k", "workers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} > 0 required, got {name}={getattr(self, name)}")
        for name in ("negative_ratio", "window_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} ≥ 0 required, got {name}={getattr(self, name)}")
        if self.learning_rate < 0 or self.l2_weight < 0:
            raise ValueError("learning_rate and l2_weight must be ≥ 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction ∈ (0,1) required, got train_fraction={self.train_fraction}")
        if self.sampler_kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler_kind must be one of {SAMPLER_KINDS}, got {self.sampler_kind!r}")
        if self.fuser_kind not in FUSER_KINDS:
            raise ValueError(f"fuser_kind must be one of {FUSER_KINDS}, got {self.fuser_kind!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if any(w <= 0 for w in self.mlp_layer_widths):
            raise ValueError("mlp_layer_widths entries must be positive")
        if self.mlp_layer_widths and self.mlp_layer_widths[0] != 2 * self.embedding_dim:
            raise ValueError(
                f"mlp_layer_widths[0] must equal 2*embedding_dim={2 * self.embedding_dim}")

    @property
    def schedule(self) -> StreamSchedule:
        return StreamSchedule(n_p=self.n_p, n_r=self.n_r)

    @property
    def tower_widths(self) -> tuple[int, ...]:
        if self.mlp_layer_widths:
            return self.mlp_layer_widths
        d = self.embedding_dim
        return (2 * d, d, max(1, d // 2))

    @property
    def window(self) -> int:
        return self.window_size or self.batch_size

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def config_fields() -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(ExperimentConfig)}


__all__ = [
    "Interaction", "Interactions", "Reservoir", "reservoir_insert", "SeenIndex",
    "seen_contains", "StreamSchedule", "ExperimentConfig", "config_fields",
    "SAMPLER_KINDS", "FUSER_KINDS", "MODEL_KINDS",
]
