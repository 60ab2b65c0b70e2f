"""Rating files -> chronologically ordered implicit interaction streams."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Interactions

log = logging.getLogger(__name__)

MIN_INTERACTIONS = 10  # users need strictly more than this many


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class RatingRecords:
    """Raw implicit records in file order (ratings already discarded)."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    def take(self, idx) -> RatingRecords:
        return RatingRecords(self.users[idx], self.items[idx], self.timestamps[idx])


@dataclass(frozen=True)
class Dataset:
    interactions: Interactions
    num_users: int
    num_items: int
    user_ids: np.ndarray  # dense id -> raw id
    item_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.interactions)

    def to_records(self) -> RatingRecords:
        it = self.interactions
        return RatingRecords(self.user_ids[it.users], self.item_ids[it.items], it.timestamps.copy())


def guess_delimiter(path) -> str:
    with open(path, encoding="utf-8") as fh:
        line = fh.readline()
    for delim in ("::", "\t", ",", ";", "|", " "):
        if delim in line:
            return delim
    raise IngestError(f"{path}: cannot infer delimiter from first line")


def parse_ratings(path, delimiter: str | None = None, skip_header: bool = False) -> RatingRecords:
    """Parse ``user<d>item<d>rating<d>timestamp`` lines.

    Any rating becomes an implicit positive.  Blank lines are skipped; a line
    with missing or non-integer fields raises :class:`IngestError` naming it.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file")
    delimiter = delimiter or guess_delimiter(path)
    users, items, stamps = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter)
            if len(parts) < 4:
                raise IngestError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}: {line!r}")
            try:
                u, i = int(parts[0]), int(parts[1])
                float(parts[2])
                t = int(float(parts[3]))
            except ValueError:
                raise IngestError(f"{path}:{lineno}: malformed field in {line!r}") from None
            users.append(u)
            items.append(i)
            stamps.append(t)
    if not users:
        raise IngestError(f"{path}: no rating records")
    return RatingRecords(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
                         np.array(stamps, dtype=np.int64))


def subsample_users(records: RatingRecords, k: int, seed: int) -> RatingRecords:
    """Keep all records of ``k`` users chosen uniformly with a seeded rng."""
    users = np.unique(records.users)
    if k >= len(users):
        return records
    chosen = np.random.default_rng(seed).choice(users, size=k, replace=False)
    return records.take(np.isin(records.users, chosen))


def preprocess(records: RatingRecords, min_interactions: int = MIN_INTERACTIONS) -> Dataset:
    """Filter sparse users once, remap ids densely, sort by time, number by arrival."""
    if len(records) == 0:
        raise IngestError("no records to preprocess")
    uniq, counts = np.unique(records.users, return_counts=True)
    keep_users = uniq[counts > min_interactions]
    if len(keep_users) == 0:
        raise IngestError(f"every user has ≤ {min_interactions} interactions; nothing left")
    kept = records.take(np.isin(records.users, keep_users))
    order = np.argsort(kept.timestamps, kind="stable")
    kept = kept.take(order)
    user_ids, users = np.unique(kept.users, return_inverse=True)
    item_ids, items = np.unique(kept.items, return_inverse=True)
    inter = Interactions(users.astype(np.int64), items.astype(np.int64),
                         kept.timestamps.copy(), np.arange(len(kept), dtype=np.int64))
    return Dataset(inter, len(user_ids), len(item_ids), user_ids, item_ids)


def chronological_split(ds: Dataset, train_fraction: float) -> tuple[Interactions, Interactions]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    cut = int(np.floor(len(ds) * train_fraction))
    it = ds.interactions
    return it[:cut], it[cut:]


def load_dataset(path, delimiter: str | None = None, subsample: int | None = None,
                 seed: int = 0) -> Dataset:
    """Load a ratings file, a ``.cache`` file, or ``synthetic[:key=value,...]``."""
    if str(path).startswith("synthetic"):
        _, _, args = str(path).partition(":")
        kwargs = {k: (float(v) if k == "drift" else int(v))
                  for k, v in (a.split("=") for a in args.split(",") if a)}
        return synthetic_dataset(**kwargs)
    path = Path(path)
    if path.suffix == ".cache":
        return read_cache(path)
    records = parse_ratings(path, delimiter)
    if subsample:
        records = subsample_users(records, subsample, seed)
    ds = preprocess(records)
    log.info("loaded %s: %d users, %d items, %d interactions", path, ds.num_users, ds.num_items, len(ds))
    return ds


CACHE_HEADER = "num_users,num_items,N"


def write_cache(ds: Dataset, path) -> None:
    """CSV cache: size header, then ``user,item,timestamp,raw_user,raw_item`` rows in seq order."""
    it = ds.interactions
    table = np.column_stack([it.users, it.items, it.timestamps,
                             ds.user_ids[it.users], ds.item_ids[it.items]])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CACHE_HEADER + "\n")
        fh.write(f"{ds.num_users},{ds.num_items},{len(ds)}\n")
        fh.write("user,item,timestamp,raw_user,raw_item\n")
        np.savetxt(fh, table, fmt="%d", delimiter=",")


def read_cache(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != CACHE_HEADER:
            raise IngestError(f"{path}: not a dataset cache")
        num_users, num_items, n = (int(x) for x in fh.readline().split(","))
        fh.readline()
        table = np.loadtxt(fh, dtype=np.int64, delimiter=",", ndmin=2)
    if len(table) != n:
        raise IngestError(f"{path}: header says {n} rows, found {len(table)}")
    user_ids = np.zeros(num_users, dtype=np.int64)
    item_ids = np.zeros(num_items, dtype=np.int64)
    user_ids[table[:, 0]] = table[:, 3]
    item_ids[table[:, 1]] = table[:, 4]
    inter = Interactions(table[:, 0].copy(), table[:, 1].copy(), table[:, 2].copy(),
                         np.arange(n, dtype=np.int64))
    return Dataset(inter, num_users, num_items, user_ids, item_ids)


SYNTHETIC_HEADROOM = 100  # unseen items kept per user for 99-negative ranking


def synthetic_dataset(num_users: int = 100, num_items: int = 300, n: int = 5000,
                      dim: int = 4, drift: float = 0.02, seed: int = 0) -> Dataset:
    """Drifting latent-factor stream for tests and demos.

    Users pick unseen items with probability increasing in a latent affinity
    score; user factors random-walk by ``drift`` per interaction they make, so
    recent behaviour is more predictive than old behaviour.
    """
    per_user = num_items - SYNTHETIC_HEADROOM
    if per_user <= 0 or n > num_users * per_user:
        raise ValueError(f"{num_users} users x {num_items} items cannot hold {n} interactions "
                         f"while leaving {SYNTHETIC_HEADROOM} unseen items per user")
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(num_users, dim))
    V = rng.normal(size=(num_items, dim))
    pop = rng.normal(scale=1.0, size=num_items)
    activity = rng.pareto(2.0, size=num_users) + 1.0
    activity /= activity.sum()
    seen = np.zeros((num_users, num_items), dtype=bool)
    users = np.empty(n, dtype=np.int64)
    items = np.empty(n, dtype=np.int64)
    for t in range(n):
        u = rng.choice(num_users, p=activity)
        while seen[u].sum() >= per_user:
            u = rng.choice(num_users, p=activity)
        logits = V @ U[u] + pop
        logits[seen[u]] = -np.inf
        p = np.exp(logits - logits.max())
        v = rng.choice(num_items, p=p / p.sum())
        seen[u, v] = True
        users[t], items[t] = u, v
        U[u] += drift * rng.normal(size=dim)
    records = RatingRecords(users, items, np.arange(n, dtype=np.int64))
    return preprocess(records)
