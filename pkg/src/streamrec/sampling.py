"""Training-batch samplers.

The stratified time-aware sampler draws a fixed share of each batch from the
newly received data and the rest from the reservoir, each stratum under a
geometric recency weighting.  NDO, RR and SW are the comparison samplers.
All draws are with replacement and go through an inverse-CDF table.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import ExperimentConfig, Interactions, Reservoir, SeenIndex

log = logging.getLogger(__name__)


def decay_probability(lam: float, n: int, k: int) -> float:
    """Normalised probability of the k-th of n interactions (k=1 oldest).

    Each interaction is ``lam`` times as likely as its predecessor, so the
    weights form a geometric series.  ``lam == 1`` is the uniform limit.
    """
    if lam < 1.0:
        raise ValueError(f"decay ratio must be ≥ 1, got {lam}")
    if n < 1:
        raise ValueError(f"sample space must be non-empty, got n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if lam == 1.0:
        return 1.0 / n
    # lam**(k-1) (lam-1) / (lam**n - 1), rescaled by lam**-n to stay finite
    return lam ** (k - 1 - n) * (lam - 1.0) / (1.0 - lam ** (-n))


class DecayDistribution:
    """Cumulative table of the geometric recency weights over ``n`` slots."""

    def __init__(self, lam: float, n: int):
        if lam < 1.0:
            raise ValueError(f"decay ratio must be ≥ 1, got {lam}")
        if n < 1:
            raise ValueError(f"sample space must be non-empty, got n={n}")
        self.lam = float(lam)
        self.n = int(n)
        if lam == 1.0:
            probs = np.full(n, 1.0 / n)
        else:
            # log-space keeps lam**n finite for long buffers
            logw = (np.arange(n) - (n - 1)) * math.log(lam)
            w = np.exp(logw)
            probs = w / w.sum()
        self.probabilities = probs
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        self.cdf = cdf
        self.probabilities.setflags(write=False)
        self.cdf.setflags(write=False)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Zero-based positions (0 = oldest) drawn by inverse CDF."""
        u = rng.random(size)
        return np.searchsorted(self.cdf, u, side="right")


@functools.lru_cache(maxsize=64)
def decay_distribution(lam: float, n: int) -> DecayDistribution:
    return DecayDistribution(lam, n)


@dataclass(frozen=True)
class SampleBatch:
    """Positive interactions for one training iteration of one model."""

    positives: Interactions
    from_new: np.ndarray  # bool provenance per positive

    def __len__(self) -> int:
        return len(self.positives)

    @property
    def num_new(self) -> int:
        return int(self.from_new.sum())

    @property
    def num_reservoir(self) -> int:
        return len(self) - self.num_new


@dataclass(frozen=True)
class LabeledBatch:
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


def new_share(bs: int, alpha: float) -> int:
    """Size of the new-data stratum, round(bs*alpha) rounding half up."""
    return int(math.floor(bs * alpha + 0.5))


def _as_interactions(source) -> Interactions:
    if isinstance(source, Reservoir):
        return source.view()
    return source


def _decayed_draw(source: Interactions, lam: float, size: int, rng) -> Interactions:
    if size == 0:
        return Interactions.empty()
    pos = decay_distribution(float(lam), len(source)).draw(rng, size)
    return source[pos]


def _uniform_draw(source: Interactions, size: int, rng) -> Interactions:
    if size == 0:
        return Interactions.empty()
    return source[rng.integers(0, len(source), size=size)]


def _batch(new: Interactions, hist: Interactions) -> SampleBatch:
    prov = np.concatenate([np.ones(len(new), bool), np.zeros(len(hist), bool)])
    return SampleBatch(new.concat(hist), prov)


def sts_sample(new_data: Interactions, reservoir, cfg: ExperimentConfig,
               rng: np.random.Generator, bs: int | None = None) -> SampleBatch:
    """Stratified, time-aware sample of ``bs`` positives."""
    bs = cfg.batch_size if bs is None else bs
    hist = _as_interactions(reservoir)
    if len(new_data) == 0 and len(hist) == 0:
        raise ValueError("cannot sample: new data and reservoir are both empty")
    n_new = new_share(bs, cfg.alpha)
    if n_new > 0 and len(new_data) == 0:
        log.warning("no new data to sample; drawing the whole batch from the reservoir")
        n_new = 0
    elif n_new < bs and len(hist) == 0:
        log.warning("reservoir empty; drawing the whole batch from new data")
        n_new = bs
    new = _decayed_draw(new_data, cfg.lambda_new, n_new, rng)
    old = _decayed_draw(hist, cfg.lambda_res, bs - n_new, rng)
    return _batch(new, old)


def ndo_sample(new_data: Interactions, cfg: ExperimentConfig,
               rng: np.random.Generator, bs: int | None = None) -> SampleBatch:
    bs = cfg.batch_size if bs is None else bs
    if len(new_data) == 0:
        raise ValueError("NDO sampling needs new data")
    return _batch(_uniform_draw(new_data, bs, rng), Interactions.empty())


def rr_sample(new_data: Interactions, reservoir, cfg: ExperimentConfig,
              rng: np.random.Generator, bs: int | None = None) -> SampleBatch:
    bs = cfg.batch_size if bs is None else bs
    hist = _as_interactions(reservoir)
    pool = new_data.concat(hist)
    if len(pool) == 0:
        raise ValueError("RR sampling needs new data or reservoir contents")
    pos = rng.integers(0, len(pool), size=bs)
    return SampleBatch(pool[pos], pos < len(new_data))


def sw_sample(history: Interactions, cfg: ExperimentConfig,
              rng: np.random.Generator, bs: int | None = None,
              new_from_seq: int | None = None) -> SampleBatch:
    """Uniform draws from the most recent ``cfg.window`` interactions.

    ``new_from_seq`` marks which window entries count as new for provenance.
    """
    bs = cfg.batch_size if bs is None else bs
    window = history[max(0, len(history) - cfg.window):]
    if len(window) == 0:
        raise ValueError("SW sampling needs a non-empty window")
    drawn = _uniform_draw(window, bs, rng)
    if new_from_seq is None:
        prov = np.ones(bs, bool)
    else:
        prov = drawn.seq >= new_from_seq
    return SampleBatch(drawn, prov)


def negative_sample(positives: SampleBatch | Interactions, seen: SeenIndex, num_items: int,
                    ratio: int, rng: np.random.Generator,
                    max_attempts: int = 100) -> LabeledBatch:
    """Label positives 1 and add ``ratio`` unseen items per positive, labelled 0.

    Each negative slot gets up to ``max_attempts`` rejection draws; a slot
    that never finds an unseen item is dropped with a warning.
    """
    pos = positives.positives if isinstance(positives, SampleBatch) else positives
    if ratio < 0:
        raise ValueError(f"negative ratio must be ≥ 0, got {ratio}")
    users_p = pos.users
    items_p = pos.items
    if ratio == 0 or len(pos) == 0:
        return LabeledBatch(users_p.copy(), items_p.copy(), np.ones(len(pos)))

    neg_users = np.repeat(users_p, ratio)
    neg_items = rng.integers(0, num_items, size=len(neg_users))
    bad = np.flatnonzero(seen.contains_many(neg_users, neg_items))
    attempts = 1
    while len(bad) and attempts < max_attempts:
        neg_items[bad] = rng.integers(0, num_items, size=len(bad))
        bad = bad[seen.contains_many(neg_users[bad], neg_items[bad])]
        attempts += 1
    if len(bad):
        log.warning("negative sampling saturated for %d slot(s) (users %s); emitting fewer negatives",
                    len(bad), sorted(set(neg_users[bad].tolist()))[:5])
        keep = np.ones(len(neg_users), bool)
        keep[bad] = False
        neg_users, neg_items = neg_users[keep], neg_items[keep]

    users = np.concatenate([users_p, neg_users])
    items = np.concatenate([items_p, neg_items])
    labels = np.concatenate([np.ones(len(users_p)), np.zeros(len(neg_users))])
    return LabeledBatch(users, items, labels)
