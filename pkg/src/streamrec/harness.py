"""Prequential (test-then-train) driver for the streaming ensemble.

One coordinator owns the reservoir, the seen index and the accuracy
memories.  Each iteration receives ``n_r`` interactions; during the test
phase they are ranked against 99 sampled unseen items by every member and by
the fused system, then fed to the reservoir/seen index, and finally every
member is trained on its own sampled batch of ``n_p`` positives.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ensemble
from .core import ExperimentConfig, Interactions, Reservoir, SeenIndex
from .models import AdamState, ModelDims, init_model, train_step
from .sampling import ndo_sample, negative_sample, rr_sample, sts_sample, sw_sample

log = logging.getLogger(__name__)

# spawn-key tags separating the rng sub-streams
_INIT, _TRAIN, _EVAL = 0, 1, 2


def rank_target(target_score: float, candidate_scores) -> int:
    """1-based rank of the target; ties count against it."""
    others = np.asarray(candidate_scores, dtype=float)
    return 1 + int(np.sum(others >= target_score))


def ranks_from_scores(scores: np.ndarray) -> np.ndarray:
    """Ranks of column 0 within each row of a (tasks, candidates) score matrix."""
    return 1 + np.sum(scores[:, 1:] >= scores[:, :1], axis=1)


def hr_at_k(rank, k: int):
    return (np.asarray(rank) <= k).astype(float) if np.ndim(rank) else float(rank <= k)


def ndcg_at_k(rank, k: int):
    r = np.asarray(rank, dtype=float)
    out = np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)
    return out if out.ndim else float(out)


@dataclass
class RankingTask:
    user: int
    target: int
    seq: int
    candidates: np.ndarray  # target first, then the sampled negatives


def sample_eval_candidates(users: np.ndarray, targets: np.ndarray, seen: SeenIndex,
                           num_items: int, num_negatives: int,
                           rng: np.random.Generator) -> np.ndarray:
    """(tasks, 1 + num_negatives) item matrix; column 0 is the target.

    Negatives are distinct, differ from the target and are unseen by the user.
    """
    out = np.empty((len(users), num_negatives + 1), dtype=np.int64)
    out[:, 0] = targets
    draw = num_negatives + num_negatives // 2 + 16
    for i, (u, t) in enumerate(zip(users, targets)):
        row = seen.row(u)
        available = num_items - seen.count(u) - (0 if row[t] else 1)
        if available < num_negatives:
            raise ValueError(f"user {u} has only {available} unseen items; "
                             f"{num_negatives} evaluation negatives required")
        picked = np.zeros(0, dtype=np.int64)
        while len(picked) < num_negatives:
            cand = rng.integers(0, num_items, size=draw)
            cand = cand[~row[cand] & (cand != t)]
            both = np.concatenate([picked, cand])
            _, first = np.unique(both, return_index=True)
            picked = both[np.sort(first)]
        out[i, 1:] = picked[:num_negatives]
    return out


@dataclass
class IterationRecord:
    iteration: int
    n_seen: int
    size: int
    hr: dict  # series name -> HR@K sum over this iteration's interactions
    ndcg: dict
    wall_ms_test: float
    wall_ms_train: float

    def mean(self, metric: str, series: str) -> float:
        return getattr(self, metric)[series] / self.size


@dataclass
class SystemState:
    cfg: ExperimentConfig
    num_users: int
    num_items: int
    models: list = field(default_factory=list)
    optimizers: list = field(default_factory=list)
    memories: list = field(default_factory=list)
    reservoir: Reservoir | None = None
    seen: SeenIndex | None = None
    train_iterations: int = 0
    test_iterations: int = 0
    released_seq: int = -1  # highest seq fed to the system
    evaluated_seq: int = -1  # highest seq evaluated in the prequential phase
    train_log: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg: ExperimentConfig, num_users: int, num_items: int) -> SystemState:
        state = cls(cfg, num_users, num_items)
        dims = ModelDims(num_users, num_items, cfg.embedding_dim, cfg.tower_widths)
        for k in range(cfg.num_models):
            model = init_model(cfg.model_kind, dims, state.rng(_INIT, k))
            state.models.append(model)
            state.optimizers.append(AdamState.for_model(model, cfg.learning_rate, cfg.l2_weight))
            state.memories.append(ensemble.AccuracyMemory())
        state.reservoir = Reservoir(cfg.reservoir_capacity)
        state.seen = SeenIndex(num_users, num_items)
        return state

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.cfg.rng_seed, spawn_key=key))

    def _map(self, fn, seq):
        if self.cfg.workers > 1 and len(seq) > 1:
            with ThreadPoolExecutor(max_workers=min(self.cfg.workers, len(seq))) as pool:
                return list(pool.map(fn, seq))
        return [fn(x) for x in seq]

    # -- training branch ------------------------------------------------

    def feed(self, new: Interactions) -> None:
        """Make received interactions visible to the reservoir and seen index."""
        self.seen.record_batch(new)
        self.reservoir.extend(new)
        self.released_seq = int(new.seq[-1])

    def sample_positives(self, new: Interactions, rng, size: int):
        cfg = self.cfg
        kind = cfg.sampler_kind
        if kind == "STS":
            return sts_sample(new, self.reservoir.older_than(int(new.seq[0])), cfg, rng, bs=size)
        if kind == "NDO":
            return ndo_sample(new, cfg, rng, bs=size)
        if kind == "RR":
            return rr_sample(new, self.reservoir.older_than(int(new.seq[0])), cfg, rng, bs=size)
        if kind == "SW":
            view = self.reservoir.view()
            return sw_sample(view[max(0, len(view) - cfg.window):], cfg, rng, bs=size,
                             new_from_seq=int(new.seq[0]))
        raise ValueError(f"unknown sampler {kind!r}")

    def train_iteration(self, new: Interactions) -> list:
        """Feed ``new`` and update every member on its own sampled batches."""
        if len(new) == 0:
            return []
        self.feed(new)
        it = self.train_iterations
        self.train_iterations += 1
        cfg = self.cfg
        sizes = [cfg.batch_size] * (cfg.n_p // cfg.batch_size)
        if cfg.n_p % cfg.batch_size:
            sizes.append(cfg.n_p % cfg.batch_size)

        def work(k):
            rng = self.rng(_TRAIN, k, it)
            model, opt = self.models[k], self.optimizers[k]
            stats = []
            for size in sizes:
                batch = self.sample_positives(new, rng, size)
                if len(batch) and batch.positives.seq.max() > self.released_seq:
                    raise AssertionError("training on an interaction not yet released")
                labeled = negative_sample(batch, self.seen, self.num_items, cfg.negative_ratio, rng)
                stats.append(train_step(model, opt, labeled))
            return stats

        return self._map(work, list(range(len(self.models))))

    # -- test branch -----------------------------------------------------

    def evaluate(self, new: Interactions) -> tuple[dict, dict]:
        """Rank every interaction of ``new``; returns per-series HR and NDCG arrays."""
        cfg = self.cfg
        if len(new) and int(new.seq[0]) <= self.released_seq:
            raise AssertionError("evaluating an interaction that was already trained on")
        rng = self.rng(_EVAL, self.test_iterations)
        self.test_iterations += 1
        cands = sample_eval_candidates(new.users, new.items, self.seen, self.num_items,
                                       cfg.eval_negatives, rng)
        n, width = cands.shape
        flat_u = np.repeat(new.users, width)
        flat_i = cands.ravel()

        def score(k):
            model = self.models[k]
            return model.predict(flat_u, flat_i).reshape(n, width)

        scores = self._map(score, list(range(len(self.models))))
        k_top = cfg.top_k
        hr, ndcg = {}, {}
        member_ndcg = []
        for k, s in enumerate(scores):
            r = ranks_from_scores(s)
            hr[f"model_{k}"] = hr_at_k(r, k_top)
            ndcg[f"model_{k}"] = ndcg_at_k(r, k_top)
            member_ndcg.append(ndcg[f"model_{k}"])

        stack = np.stack([s.ravel() for s in scores], axis=1)  # (pairs, members)
        fused = {"AVG": ensemble.avg_fuse(stack)}
        if len(self.models) == 1:
            fused["AdaW"] = fused["AEL"] = stack[:, 0].copy()
            embs = None
        else:
            fused["AdaW"] = ensemble.adaw_fuse(stack, [m.mean_accuracy() for m in self.memories])
            embs = self._map(lambda k: self.models[k].embeddings(flat_u, flat_i),
                             list(range(len(self.models))))
            fused["AEL"] = ensemble.ael_fuse(stack, self.memories, embs, cfg.memory_top_e)
        for name, f in fused.items():
            r = ranks_from_scores(f.reshape(n, width))
            hr[name] = hr_at_k(r, k_top)
            ndcg[name] = ndcg_at_k(r, k_top)
        hr["fused"] = hr[cfg.fuser_kind]
        ndcg["fused"] = ndcg[cfg.fuser_kind]

        for k, memory in enumerate(self.memories):
            target_embs = (embs[k].reshape(n, width, -1)[:, 0] if embs is not None
                           else self.models[k].embeddings(new.users, new.items))
            ensemble.record_accuracies(memory, new.users, new.items, member_ndcg[k], target_embs)
        self.evaluated_seq = int(new.seq[-1])
        return hr, ndcg


def run_training_phase(stream: Interactions, state: SystemState) -> SystemState:
    for chunk in stream.chunks(state.cfg.n_r):
        state.train_log.append(state.train_iteration(chunk))
    return state


def run_prequential_phase(stream: Interactions, state: SystemState,
                          on_record=None) -> list[IterationRecord]:
    records = []
    n_seen = 0
    for i, chunk in enumerate(stream.chunks(state.cfg.n_r)):
        t0 = time.perf_counter()
        hr, ndcg = state.evaluate(chunk)
        t1 = time.perf_counter()
        state.train_iteration(chunk)
        t2 = time.perf_counter()
        n_seen += len(chunk)
        rec = IterationRecord(
            iteration=i, n_seen=n_seen, size=len(chunk),
            hr={k: float(v.sum()) for k, v in hr.items()},
            ndcg={k: float(v.sum()) for k, v in ndcg.items()},
            wall_ms_test=1000 * (t1 - t0), wall_ms_train=1000 * (t2 - t1),
        )
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    return records


@dataclass
class Report:
    count: int
    hr: dict
    ndcg: dict
    iterations: int

    @property
    def hr_fused(self) -> float:
        return self.hr["fused"]

    @property
    def ndcg_fused(self) -> float:
        return self.ndcg["fused"]

    def to_dict(self) -> dict:
        return {"count": self.count, "iterations": self.iterations,
                "hr": self.hr, "ndcg": self.ndcg}


def aggregate(records: list[IterationRecord]) -> Report:
    """Per-interaction means over all evaluated interactions."""
    if not records:
        raise ValueError("no iteration records to aggregate")
    count = sum(r.size for r in records)
    series = records[0].hr.keys()
    hr = {s: math.fsum(r.hr[s] for r in records) / count for s in series}
    ndcg = {s: math.fsum(r.ndcg[s] for r in records) / count for s in series}
    return Report(count, hr, ndcg, len(records))


@dataclass
class StreamResult:
    state: SystemState
    records: list
    report: Report


def run_stream(cfg: ExperimentConfig, train: Interactions, test: Interactions,
               num_users: int, num_items: int, on_record=None) -> StreamResult:
    """Full protocol: warm up on ``train``, then test-then-train over ``test``."""
    state = SystemState.create(cfg, num_users, num_items)
    run_training_phase(train, state)
    records = run_prequential_phase(test, state, on_record=on_record)
    return StreamResult(state, records, aggregate(records))
