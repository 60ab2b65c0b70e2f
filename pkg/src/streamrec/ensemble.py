"""Fusion of member predictions.

The adaptive fuser weights each member per target pair: it looks up the
member's accuracies on the most similar pairs of the previous test batch,
averages them into a confidence, and turns confidences into weights with an
odds transform ``c / (1 - c)`` followed by L1 normalisation.  AVG and AdaW
are the comparison fusers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONF_CLAMP = 0.01
SIM_DECIMALS = 12  # similarities equal to this precision count as ties
_CHUNK = 4096


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return np.where(norms == 0.0, 0.0, a / safe)


@dataclass
class AccuracyMemory:
    """One member's accuracies on the pairs of the last test batch.

    Embeddings are snapshots taken when the accuracy was measured.
    """

    accs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    items: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    embeddings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    _unit: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.accs)

    @property
    def empty(self) -> bool:
        return len(self.accs) == 0

    @property
    def unit_embeddings(self) -> np.ndarray:
        if self._unit is None:
            self._unit = _unit_rows(self.embeddings)
        return self._unit

    def mean_accuracy(self) -> float | None:
        return float(self.accs.mean()) if len(self.accs) else None


def record_accuracies(memory: AccuracyMemory, users, items, accs, embeddings) -> AccuracyMemory:
    """Replace the memory wholesale with the just-tested batch."""
    accs = np.asarray(accs, dtype=float)
    if len(accs) == 0:
        raise ValueError("cannot record an empty test batch")
    if np.any((accs < 0) | (accs > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    memory.accs = accs.copy()
    memory.users = np.asarray(users, dtype=np.int64).copy()
    memory.items = np.asarray(items, dtype=np.int64).copy()
    memory.embeddings = np.array(embeddings, dtype=float, copy=True)
    memory._unit = None
    return memory


def confidences(memory: AccuracyMemory, targets: np.ndarray, e: int) -> np.ndarray:
    """Confidence for every row of ``targets`` (one embedding per row).

    Mean accuracy over the ``e`` most cosine-similar stored pairs; ties go to
    the lower stored index.
    """
    if memory.empty:
        raise LookupError("accuracy memory is empty (cold start)")
    if e < 1:
        raise ValueError(f"neighbour count must be ≥ 1, got {e}")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    g = len(memory)
    acc = memory.accs
    if e >= g:
        return np.full(len(targets), acc.mean())
    mem = memory.unit_embeddings
    out = np.empty(len(targets))
    for start in range(0, len(targets), _CHUNK):
        sims = np.round(_unit_rows(targets[start:start + _CHUNK]) @ mem.T, SIM_DECIMALS)
        kth = np.partition(sims, g - e, axis=1)[:, g - e][:, None]
        above = sims > kth
        tied = sims == kth
        need = e - above.sum(axis=1)
        total = above.astype(float) @ acc + tied.astype(float) @ acc
        surplus = np.flatnonzero(tied.sum(axis=1) > need)
        if len(surplus):
            # more ties at the cut than slots left: keep the lowest stored indices
            t = tied[surplus]
            keep = t & (np.cumsum(t, axis=1) <= need[surplus, None])
            total[surplus] = above[surplus].astype(float) @ acc + keep.astype(float) @ acc
        out[start:start + _CHUNK] = total / e
    return out


def confidence(memory: AccuracyMemory, target_embedding, e: int) -> float:
    return float(confidences(memory, np.asarray(target_embedding)[None, :], e)[0])


def fusion_weights(c, eps: float = CONF_CLAMP) -> np.ndarray:
    """Odds-transform confidences and L1-normalise along the last axis."""
    c = np.clip(np.asarray(c, dtype=float), eps, 1.0 - eps)
    odds = c / (1.0 - c)
    return odds / odds.sum(axis=-1, keepdims=True)


def fuse(predictions, fw) -> float | np.ndarray:
    """Weighted combination ``fwᵀŷ`` (row-wise for 2-D input), kept inside [min ŷ, max ŷ]."""
    preds = np.asarray(predictions, dtype=float)
    fw = np.asarray(fw, dtype=float)
    if preds.shape != fw.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {fw.shape}")
    out = np.clip(np.sum(preds * fw, axis=-1), preds.min(axis=-1), preds.max(axis=-1))
    return float(out) if out.ndim == 0 else out


def avg_fuse(predictions) -> float | np.ndarray:
    preds = np.asarray(predictions, dtype=float)
    if preds.shape[-1] == 0:
        raise ValueError("no predictions to average")
    out = preds.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def adaw_fuse(predictions, global_accuracies) -> float | np.ndarray:
    """Fuse with weights from each member's mean accuracy on the last batch."""
    if global_accuracies is None or any(a is None for a in global_accuracies):
        return avg_fuse(predictions)
    preds = np.asarray(predictions, dtype=float)
    fw = np.broadcast_to(fusion_weights(global_accuracies), preds.shape)
    return fuse(preds, fw)


def ael_weights(memories: list[AccuracyMemory], target_embeddings: list[np.ndarray], e: int) -> np.ndarray:
    """Per-target weights, shape (targets, members).  Uniform on cold start."""
    o = len(memories)
    n = len(target_embeddings[0])
    if o == 1:
        return np.ones((n, 1))
    if any(m.empty for m in memories):
        return np.full((n, o), 1.0 / o)
    c = np.column_stack([confidences(m, t, e) for m, t in zip(memories, target_embeddings)])
    return fusion_weights(c)


def ael_fuse(predictions: np.ndarray, memories, target_embeddings, e: int) -> np.ndarray:
    """Adaptive fusion of a (targets, members) prediction matrix."""
    return fuse(predictions, ael_weights(memories, target_embeddings, e))
