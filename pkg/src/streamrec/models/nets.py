"""GMF, MLP and NeuMF scorers in plain numpy with hand-written backprop.

All three share one layout: a set of feature branches (the GMF elementwise
product and/or the MLP tower) concatenated and fed to a single sigmoid output
unit.  GMF is the product branch alone, MLP the tower alone, NeuMF both with
separate embedding tables per branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EMBEDDING_STD = 0.5  # N(0, 0.25): variance 0.25
PROB_CLAMP = 1e-7


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(y, yhat):
    """Binary cross-entropy with ŷ clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(yhat, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def lecun_normal(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))


@dataclass(frozen=True)
class ModelDims:
    num_users: int
    num_items: int
    dim: int
    tower: tuple[int, ...] = ()  # MLP widths, first entry 2*dim

    def __post_init__(self):
        if min(self.num_users, self.num_items, self.dim) <= 0:
            raise ValueError(f"model dimensions must be positive, got {self}")
        if any(w <= 0 for w in self.tower):
            raise ValueError(f"tower widths must be positive, got {self.tower}")


class Recommender:
    """Base scorer.  ``params`` maps names to arrays in declaration order."""

    kind = ""
    uses_gmf = False
    uses_mlp = False

    def __init__(self, dims: ModelDims, rng: np.random.Generator):
        self.dims = dims
        d = dims.dim
        self.params: dict[str, np.ndarray] = {}
        self.embedding_names: set[str] = set()
        out_width = 0
        if self.uses_gmf:
            self._embedding("gmf_user", dims.num_users, d, rng)
            self._embedding("gmf_item", dims.num_items, d, rng)
            out_width += d
        if self.uses_mlp:
            tower = dims.tower or (2 * d, d, max(1, d // 2))
            if tower[0] != 2 * d:
                raise ValueError(f"tower input width must be 2*dim={2 * d}, got {tower[0]}")
            self.tower = tuple(tower)
            self._embedding("mlp_user", dims.num_users, d, rng)
            self._embedding("mlp_item", dims.num_items, d, rng)
            for k, (fi, fo) in enumerate(zip(tower[:-1], tower[1:]), start=1):
                self.params[f"mlp_W{k}"] = glorot_uniform(rng, fi, fo)
                self.params[f"mlp_b{k}"] = np.zeros(fo)
            out_width += tower[-1]
        self.params["out_w"] = lecun_normal(rng, out_width, 1)[:, 0]
        self.params["out_b"] = np.zeros(1)

    def _embedding(self, name, rows, d, rng):
        self.params[name] = rng.normal(0.0, EMBEDDING_STD, size=(rows, d))
        self.embedding_names.add(name)

    @property
    def num_hidden(self) -> int:
        return len(self.tower) - 1 if self.uses_mlp else 0

    def _check_ids(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.dims.num_users):
            raise IndexError(f"user id out of range [0, {self.dims.num_users})")
        if items.size and (items.min() < 0 or items.max() >= self.dims.num_items):
            raise IndexError(f"item id out of range [0, {self.dims.num_items})")
        return users, items

    def forward(self, users, items):
        """Return output logits and the cache needed by :meth:`backward`."""
        users, items = self._check_ids(users, items)
        p = self.params
        feats = []
        cache = {"users": users, "items": items}
        if self.uses_gmf:
            pu, qv = p["gmf_user"][users], p["gmf_item"][items]
            cache["gmf"] = (pu, qv)
            feats.append(pu * qv)
        if self.uses_mlp:
            h = np.concatenate([p["mlp_user"][users], p["mlp_item"][items]], axis=1)
            acts = [h]
            for k in range(1, self.num_hidden + 1):
                h = np.maximum(h @ p[f"mlp_W{k}"] + p[f"mlp_b{k}"], 0.0)
                acts.append(h)
            cache["mlp"] = acts
            feats.append(h)
        phi = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
        cache["phi"] = phi
        z = phi @ p["out_w"] + p["out_b"][0]
        return z, cache

    def backward(self, cache, dz):
        """Gradients of sum(dz * z).  Embedding grads are (rows, row_grads)."""
        p = self.params
        phi = cache["phi"]
        grads = {
            "out_w": phi.T @ dz,
            "out_b": np.array([dz.sum()]),
        }
        dphi = dz[:, None] * p["out_w"][None, :]
        users, items = cache["users"], cache["items"]
        offset = 0
        if self.uses_gmf:
            d = self.dims.dim
            pu, qv = cache["gmf"]
            g = dphi[:, :d]
            grads["gmf_user"] = _scatter(users, g * qv)
            grads["gmf_item"] = _scatter(items, g * pu)
            offset = d
        if self.uses_mlp:
            acts = cache["mlp"]
            dh = dphi[:, offset:]
            for k in range(self.num_hidden, 0, -1):
                da = dh * (acts[k] > 0)
                grads[f"mlp_W{k}"] = acts[k - 1].T @ da
                grads[f"mlp_b{k}"] = da.sum(axis=0)
                dh = da @ p[f"mlp_W{k}"].T
            d = self.dims.dim
            grads["mlp_user"] = _scatter(users, dh[:, :d])
            grads["mlp_item"] = _scatter(items, dh[:, d:])
        return grads

    def predict(self, users, items) -> np.ndarray:
        z, _ = self.forward(np.atleast_1d(users), np.atleast_1d(items))
        return sigmoid(z)

    def predict_one(self, u: int, v: int) -> float:
        return float(self.predict([u], [v])[0])

    @property
    def similarity_tables(self) -> tuple[str, str]:
        if self.uses_gmf:
            return "gmf_user", "gmf_item"
        return "mlp_user", "mlp_item"

    def embeddings(self, users, items) -> np.ndarray:
        """Rows of ``[p_u; q_v]`` used for similarity between pairs (a copy)."""
        users, items = self._check_ids(np.atleast_1d(users), np.atleast_1d(items))
        ut, it = self.similarity_tables
        return np.concatenate([self.params[ut][users], self.params[it][items]], axis=1)

    def embedding_of(self, u: int, v: int) -> np.ndarray:
        return self.embeddings([u], [v])[0]


def _scatter(rows, row_grads):
    uniq, inv = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), row_grads.shape[1]))
    np.add.at(acc, inv, row_grads)
    return uniq, acc


class GmfModel(Recommender):
    kind = "GMF"
    uses_gmf = True


class MlpModel(Recommender):
    kind = "MLP"
    uses_mlp = True


class NeuMfModel(Recommender):
    kind = "NeuMF"
    uses_gmf = True
    uses_mlp = True


MODEL_CLASSES = {cls.kind: cls for cls in (GmfModel, MlpModel, NeuMfModel)}


def init_model(kind: str, dims: ModelDims, rng: np.random.Generator) -> Recommender:
    try:
        cls = MODEL_CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_CLASSES)}") from None
    return cls(dims, rng)


def predict(model: Recommender, u: int, v: int) -> float:
    return model.predict_one(u, v)


def embedding_of(model: Recommender, u: int, v: int) -> np.ndarray:
    return model.embedding_of(u, v)
