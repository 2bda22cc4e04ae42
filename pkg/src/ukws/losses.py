"""Softmax, normalised softmax, AM-Softmax and angular prototypical losses.

Every loss returns its value together with closed-form gradients with respect
to the embeddings and to its own learnable parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from .numcore import l2_normalize_rows, log_softmax, normalize_backward


@dataclass
class LossResult:
    value: float
    grad_embeddings: np.ndarray
    grad_params: dict = field(default_factory=dict)


@dataclass
class ClassifierParams:
    W: np.ndarray  # (C, D)
    b: np.ndarray  # (C,)

    @classmethod
    def init(cls, n_classes, dim, rng):
        bound = 1.0 / np.sqrt(dim)
        return cls(rng.uniform(-bound, bound, size=(n_classes, dim)), np.zeros(n_classes))

    def as_dict(self):
        return {"W": self.W, "b": self.b}


@dataclass(frozen=True)
class AmSoftmaxConfig:
    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        if self.margin < 0 or self.scale <= 0:
            raise ValueError("AM-Softmax needs margin >= 0 and scale > 0")


@dataclass
class ApParams:
    w: float = 10.0
    b: float = -5.0

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("AP scale w must be strictly positive")

    def as_dict(self):
        return {"w": np.array(self.w), "b": np.array(self.b)}


W_MIN = 1e-6


def _check_batch(x, labels, n_classes, dim):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"embeddings must be (N, {dim}), got {x.shape}")
    if labels.shape != (x.shape[0],):
        raise ValueError("one label per embedding is required")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return x, labels


def _cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    rows = np.arange(n)
    value = -float(np.mean(logp[rows, labels]))
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return value, dlogits / n


def softmax_loss(x, labels, params):
    W = np.asarray(params.W, dtype=np.float64)
    b = np.asarray(params.b, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise ValueError("classifier weights must be (C, D) with a (C,) bias")
    x, labels = _check_batch(x, labels, W.shape[0], W.shape[1])
    value, dz = _cross_entropy(x @ W.T + b, labels)
    return LossResult(value, dz @ W, {"W": dz.T @ x, "b": dz.sum(axis=0)})


def am_softmax_loss(x, labels, params, cfg=AmSoftmaxConfig()):
    """Additive-margin softmax over scaled cosine logits.

    ``params`` supplies ``W``; any bias is ignored. The returned ``grad_params``
    holds only ``W``.
    """
    W = np.asarray(params.W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("classifier weights must be (C, D)")
    x, labels = _check_batch(x, labels, W.shape[0], W.shape[1])
    xu, xn = l2_normalize_rows(x)
    wu, wn = l2_normalize_rows(W)
    cos = xu @ wu.T
    rows = np.arange(x.shape[0])
    logits = cfg.scale * cos
    logits[rows, labels] -= cfg.scale * cfg.margin
    value, dz = _cross_entropy(logits, labels)
    dcos = cfg.scale * dz
    gx = normalize_backward(dcos @ wu, xu, xn)
    gw = normalize_backward(dcos.T @ xu, wu, wn)
    return LossResult(value, gx, {"W": gw})


def normalized_softmax_loss(x, labels, params):
    return am_softmax_loss(x, labels, params, AmSoftmaxConfig(margin=0.0, scale=1.0))


def centroid(support):
    s = np.asarray(support, dtype=np.float64)
    if s.ndim < 1 or s.shape[0] == 0:
        raise ValueError("centroid of an empty support set")
    return s.mean(axis=0)


def ap_similarity(embeddings, params):
    """Scaled-cosine similarity matrix between episode queries and support centroids.

    ``embeddings`` is (B, M, D); returns ``(S, cos, query_unit, query_norm,
    centroid_unit, centroid_norm)``.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    q = e[:, -1]
    c = e[:, :-1].mean(axis=1)
    qu, qn = l2_normalize_rows(q)
    cu, cn = l2_normalize_rows(c)
    cos = qu @ cu.T
    return params.w * cos + params.b, cos, qu, qn, cu, cn


def angular_prototypical_loss(embeddings, params):
    """Angular prototypical loss on a (B, M, D) array of episode embeddings.

    Row ``j`` of the similarity matrix scores query ``j`` against every class
    centroid and is trained toward column ``j``. Gradients cover all ``B*M``
    embeddings plus the scale ``w`` and bias ``b``.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 3 or e.shape[0] < 2 or e.shape[1] < 2:
        raise ValueError(f"AP loss needs (B>=2, M>=2, D) embeddings, got {e.shape}")
    B, M, _ = e.shape
    S, cos, qu, qn, cu, cn = ap_similarity(e, params)
    value, dS = _cross_entropy(S, np.arange(B))
    dcos = params.w * dS
    gq = normalize_backward(dcos @ cu, qu, qn)
    gc = normalize_backward(dcos.T @ qu, cu, cn)
    grad = np.empty_like(e)
    grad[:, :-1] = (gc / (M - 1))[:, None, :]
    grad[:, -1] = gq
    return LossResult(
        value, grad, {"w": np.array(np.sum(dS * cos)), "b": np.array(np.sum(dS))}
    )
