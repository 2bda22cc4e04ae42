"""A small MLP embedder with manual backprop, Adam, and the two-stage trainer."""

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .batching import iter_flat_batches, sample_episode
from .losses import (
    W_MIN,
    AmSoftmaxConfig,
    ApParams,
    ClassifierParams,
    am_softmax_loss,
    angular_prototypical_loss,
    normalized_softmax_loss,
    softmax_loss,
)

LOSSES = ("softmax", "nsoftmax", "amsoftmax", "ap")


@dataclass(frozen=True)
class EmbedderConfig:
    n_frames: int = 98
    n_coeffs: int = 40
    pooling: bool = True
    hidden_sizes: tuple = (256, 128)
    embedding_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be at least 2")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.n_frames <= 0 or self.n_coeffs <= 0:
            raise ValueError("input shape must be positive")

    @property
    def input_dim(self):
        return self.n_coeffs if self.pooling else self.n_frames * self.n_coeffs

    def layer_shapes(self):
        dims = (self.input_dim, *self.hidden_sizes, self.embedding_dim)
        shapes = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"W{i}", (a, b)))
            shapes.append((f"b{i}", (b,)))
        return shapes

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ForwardCache:
    version: int
    activations: list
    batch_shape: tuple


class Embedder:
    """Mean-pool over frames (optional), ReLU hidden layers, linear output."""

    def __init__(self, config, params=None):
        self.config = config
        self._version = 0
        if params is None:
            params = self._init_params()
        self.set_params(params)

    def _init_params(self):
        rng = np.random.default_rng(self.config.seed)
        params = {}
        for name, shape in self.config.layer_shapes():
            if name.startswith("W"):
                bound = 1.0 / math.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
            else:
                params[name] = np.zeros(shape)
        return params

    @property
    def n_layers(self):
        return len(self.config.hidden_sizes) + 1

    def set_params(self, params):
        shapes = dict(self.config.layer_shapes())
        if set(params) != set(shapes):
            raise ValueError(f"parameter names {sorted(params)} do not match {sorted(shapes)}")
        fresh = {}
        for name, shape in shapes.items():
            p = np.array(params[name], dtype=np.float64)
            if p.shape != shape:
                raise ValueError(f"parameter {name} has shape {p.shape}, expected {shape}")
            fresh[name] = p
        self.params = fresh
        self._version += 1

    def copy(self):
        return Embedder(self.config, {k: v.copy() for k, v in self.params.items()})

    def checksum(self):
        h = hashlib.sha256()
        for name, _ in self.config.layer_shapes():
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    def _flatten_input(self, features):
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.n_frames, cfg.n_coeffs):
            raise ValueError(
                f"features must be ({cfg.n_frames}, {cfg.n_coeffs}) per item, got {x.shape[-2:]}"
            )
        x = x.mean(axis=1) if cfg.pooling else x.reshape(x.shape[0], -1)
        return x, single

    def forward(self, features):
        """Embed ``(frames, coeffs)`` or ``(N, frames, coeffs)`` features.

        Returns ``(embeddings, cache)``; the cache feeds ``backward``.
        """
        h, single = self._flatten_input(features)
        acts = [h]
        for i in range(self.n_layers):
            h = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        return out, ForwardCache(self._version, acts, out.shape)

    def embed(self, features):
        return self.forward(features)[0]

    def backward(self, grad_embedding, cache):
        """Parameter gradients for an upstream gradient on the embeddings."""
        if cache.version != self._version:
            raise RuntimeError("stale forward cache: parameters changed since forward()")
        g = np.asarray(grad_embedding, dtype=np.float64)
        if g.shape != cache.batch_shape:
            raise ValueError(f"upstream gradient shape {g.shape} != embedding shape {cache.batch_shape}")
        if g.ndim == 1:
            g = g[None]
        acts = cache.activations
        grads = {}
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (acts[i + 1] > 0)
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns new ``(params, state)``."""
    if set(params) != set(grads):
        raise ValueError("params and grads must have the same keys")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {np.shape(p)}")
        m = state.beta1 * state.m.get(k, 0.0) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(k, 0.0) + (1.0 - state.beta2) * g * g
        new_params[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_params, replace(state, step=t, m=new_m, v=new_v)


@dataclass(frozen=True)
class TrainSchedule:
    stage: str = "pretrain"
    batch_size: int = 256
    initial_lr: float = 1e-3
    decay: float = 0.95
    epochs: int = 10
    per_class: int = 2

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.batch_size <= 0 or self.epochs < 0 or self.per_class < 2:
            raise ValueError("batch_size > 0, epochs >= 0 and per_class >= 2 are required")

    @classmethod
    def pretrain(cls, **kw):
        return cls(**{"batch_size": 256, "initial_lr": 1e-3, **kw, "stage": "pretrain"})

    @classmethod
    def finetune(cls, **kw):
        return cls(**{"batch_size": 16, "initial_lr": 1e-5, **kw, "stage": "finetune"})

    def lr_at(self, epoch):
        return self.initial_lr * self.decay**epoch


@dataclass
class TrainResult:
    model: Embedder
    head: object
    log: list


def _stack_inventory(inventory):
    classes = sorted(inventory)
    items, labels = [], []
    for ci, cls in enumerate(classes):
        arr = np.asarray(inventory[cls], dtype=np.float64)
        items.append(arr)
        labels.append(np.full(len(arr), ci))
    return classes, np.concatenate(items), np.concatenate(labels)


def _flat_loss(loss, emb, labels, head, am_cfg):
    if loss == "softmax":
        return softmax_loss(emb, labels, head)
    if loss == "nsoftmax":
        return normalized_softmax_loss(emb, labels, head)
    return am_softmax_loss(emb, labels, head, am_cfg)


def _head_params(loss, head):
    # cosine heads have no bias
    if loss in ("ap", "softmax"):
        return head.as_dict()
    return {"W": head.W}


def _assign_head(loss, head, values):
    if loss == "ap":
        head.w = max(float(values["w"]), W_MIN)
        head.b = float(values["b"])
    else:
        head.W = values["W"]
        if "b" in values:
            head.b = values["b"]


def dataset_loss(model, head, inventory, loss, am_cfg=AmSoftmaxConfig()):
    """Full-batch loss of a softmax-family model over an inventory."""
    if loss == "ap":
        raise ValueError("dataset_loss is defined for softmax-family losses only")
    _, items, labels = _stack_inventory(inventory)
    return _flat_loss(loss, model.embed(items), labels, head, am_cfg).value


def train_stage(model, inventory, loss, schedule, seed=0, am_cfg=AmSoftmaxConfig(), head=None):
    """Train a copy of ``model`` for one stage; returns a ``TrainResult``.

    ``inventory`` maps class label -> array of ``(frames, coeffs)`` features.
    Softmax-family losses train a fresh classifier head unless ``head`` is
    given; the AP loss trains its scale and bias. The learning rate decays by
    ``schedule.decay`` at every epoch boundary.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; choose from {LOSSES}")
    if len(inventory) < 2:
        raise ValueError("training needs at least two classes")
    model = model.copy()
    rng = np.random.default_rng(seed)
    classes, items, labels = _stack_inventory(inventory)
    dim = model.config.embedding_dim

    if loss == "ap":
        M = schedule.per_class
        eligible = {c: inventory[c] for c in classes if len(inventory[c]) >= M}
        B = min(schedule.batch_size // M, len(eligible))
        if B < 2:
            raise ValueError(
                f"AP training needs >= 2 classes with >= {M} items and batch_size >= {2 * M}"
            )
        steps = max(1, math.ceil(len(items) / (B * M)))
        head = ApParams() if head is None else replace(head)
    else:
        if head is None:
            head = ClassifierParams.init(len(classes), dim, rng)
        else:
            head = ClassifierParams(head.W.copy(), head.b.copy())

    def pack():
        p = {f"model/{k}": v for k, v in model.params.items()}
        p.update({f"head/{k}": v for k, v in _head_params(loss, head).items()})
        return p

    state = AdamState(lr=schedule.initial_lr)
    log = []
    for epoch in range(schedule.epochs):
        state = replace(state, lr=schedule.lr_at(epoch))
        losses = []
        if loss == "ap":
            batches = (
                sample_episode(eligible, B, M, rng) for _ in range(steps)
            )
        else:
            batches = iter_flat_batches(items, labels, len(classes), schedule.batch_size, rng)
        for batch in batches:
            if loss == "ap":
                b, m = batch.items.shape[:2]
                emb, cache = model.forward(batch.items.reshape(b * m, *batch.items.shape[2:]))
                res = angular_prototypical_loss(emb.reshape(b, m, dim), head)
                g_emb = res.grad_embeddings.reshape(b * m, dim)
            else:
                emb, cache = model.forward(batch.items)
                res = _flat_loss(loss, emb, batch.labels, head, am_cfg)
                g_emb = res.grad_embeddings
            grads = {f"model/{k}": v for k, v in model.backward(g_emb, cache).items()}
            grads.update({f"head/{k}": v for k, v in res.grad_params.items()})
            new, state = adam_step(pack(), grads, state)
            model.set_params({k[6:]: v for k, v in new.items() if k.startswith("model/")})
            _assign_head(loss, head, {k[5:]: v for k, v in new.items() if k.startswith("head/")})
            losses.append(res.value)
        log.append(
            {
                "stage": schedule.stage,
                "loss_fn": loss,
                "epoch": epoch + 1,
                "lr": state.lr,
                "train_loss": float(np.mean(losses)),
                "steps": len(losses),
            }
        )
    return TrainResult(model, head, log)


CKPT_MAGIC = b"UKWSCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, model):
    """Magic, u32 version, u32-prefixed UTF-8 JSON config, then LE float64 blocks."""
    cfg = json.dumps({"embedder": model.config.to_dict()}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(cfg)))
        fh.write(cfg)
        for name, _ in model.config.layer_shapes():
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    meta = json.loads(blob[offset : offset + n].decode("utf-8"))
    offset += n
    config = EmbedderConfig.from_dict(meta["embedder"])
    params = {}
    for name, shape in config.layer_shapes():
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError(f"{path}: truncated parameter block {name}")
        params[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after parameters")
    return Embedder(config, params)
