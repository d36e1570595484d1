"""Synthetic datasets and the trained classifier zoo.

Datasets live in [0,1]^d and are regenerated from their spec (never
persisted). Training is full-batch deterministic gradient descent so
the (config, seed) -> model map is a pure function.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (InvalidSpec, MalformedModelFile, TrainingDiverged,
                     UnsupportedFormatVersion)
from .nn import Layer, MlpModel, forward

DATASET_KINDS = ("gaussian_blobs", "concentric_rings", "xor_grid")
MODEL_FORMAT_MAGIC = "advbench-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    dimension: int
    class_count: int
    sample_count: int
    noise_scale: float
    seed: int

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise InvalidSpec(f"unknown dataset kind {self.kind!r}")
        if self.dimension < 2:
            raise InvalidSpec("dimension must be >= 2")
        if self.class_count < 2:
            raise InvalidSpec("class_count must be >= 2")
        if self.kind == "xor_grid" and self.class_count != 2:
            raise InvalidSpec("xor_grid requires class_count == 2")
        if self.sample_count < 1:
            raise InvalidSpec("sample_count must be >= 1")
        if self.noise_scale < 0:
            raise InvalidSpec("noise_scale must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension,
                "class_count": self.class_count,
                "sample_count": self.sample_count,
                "noise_scale": self.noise_scale, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(kind=d["kind"], dimension=int(d["dimension"]),
                   class_count=int(d["class_count"]),
                   sample_count=int(d["sample_count"]),
                   noise_scale=float(d["noise_scale"]), seed=int(d["seed"]))


@dataclass(frozen=True)
class LabeledDataset:
    xs: np.ndarray  # (N, d) in [0,1]
    ys: np.ndarray  # (N,) int labels
    spec: DatasetSpec


def blob_centers(dimension: int, class_count: int) -> np.ndarray:
    """Fixed per-(d, C) blob centers inside [0.2, 0.8]^d."""
    rng = np.random.default_rng(0xB10B)
    return rng.uniform(0.2, 0.8, size=(class_count, dimension))


def generate_dataset(spec: DatasetSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    n, d, c = spec.sample_count, spec.dimension, spec.class_count
    xs = np.empty((n, d))
    ys = np.empty(n, dtype=np.int64)
    if spec.kind == "gaussian_blobs":
        centers = blob_centers(d, c)
        for i in range(n):
            label = i % c
            xs[i] = centers[label] + spec.noise_scale * rng.standard_normal(d)
            ys[i] = label
    elif spec.kind == "concentric_rings":
        radii = np.linspace(0.1, 0.42, c)
        for i in range(n):
            label = i % c
            direction = rng.standard_normal(d)
            direction /= np.linalg.norm(direction)
            r = radii[label] + spec.noise_scale * rng.standard_normal()
            xs[i] = 0.5 + r * direction
            ys[i] = label
    else:  # xor_grid, binary by quadrant parity of the first two coords
        for i in range(n):
            target = i % 2
            while True:
                x = rng.uniform(0.0, 1.0, d)
                label = int((x[0] > 0.5) != (x[1] > 0.5))
                if label == target:
                    break
            xs[i] = x + spec.noise_scale * rng.standard_normal(d)
            ys[i] = target
    np.clip(xs, 0.0, 1.0, out=xs)
    return LabeledDataset(xs=xs, ys=ys, spec=spec)


@dataclass(frozen=True)
class ArchSpec:
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(hidden=tuple(int(h) for h in d["hidden"]),
                   activation=d["activation"])


@dataclass(frozen=True)
class AdvTrainInner:
    norm: str = "inf"   # "inf" or "2"
    eps: float = 0.1
    pgd_steps: int = 10

    def to_dict(self) -> dict:
        return {"norm": self.norm, "eps": self.eps,
                "pgd_steps": self.pgd_steps}


@dataclass
class ZooEntry:
    model: MlpModel
    training: str             # "standard" | "adversarial"
    train_config_digest: str
    clean_accuracy: float
    identifier: str
    metadata: dict = field(default_factory=dict)


# ----- batched training internals ------------------------------------------

def _init_params(rng: np.random.Generator, dims: list[int], activation: str):
    layers = []
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        scale = np.sqrt(2.0 / din)
        w = rng.standard_normal((dout, din)) * scale
        b = np.zeros(dout)
        act = activation if i < len(dims) - 2 else "identity"
        layers.append([w, b, act])
    return layers


def _batch_forward(layers, X):
    acts = [X]
    pres = []
    a = X
    for w, b, act in layers:
        z = a @ w.T + b
        pres.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
        acts.append(a)
    return acts, pres


def _softmax(z):
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _ce_loss_and_param_grads(layers, X, Y):
    n = X.shape[0]
    acts, pres = _batch_forward(layers, X)
    logits = acts[-1]
    p = _softmax(logits)
    eps = 1e-300
    loss = -np.mean(np.log(p[np.arange(n), Y] + eps))
    g = p
    g[np.arange(n), Y] -= 1.0
    g /= n
    grads = []
    for idx in range(len(layers) - 1, -1, -1):
        w, b, act = layers[idx]
        if act == "relu":
            g = g * (pres[idx] > 0.0)
        gw = g.T @ acts[idx]
        gb = np.sum(g, axis=0)
        grads.append((gw, gb))
        g = g @ w
    grads.reverse()
    return loss, grads


def _ce_input_grads(layers, X, Y):
    n = X.shape[0]
    acts, pres = _batch_forward(layers, X)
    p = _softmax(acts[-1])
    g = p
    g[np.arange(n), Y] -= 1.0
    for idx in range(len(layers) - 1, -1, -1):
        w, b, act = layers[idx]
        if act == "relu":
            g = g * (pres[idx] > 0.0)
        g = g @ w
    return g


def _pgd_batch(layers, X, Y, inner: AdvTrainInner):
    """Batched training-time PGD (ascends cross-entropy)."""
    delta = np.zeros_like(X)
    if inner.eps == 0.0 or inner.pgd_steps < 1:
        return X
    step = 2.0 * inner.eps / inner.pgd_steps
    for _ in range(inner.pgd_steps):
        g = _ce_input_grads(layers, X + delta, Y)
        if inner.norm == "inf":
            delta = delta + step * np.sign(g)
            delta = np.clip(delta, -inner.eps, inner.eps)
        else:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            delta = delta + step * g / np.maximum(norms, 1e-12)
            dn = np.linalg.norm(delta, axis=1, keepdims=True)
            scale = np.minimum(1.0, inner.eps / np.maximum(dn, 1e-12))
            delta = delta * scale
        delta = np.clip(X + delta, 0.0, 1.0) - X
    return np.clip(X + delta, 0.0, 1.0)


def _split(data: LabeledDataset):
    """Held-out split: last 20% of the generated samples."""
    n = data.xs.shape[0]
    n_hold = max(1, n // 5)
    n_train = n - n_hold
    if n_train < 1:
        raise InvalidSpec("dataset too small to split")
    return (data.xs[:n_train], data.ys[:n_train],
            data.xs[n_train:], data.ys[n_train:])


def _to_model(layers) -> MlpModel:
    return MlpModel(tuple(Layer(w.copy(), b.copy(), act)
                          for w, b, act in layers))


def clean_accuracy(model: MlpModel, xs: np.ndarray, ys: np.ndarray) -> float:
    hits = 0
    for x, y in zip(xs, ys):
        if int(np.argmax(forward(model, x))) == int(y):
            hits += 1
    return hits / len(ys)


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _train(arch: ArchSpec, data: LabeledDataset, epochs: int, lr: float,
           seed: int, inner: AdvTrainInner | None, identifier: str | None):
    if epochs < 1:
        raise InvalidSpec("epochs must be >= 1")
    if lr <= 0:
        raise InvalidSpec("learning rate must be positive")
    xtr, ytr, xho, yho = _split(data)
    dims = [data.xs.shape[1], *arch.hidden, data.spec.class_count]
    rng = np.random.default_rng(seed)
    layers = _init_params(rng, dims, arch.activation)
    for _ in range(epochs):
        batch = xtr if inner is None else _pgd_batch(layers, xtr, ytr, inner)
        loss, grads = _ce_loss_and_param_grads(layers, batch, ytr)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss}")
        for (w, b, _), (gw, gb) in zip(layers, grads):
            w -= lr * gw
            b -= lr * gb
    model = _to_model(layers)
    training = "standard" if inner is None else "adversarial"
    cfg = {"arch": arch.to_dict(), "dataset": data.spec.to_dict(),
           "epochs": epochs, "lr": lr, "seed": seed, "training": training,
           "inner": inner.to_dict() if inner else None}
    digest = _digest(cfg)
    acc = clean_accuracy(model, xho, yho)
    if identifier is None:
        identifier = f"{data.spec.kind}-{training}-{digest[:8]}"
    return ZooEntry(model=model, training=training,
                    train_config_digest=digest, clean_accuracy=acc,
                    identifier=identifier, metadata=cfg)


def train_standard(arch: ArchSpec, data: LabeledDataset, epochs: int,
                   lr: float, seed: int,
                   identifier: str | None = None) -> ZooEntry:
    return _train(arch, data, epochs, lr, seed, None, identifier)


def train_adversarial(arch: ArchSpec, data: LabeledDataset, epochs: int,
                      lr: float, seed: int, inner: AdvTrainInner,
                      identifier: str | None = None) -> ZooEntry:
    if inner.eps < 0:
        raise InvalidSpec("inner eps must be >= 0")
    if inner.pgd_steps < 1:
        raise InvalidSpec("inner pgd_steps must be >= 1")
    return _train(arch, data, epochs, lr, seed, inner, identifier)


# ----- persistence ----------------------------------------------------------

def persist_model(entry: ZooEntry, path) -> None:
    doc = {
        "magic": MODEL_FORMAT_MAGIC,
        "format_version": MODEL_FORMAT_VERSION,
        "identifier": entry.identifier,
        "training": entry.training,
        "train_config_digest": entry.train_config_digest,
        "clean_accuracy": entry.clean_accuracy,
        "metadata": entry.metadata,
        "layers": [{"weight": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation}
                   for layer in entry.model.layers],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_model(path) -> ZooEntry:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedModelFile(f"{path}: not valid JSON") from exc
    if not isinstance(doc, dict) or doc.get("magic") != MODEL_FORMAT_MAGIC:
        raise MalformedModelFile(f"{path}: missing or wrong magic header")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise UnsupportedFormatVersion(
            f"{path}: format_version {doc.get('format_version')!r}")
    try:
        layers = tuple(Layer(np.array(l["weight"], dtype=np.float64),
                             np.array(l["bias"], dtype=np.float64),
                             l["activation"])
                       for l in doc["layers"])
        return ZooEntry(model=MlpModel(layers),
                        training=doc["training"],
                        train_config_digest=doc["train_config_digest"],
                        clean_accuracy=float(doc["clean_accuracy"]),
                        identifier=doc["identifier"],
                        metadata=doc.get("metadata", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModelFile(f"{path}: {exc}") from exc
