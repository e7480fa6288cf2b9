"""Dense-ReLU-Dropout network and 1x1-conv CNN, with hand-written backprop.

Both networks end in a single sigmoid unit and are trained on binary
cross-entropy with mini-batch SGD + momentum.  Everything is float64 numpy.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    ChecksumFailure,
    InvalidSpec,
    NonFinite,
    ShapeMismatch,
    SingleClass,
    SpecMismatch,
    VersionMismatch,
)


@dataclass(frozen=True)
class DnnSpec:
    layer_sizes: tuple[int, ...] = (57, 64, 32, 16, 1)
    dropout: float = 0.25
    dropout_after: tuple[int, ...] = (2, 3)  # 1-based index of the dense layer

    kind = "dnn"

    def validate(self):
        if len(self.layer_sizes) != 5:
            raise InvalidSpec("DNN must have exactly four dense layers")
        if self.layer_sizes[-1] != 1:
            raise InvalidSpec("DNN output width must be 1")
        if any(s < 1 for s in self.layer_sizes):
            raise InvalidSpec("layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidSpec("dropout must be in [0, 1)")
        if any(not 1 <= i <= 3 for i in self.dropout_after):
            raise InvalidSpec("dropout can follow hidden layers 1-3 only")

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @classmethod
    def for_input(cls, d_in: int, hidden=(64, 32, 16), dropout: float = 0.25) -> "DnnSpec":
        return cls((d_in, *hidden, 1), dropout)


@dataclass(frozen=True)
class CnnSpec:
    d_in: int = 57
    channels: int = 5
    fc_width: int = 39
    dropout1: float = 0.25
    dropout2: float = 0.5

    kind = "cnn"

    def validate(self):
        if self.d_in < 1:
            raise InvalidSpec("input width must be positive")
        if self.channels != 5 or self.fc_width != 39:
            raise InvalidSpec("CNN uses 5 conv channels and a 39-wide dense layer")
        for p in (self.dropout1, self.dropout2):
            if not 0.0 <= p < 1.0:
                raise InvalidSpec("dropout must be in [0, 1)")

    @property
    def grid(self) -> int:
        """Side of the square grid the feature vector is laid onto (row-major, zero padded)."""
        return math.ceil(math.sqrt(self.d_in))

    @property
    def pooled(self) -> int:
        # ceil-mode pooling keeps the last row/column of odd grids
        return math.ceil(self.grid / 2)

    @property
    def flat(self) -> int:
        return self.channels * self.pooled**2

    @classmethod
    def for_input(cls, d_in: int, **kw) -> "CnnSpec":
        return cls(d_in, **kw)


def param_shapes(spec) -> dict[str, tuple[int, ...]]:
    if spec.kind == "dnn":
        s = spec.layer_sizes
        out = {}
        for i in range(4):
            out[f"W{i + 1}"] = (s[i], s[i + 1])
            out[f"b{i + 1}"] = (s[i + 1],)
        return out
    return {
        "conv_w": (spec.channels,),
        "conv_b": (spec.channels,),
        "fc1_w": (spec.flat, spec.fc_width),
        "fc1_b": (spec.fc_width,),
        "out_w": (spec.fc_width, 1),
        "out_b": (1,),
    }


def _fans(spec, name, shape):
    if name == "conv_w":
        return 1, spec.channels  # 1x1 kernel, one input channel
    return shape[0], shape[1]


@dataclass
class ModelState:
    spec: DnnSpec | CnnSpec
    params: dict[str, np.ndarray]
    seed: int = 0
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ModelState":
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()}, self.seed, self.epoch,
                          json.loads(json.dumps(self.meta)))

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in param_shapes(self.spec)])


def init_model(spec, seed: int = 0) -> ModelState:
    """Glorot-uniform weights, zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.startswith("b") or name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(spec, name, shape)
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-lim, lim, size=shape)
    return ModelState(spec, params, seed)


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def to_grid(X: np.ndarray, side: int) -> np.ndarray:
    m, d = X.shape
    g = np.zeros((m, side * side))
    g[:, :d] = X
    return g.reshape(m, side, side)


def _dropout_mask(rng, shape, p):
    if p <= 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def dropout_sites(spec) -> dict[str, float]:
    if spec.kind == "dnn":
        return {f"drop{i}": spec.dropout for i in spec.dropout_after}
    return {"drop_pool": spec.dropout1, "drop_fc1": spec.dropout2}


def draw_masks(model: ModelState, m: int, rng) -> dict[str, np.ndarray]:
    spec = model.spec
    if spec.kind == "dnn":
        shapes = {f"drop{i}": (m, spec.layer_sizes[i]) for i in spec.dropout_after}
    else:
        shapes = {"drop_pool": (m, spec.channels, spec.pooled, spec.pooled), "drop_fc1": (m, spec.fc_width)}
    rates = dropout_sites(spec)
    return {k: _dropout_mask(rng, shapes[k], rates[k]) for k in shapes}


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.spec.d_in:
        raise ShapeMismatch(f"model expects {model.spec.d_in} features, got shape {X.shape}")
    return X


def _forward_dnn(model, X, masks):
    p = model.params
    cache = {"a0": X}
    a = X
    for i in range(1, 5):
        z = a @ p[f"W{i}"] + p[f"b{i}"]
        if i == 4:
            cache["z4"] = z
            return z[:, 0], cache
        cache[f"z{i}"] = z
        a = np.maximum(z, 0.0)
        if masks is not None and f"drop{i}" in masks:
            a = a * masks[f"drop{i}"]
        cache[f"a{i}"] = a


def _forward_cnn(model, X, masks):
    p = model.params
    spec = model.spec
    side, P, C = spec.grid, spec.pooled, spec.channels
    m = X.shape[0]
    G = to_grid(X, side)
    z1 = G[:, None, :, :] * p["conv_w"][None, :, None, None] + p["conv_b"][None, :, None, None]
    a1 = np.maximum(z1, 0.0)
    padded = np.full((m, C, 2 * P, 2 * P), -np.inf)
    padded[:, :, :side, :side] = a1
    blocks = padded.reshape(m, C, P, 2, P, 2).transpose(0, 1, 2, 4, 3, 5).reshape(m, C, P, P, 4)
    arg = np.argmax(blocks, axis=-1)
    pooled = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    if masks is not None and "drop_pool" in masks:
        pooled = pooled * masks["drop_pool"]
    flat = pooled.reshape(m, -1)
    z2 = flat @ p["fc1_w"] + p["fc1_b"]
    a2 = np.maximum(z2, 0.0)
    if masks is not None and "drop_fc1" in masks:
        a2 = a2 * masks["drop_fc1"]
    z3 = a2 @ p["out_w"] + p["out_b"]
    cache = dict(G=G, z1=z1, arg=arg, flat=flat, z2=z2, a2=a2)
    return z3[:, 0], cache


def logits(model: ModelState, X, masks=None):
    X = _check_input(model, X)
    if model.spec.kind == "dnn":
        return _forward_dnn(model, X, masks)
    return _forward_cnn(model, X, masks)


def forward(model: ModelState, X, mode: str = "eval", rng=None, masks=None) -> np.ndarray:
    """Sigmoid output per row.  ``train`` mode applies inverted dropout."""
    if mode == "train" and masks is None:
        if rng is None:
            raise ValueError("train mode needs an rng or explicit masks")
        masks = draw_masks(model, _check_input(model, X).shape[0], rng)
    elif mode == "eval":
        masks = None
    elif mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    z, _ = logits(model, X, masks)
    return sigmoid(z)


def bce_from_logits(z, y) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _backward_dnn(model, cache, dz, masks):
    p = model.params
    grads = {}
    g = dz[:, None]  # dL/dz4
    for i in range(4, 0, -1):
        a_prev = cache[f"a{i - 1}"]
        grads[f"W{i}"] = a_prev.T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        if i == 1:
            break
        g = g @ p[f"W{i}"].T
        if masks is not None and f"drop{i - 1}" in masks:
            g = g * masks[f"drop{i - 1}"]
        g = g * (cache[f"z{i - 1}"] > 0)
    return grads


def _backward_cnn(model, cache, dz, masks):
    p = model.params
    spec = model.spec
    side, P, C = spec.grid, spec.pooled, spec.channels
    m = dz.shape[0]
    grads = {}
    g3 = dz[:, None]
    grads["out_w"] = cache["a2"].T @ g3
    grads["out_b"] = g3.sum(axis=0)
    g2 = g3 @ p["out_w"].T
    if masks is not None and "drop_fc1" in masks:
        g2 = g2 * masks["drop_fc1"]
    g2 = g2 * (cache["z2"] > 0)
    grads["fc1_w"] = cache["flat"].T @ g2
    grads["fc1_b"] = g2.sum(axis=0)
    gpool = (g2 @ p["fc1_w"].T).reshape(m, C, P, P)
    if masks is not None and "drop_pool" in masks:
        gpool = gpool * masks["drop_pool"]
    gblocks = np.zeros((m, C, P, P, 4))
    np.put_along_axis(gblocks, cache["arg"][..., None], gpool[..., None], axis=-1)
    gpad = gblocks.reshape(m, C, P, P, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(m, C, 2 * P, 2 * P)
    ga1 = gpad[:, :, :side, :side]
    gz1 = ga1 * (cache["z1"] > 0)
    grads["conv_w"] = np.einsum("mcij,mij->c", gz1, cache["G"])
    grads["conv_b"] = gz1.sum(axis=(0, 2, 3))
    return grads


def loss_and_grad(model: ModelState, X, y, masks=None):
    """Mean BCE over the batch and its gradient for every parameter."""
    X = _check_input(model, X)
    y = np.asarray(y, dtype=np.float64)
    z, cache = logits(model, X, masks)
    loss = bce_from_logits(z, y)
    dz = (sigmoid(z) - y) / X.shape[0]
    if model.spec.kind == "dnn":
        grads = _backward_dnn(model, cache, dz, masks)
    else:
        grads = _backward_cnn(model, cache, dz, masks)
    grads = {k: grads[k].reshape(model.params[k].shape) for k in model.params}
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 16
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise InvalidSpec("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpec("epochs and batch_size must be >= 1")


def train(model: ModelState, X, y, cfg: TrainConfig = TrainConfig()):
    """Mini-batch SGD with momentum; returns (trained copy, per-epoch mean loss)."""
    cfg.validate()
    X = _check_input(model, X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ShapeMismatch("y must have one label per row")
    if np.unique(y).size < 2:
        raise SingleClass("training labels contain a single class")
    if not np.all(np.isfinite(X)):
        raise NonFinite("training inputs contain non-finite values")
    out = model.copy()
    rng = np.random.default_rng(cfg.seed)
    vel = {k: np.zeros_like(v) for k, v in out.params.items()}
    n = X.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            masks = draw_masks(out, idx.size, rng)
            loss, grads = loss_and_grad(out, X[idx], y[idx], masks)
            if not math.isfinite(loss):
                raise NonFinite(f"loss diverged at epoch {epoch + 1}")
            total += loss * idx.size
            for k in out.params:
                vel[k] = cfg.momentum * vel[k] - cfg.learning_rate * grads[k]
                out.params[k] += vel[k]
        history.append(total / n)
        out.epoch += 1
    if not all(np.all(np.isfinite(v)) for v in out.params.values()):
        raise NonFinite("parameters became non-finite")
    return out, np.array(history)


def predict(model: ModelState, X, threshold: float = 0.5):
    prob = forward(model, X, "eval")
    return (prob >= threshold).astype(np.int64), prob


# --------------------------------------------------------------------------- #
# Weights file
# --------------------------------------------------------------------------- #

MAGIC = b"BRSM"
FORMAT_VERSION = 1
_KIND_TAG = {"dnn": 1, "cnn": 2}


def _spec_to_dict(spec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _spec_from(kind: str, d: dict):
    if kind == "dnn":
        return DnnSpec(tuple(d["layer_sizes"]), d["dropout"], tuple(d["dropout_after"]))
    return CnnSpec(**d)


def save_model(model: ModelState) -> bytes:
    """magic | u16 version | u8 kind | u32 header len | JSON header | u64 n | f64le params | u32 crc32."""
    header = json.dumps(
        {
            "kind": model.spec.kind,
            "spec": _spec_to_dict(model.spec),
            "seed": model.seed,
            "epoch": model.epoch,
            "meta": model.meta,
        },
        sort_keys=True,
    ).encode("utf-8")
    flat = model.flat_params().astype("<f8")
    body = (
        MAGIC
        + struct.pack("<HBI", FORMAT_VERSION, _KIND_TAG[model.spec.kind], len(header))
        + header
        + struct.pack("<Q", flat.size)
        + flat.tobytes()
    )
    return body + struct.pack("<I", zlib.crc32(body))


def load_model(data: bytes, expect_kind: str | None = None) -> ModelState:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a model file")
    if len(data) < 11 + 8 + 4:
        raise ChecksumFailure("model file truncated")
    version, tag, hlen = struct.unpack_from("<HBI", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format {version}, expected {FORMAT_VERSION}")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ChecksumFailure("model checksum mismatch")
    header = json.loads(data[11 : 11 + hlen].decode("utf-8"))
    kind = header["kind"]
    if _KIND_TAG.get(kind) != tag:
        raise SpecMismatch("kind tag disagrees with header")
    if expect_kind is not None and kind != expect_kind:
        raise SpecMismatch(f"file holds a {kind} model, expected {expect_kind}")
    spec = _spec_from(kind, header["spec"])
    spec.validate()
    off = 11 + hlen
    (n,) = struct.unpack_from("<Q", data, off)
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=off + 8).astype(np.float64)
    params = {}
    pos = 0
    for name, shape in param_shapes(spec).items():
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].reshape(shape).copy()
        pos += size
    if pos != n:
        raise SpecMismatch("parameter count does not match spec")
    return ModelState(spec, params, header["seed"], header["epoch"], header.get("meta", {}))
