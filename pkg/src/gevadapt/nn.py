"""Parameter stores, dense/recurrent layers with hand-written backward
passes, a small Adam optimizer and the checkpoint container shared by the
mask estimator and the acoustic model."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import FormatError, FreezeViolationError, InvalidConfigError, ShapeError


@dataclass
class ParamStore:
    """Named float64 tensors with paired gradient buffers.

    ``buffers`` hold non-trainable state (feature statistics) that is saved
    and digested but never updated by gradient steps.
    """
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    frozen: bool = False
    grads: dict = field(init=False)

    def __post_init__(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __getitem__(self, name):
        if name in self.params:
            return self.params[name]
        return self.buffers[name]

    def __contains__(self, name):
        return name in self.params or name in self.buffers

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, grads: dict) -> None:
        if self.frozen:
            raise FreezeViolationError("cannot accumulate gradients into a frozen store")
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}")
            self.grads[name] += g

    def apply(self, updates: dict) -> None:
        """``param -= update`` for each named update."""
        if self.frozen:
            raise FreezeViolationError("cannot update a frozen parameter store")
        for name, u in updates.items():
            self.params[name] -= u

    def sgd_step(self, lr: float) -> None:
        self.apply({k: lr * g for k, g in self.grads.items()})

    def freeze(self) -> "ParamStore":
        self.frozen = True
        return self

    def copy(self) -> "ParamStore":
        out = ParamStore({k: v.copy() for k, v in self.params.items()},
                         {k: v.copy() for k, v in self.buffers.items()},
                         json.loads(json.dumps(self.meta)), self.frozen)
        for k, g in self.grads.items():
            out.grads[k][...] = g
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for group in (self.params, self.buffers):
            for name in sorted(group):
                arr = np.ascontiguousarray(group[name], dtype="<f8")
                h.update(name.encode())
                h.update(str(arr.shape).encode())
                h.update(arr.tobytes())
        return h.hexdigest()

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def init_dense(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 6.0):
    limit = np.sqrt(gain / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return expit(x)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dense_stack_forward(store: ParamStore, prefix: str, n_layers: int, x: np.ndarray):
    """ReLU hidden layers followed by a linear output layer.

    Returns ``(logits, cache)``; ``cache`` holds each layer's input and
    pre-activation.
    """
    cache = []
    h = x
    for i in range(n_layers):
        w, b = store[f"{prefix}{i}.w"], store[f"{prefix}{i}.b"]
        z = h @ w + b
        cache.append((h, z))
        h = relu(z) if i < n_layers - 1 else z
    return h, cache


def dense_stack_backward(store: ParamStore, prefix: str, cache, out_bar, need_input=False):
    grads = {}
    g = out_bar
    for i in range(len(cache) - 1, -1, -1):
        h, z = cache[i]
        if i < len(cache) - 1:
            g = g * (z > 0)
        w = store[f"{prefix}{i}.w"]
        flat_h = h.reshape(-1, h.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        grads[f"{prefix}{i}.w"] = flat_h.T @ flat_g
        grads[f"{prefix}{i}.b"] = flat_g.sum(axis=0)
        if i > 0 or need_input:
            g = g @ w.T
    return grads, (g if need_input else None)


def birnn_forward(store: ParamStore, prefix: str, x: np.ndarray):
    """Bidirectional Elman layer with tanh; ``x`` is ``[B, T, D]``, output ``[B, T, 2H]``."""
    outs, cache = [], []
    n_frames = x.shape[1]
    for direction in ("f", "b"):
        w, u, b = (store[f"{prefix}{direction}.{k}"] for k in ("w", "u", "b"))
        hidden = u.shape[0]
        order = range(n_frames) if direction == "f" else range(n_frames - 1, -1, -1)
        h_prev = np.zeros((x.shape[0], hidden))
        hs = np.zeros((x.shape[0], n_frames, hidden))
        for t in order:
            h_prev = np.tanh(x[:, t] @ w + h_prev @ u + b)
            hs[:, t] = h_prev
        outs.append(hs)
        cache.append(hs)
    return np.concatenate(outs, axis=-1), (x, cache)


def birnn_backward(store: ParamStore, prefix: str, rec, out_bar):
    x, cache = rec
    n_frames = x.shape[1]
    grads = {}
    hidden = cache[0].shape[-1]
    for d, direction in enumerate(("f", "b")):
        w, u = store[f"{prefix}{direction}.w"], store[f"{prefix}{direction}.u"]
        hs = cache[d]
        h_bar_out = out_bar[..., d * hidden:(d + 1) * hidden]
        gw, gu, gb = np.zeros_like(w), np.zeros_like(u), np.zeros(hidden)
        order = range(n_frames - 1, -1, -1) if direction == "f" else range(n_frames)
        step = -1 if direction == "f" else 1
        carry = np.zeros((x.shape[0], hidden))
        for t in order:
            dh = h_bar_out[:, t] + carry
            dz = dh * (1.0 - hs[:, t] ** 2)
            t_prev = t + step
            if 0 <= t_prev < n_frames:
                gu += hs[:, t_prev].T @ dz
            gw += x[:, t].T @ dz
            gb += dz.sum(axis=0)
            carry = dz @ u.T
        grads[f"{prefix}{direction}.w"] = gw
        grads[f"{prefix}{direction}.u"] = gu
        grads[f"{prefix}{direction}.b"] = gb
    return grads


class Adam:
    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise InvalidConfigError("learning rate must be >= 0")
        self.store, self.lr = store, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        updates = {}
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in self.store.grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            updates[k] = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        self.store.apply(updates)


# Checkpoint container:
#   magic b"GEVCKPT" + <u1 version> + <u4 header_len> + JSON header + tensors
# The header lists every tensor (group, name, shape) in payload order;
# payload is little-endian float64.
MAGIC = b"GEVCKPT"
VERSION = 1


def save_checkpoint(path, store: ParamStore) -> None:
    entries, blobs = [], []
    for group, tensors in (("params", store.params), ("buffers", store.buffers)):
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            entries.append({"group": group, "name": name, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = json.dumps({"meta": store.meta, "tensors": entries, "frozen": store.frozen},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<BI", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_meta: dict | None = None) -> ParamStore:
    """Load a store; ``expect_meta`` entries (e.g. kind, topology) must match exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<BI", blob, pos)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<BI")
    header = json.loads(blob[pos:pos + hlen])
    pos += hlen
    groups = {"params": {}, "buffers": {}}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if len(blob) < pos + 8 * count:
            raise FormatError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(entry["shape"])
        groups[entry["group"]][entry["name"]] = arr.astype(np.float64)
        pos += 8 * count
    meta = header["meta"]
    for key, value in (expect_meta or {}).items():
        if meta.get(key) != value:
            raise FormatError(
                f"{path}: checkpoint {key}={meta.get(key)!r} does not match expected {value!r}")
    return ParamStore(groups["params"], groups["buffers"], meta, header.get("frozen", False))
