"""Per-channel speech/noise mask estimation network and median pooling.

The network maps one channel's magnitude spectrum, frame by frame, to the
concatenation ``[noise mask | speech mask]`` of width ``2F``. Magnitudes
are log-compressed and standardized per utterance and channel before the
first layer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import (FreezeViolationError, InvalidConfigError, InvalidInputError,
                     ShapeError, StateError)

LOG_FLOOR = 1e-8
BCE_FLOOR = 1e-12


@dataclass(frozen=True)
class MaskNetConfig:
    input_dim: int = 201
    hidden_dims: tuple = (64, 128, 128)
    recurrent_first_layer: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise InvalidConfigError("input_dim must be >= 1")
        if not self.hidden_dims:
            raise InvalidConfigError("mask network needs at least one hidden layer")
        if min(self.hidden_dims) < 1:
            raise InvalidConfigError("layer widths must be >= 1")

    @property
    def output_dim(self) -> int:
        return 2 * self.input_dim

    def to_meta(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return {"kind": "masknet", "config": d}

    @classmethod
    def from_meta(cls, meta: dict) -> "MaskNetConfig":
        return cls(**meta["config"])


@dataclass
class MaskPair:
    speech: np.ndarray  # [T, F] (or [M, T, F] per channel)
    noise: np.ndarray


@dataclass
class MaskRecord:
    """Forward record of :func:`forward` for a batch of channels."""
    inputs: np.ndarray           # standardized input [B, T, F]
    rnn: tuple | None
    dense: list
    out: np.ndarray              # sigmoid outputs [B, T, 2F]
    cfg: MaskNetConfig = field(repr=False, default=None)


def init_params(cfg: MaskNetConfig) -> nn.ParamStore:
    """Deterministic fan-in scaled uniform weights and zero biases from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    width = cfg.input_dim
    hidden = list(cfg.hidden_dims)
    if cfg.recurrent_first_layer:
        h = hidden.pop(0)
        for direction in ("f", "b"):
            w, b = nn.init_dense(rng, width, h, gain=3.0)
            u, _ = nn.init_dense(rng, h, h, gain=1.0)
            params[f"rnn.{direction}.w"], params[f"rnn.{direction}.u"] = w, u
            params[f"rnn.{direction}.b"] = b
        width = 2 * h
    dims = hidden + [cfg.output_dim]
    for i, out_dim in enumerate(dims):
        gain = 6.0 if i < len(dims) - 1 else 3.0
        params[f"dense{i}.w"], params[f"dense{i}.b"] = nn.init_dense(rng, width, out_dim, gain)
        width = out_dim
    return nn.ParamStore(params, meta=cfg.to_meta())


def _n_dense(cfg: MaskNetConfig) -> int:
    return len(cfg.hidden_dims) + (0 if cfg.recurrent_first_layer else 1)


def standardize(magnitude: np.ndarray) -> np.ndarray:
    """Log-magnitude, standardized over each utterance/channel (last two axes)."""
    logmag = np.log(magnitude + LOG_FLOOR)
    mean = logmag.mean(axis=(-2, -1), keepdims=True)
    std = logmag.std(axis=(-2, -1), keepdims=True)
    return (logmag - mean) / np.maximum(std, 1e-6)


def forward(magnitude, params: nn.ParamStore, cfg: MaskNetConfig | None = None,
            return_record: bool = False):
    """Masks for one channel ``[T, F]`` or a channel batch ``[B, T, F]``.

    Returns a :class:`MaskPair` shaped like the input (plus the record when
    ``return_record``).
    """
    cfg = cfg or MaskNetConfig.from_meta(params.meta)
    mag = np.asarray(magnitude, dtype=np.float64)
    single = mag.ndim == 2
    if single:
        mag = mag[None]
    if mag.ndim != 3 or mag.shape[-1] != cfg.input_dim:
        raise ShapeError(f"expected [..., T, {cfg.input_dim}] magnitudes, got {np.shape(magnitude)}")
    if np.any(mag < 0) or not np.all(np.isfinite(mag)):
        raise InvalidInputError("magnitudes must be finite and nonnegative")
    x = standardize(mag)
    rnn_rec = None
    h = x
    if cfg.recurrent_first_layer:
        h, rnn_rec = nn.birnn_forward(params, "rnn.", h)
    logits, dense = nn.dense_stack_forward(params, "dense", _n_dense(cfg), h)
    out = nn.sigmoid(logits)
    f = cfg.input_dim
    noise, speech = out[..., :f], out[..., f:]
    if single:
        noise, speech = noise[0], speech[0]
    pair = MaskPair(speech=speech, noise=noise)
    if return_record:
        return pair, MaskRecord(x, rnn_rec, dense, out, cfg)
    return pair


def backward_logits(record: MaskRecord | None, logit_bar, params: nn.ParamStore) -> dict:
    """Accumulate parameter gradients given the cotangent of the pre-sigmoid outputs."""
    if record is None:
        raise StateError("mask backward needs a forward record")
    if params.frozen:
        raise FreezeViolationError("mask estimator store is frozen")
    cfg = record.cfg
    logit_bar = np.asarray(logit_bar, dtype=np.float64).reshape(record.out.shape)
    need_input = cfg.recurrent_first_layer
    grads, h_bar = nn.dense_stack_backward(params, "dense", record.dense, logit_bar, need_input)
    if cfg.recurrent_first_layer:
        grads.update(nn.birnn_backward(params, "rnn.", record.rnn, h_bar))
    params.accumulate(grads)
    return grads


def backward(record: MaskRecord | None, out_cotangents: MaskPair, params: nn.ParamStore) -> dict:
    """Accumulate (``+=``) parameter gradients for cotangents on the masks."""
    if record is None:
        raise StateError("mask backward needs a forward record")
    noise_bar = np.asarray(out_cotangents.noise, dtype=np.float64)
    speech_bar = np.asarray(out_cotangents.speech, dtype=np.float64)
    out_bar = np.concatenate([noise_bar.reshape(record.out.shape[:-1] + (-1,)),
                              speech_bar.reshape(record.out.shape[:-1] + (-1,))], axis=-1)
    out = record.out
    return backward_logits(record, out_bar * out * (1.0 - out), params)


def median_mask(per_channel) -> np.ndarray:
    """Element-wise median over channels; even counts average the two central values."""
    masks = np.asarray(per_channel, dtype=np.float64)
    if masks.ndim < 1 or masks.shape[0] < 1:
        raise ShapeError("need at least one channel mask")
    ordered = np.sort(masks, axis=0)
    n = masks.shape[0]
    if n % 2:
        return ordered[n // 2].copy()
    return 0.5 * (ordered[n // 2 - 1] + ordered[n // 2])


def median_mask_vjp(per_channel, out_bar) -> np.ndarray:
    """Route the pooled cotangent to the median-defining channel(s).

    Ties are broken by a stable sort, so routed cotangents always sum to the
    incoming one.
    """
    masks = np.asarray(per_channel, dtype=np.float64)
    out_bar = np.asarray(out_bar, dtype=np.float64)
    n = masks.shape[0]
    order = np.argsort(masks, axis=0, kind="stable")
    grad = np.zeros_like(masks)
    if n % 2:
        np.put_along_axis(grad, order[n // 2][None], out_bar[None], axis=0)
    else:
        half = 0.5 * out_bar
        np.put_along_axis(grad, order[n // 2 - 1][None], half[None], axis=0)
        lower = np.take_along_axis(grad, order[n // 2][None], axis=0)
        np.put_along_axis(grad, order[n // 2][None], lower + half[None], axis=0)
    return grad


def bce(pred, target) -> float:
    """Mean binary cross-entropy with predictions clipped to ``[1e-12, 1 - 1e-12]``."""
    p = np.clip(np.asarray(pred, dtype=np.float64), BCE_FLOOR, 1.0 - BCE_FLOOR)
    y = np.asarray(target, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _targets(scene) -> np.ndarray:
    m = scene.ideal_masks
    return np.concatenate([m.noise, m.speech], axis=-1)[None]


def dataset_bce(params: nn.ParamStore, scenes, cfg: MaskNetConfig | None = None) -> float:
    losses = []
    for scene in scenes:
        pair = forward(np.abs(scene.y.data), params, cfg)
        out = np.concatenate([pair.noise, pair.speech], axis=-1)
        losses.append(bce(out, np.broadcast_to(_targets(scene), out.shape)))
    return float(np.mean(losses))


def pretrain_supervised(scenes, params: nn.ParamStore, epochs: int = 30,
                        lr: float = 3e-3, cfg: MaskNetConfig | None = None):
    """Fit every channel's masks to the scene's ideal masks with BCE and Adam.

    One Adam step per scene per epoch, scenes visited in a fixed order.
    Returns ``(params, losses)`` where ``losses[0]`` is the initial dataset
    BCE and ``losses[e]`` the BCE after epoch ``e``.
    """
    scenes = list(scenes)
    if not scenes:
        raise InvalidInputError("pretraining needs at least one scene")
    if epochs < 0:
        raise InvalidConfigError("epochs must be >= 0")
    cfg = cfg or MaskNetConfig.from_meta(params.meta)
    opt = nn.Adam(params, lr)
    losses = [dataset_bce(params, scenes, cfg)]
    for _ in range(epochs):
        for scene in scenes:
            params.zero_grad()
            _, rec = forward(np.abs(scene.y.data), params, cfg, return_record=True)
            target = np.broadcast_to(_targets(scene), rec.out.shape)
            backward_logits(rec, (rec.out - target) / rec.out.size, params)
            opt.step()
        losses.append(dataset_bce(params, scenes, cfg))
    params.zero_grad()
    return params, losses
