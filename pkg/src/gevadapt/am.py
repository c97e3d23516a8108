"""Frame-classifier surrogate for the hybrid acoustic model.

An MLP over log-mel frames stacked with ``context`` neighbours on each
side (edges replicated). Each utterance's features are first centered by
their own per-band mean (unless ``utterance_norm`` is off), then
standardized with statistics frozen at training time and stored as
buffers of the parameter store.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import InvalidConfigError, InvalidInputError, ShapeError, StateError
from .signal import N_MELS

POSTERIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class AmConfig:
    n_states: int = 8
    context: int = 2
    hidden_dims: tuple = (128, 128)
    seed: int = 0
    n_features: int = N_MELS
    utterance_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.n_states < 2:
            raise InvalidConfigError("n_states must be >= 2")
        if self.context < 0:
            raise InvalidConfigError("context must be >= 0")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidConfigError("layer widths must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.n_features * (2 * self.context + 1)

    def to_meta(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return {"kind": "am", "config": d}

    @classmethod
    def from_meta(cls, meta: dict) -> "AmConfig":
        return cls(**meta["config"])


@dataclass
class AmRecord:
    features: np.ndarray
    stacked: np.ndarray
    cache: list
    posteriors: np.ndarray


def init_params(cfg: AmConfig) -> nn.ParamStore:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    width = cfg.input_dim
    dims = list(cfg.hidden_dims) + [cfg.n_states]
    for i, out_dim in enumerate(dims):
        gain = 6.0 if i < len(dims) - 1 else 3.0
        params[f"layer{i}.w"], params[f"layer{i}.b"] = nn.init_dense(rng, width, out_dim, gain)
        width = out_dim
    buffers = {"feat_mean": np.zeros(cfg.n_features), "feat_std": np.ones(cfg.n_features)}
    return nn.ParamStore(params, buffers, meta=cfg.to_meta())


def stack_context(features: np.ndarray, context: int) -> np.ndarray:
    n_frames = features.shape[0]
    idx = np.clip(np.arange(n_frames)[:, None] + np.arange(-context, context + 1)[None, :],
                  0, n_frames - 1)
    return features[idx].reshape(n_frames, -1)


def unstack_context_vjp(stacked_bar: np.ndarray, n_frames: int, context: int, n_feat: int):
    idx = np.clip(np.arange(n_frames)[:, None] + np.arange(-context, context + 1)[None, :],
                  0, n_frames - 1)
    out = np.zeros((n_frames, n_feat))
    np.add.at(out, idx.ravel(), stacked_bar.reshape(-1, n_feat))
    return out


def am_forward(features, params: nn.ParamStore, cfg: AmConfig | None = None,
               return_record: bool = False):
    """State posteriors ``[T, n_states]`` for log-mel features ``[T, n_features]``."""
    cfg = cfg or AmConfig.from_meta(params.meta)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cfg.n_features:
        raise ShapeError(f"expected [T, {cfg.n_features}] features, got {feats.shape}")
    if not np.all(np.isfinite(feats)):
        raise InvalidInputError("features must be finite")
    norm = (center(feats, cfg) - params["feat_mean"]) / params["feat_std"]
    stacked = stack_context(norm, cfg.context)
    logits, cache = nn.dense_stack_forward(params, "layer", len(cfg.hidden_dims) + 1, stacked)
    post = nn.softmax(logits)
    if return_record:
        return post, AmRecord(feats, stacked, cache, post)
    return post


def _check_targets(posteriors, targets) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.ndim != 1 or targets.shape[0] != posteriors.shape[0]:
        raise ShapeError(f"{targets.shape[0] if targets.ndim else 0} targets for "
                         f"{posteriors.shape[0]} frames")
    if np.any(targets < 0) or np.any(targets >= posteriors.shape[1]):
        raise InvalidInputError("target state out of range")
    return targets.astype(np.int64)


def ce_loss(posteriors, targets) -> float:
    """Mean over frames of ``-ln max(p[target], 1e-12)``."""
    post = np.asarray(posteriors, dtype=np.float64)
    targets = _check_targets(post, targets)
    picked = post[np.arange(post.shape[0]), targets]
    return float(-np.mean(np.log(np.maximum(picked, POSTERIOR_FLOOR))))


def ce_logit_grad(posteriors, targets, loss_grad: float = 1.0) -> np.ndarray:
    """Exact logit cotangent of :func:`ce_loss` (zero where the floor is active)."""
    post = np.asarray(posteriors, dtype=np.float64)
    targets = _check_targets(post, targets)
    n_frames = post.shape[0]
    rows = np.arange(n_frames)
    g = post.copy()
    g[rows, targets] -= 1.0
    live = post[rows, targets] > POSTERIOR_FLOOR
    return loss_grad * g * live[:, None] / n_frames


def am_backward(record: AmRecord | None, logit_bar, params: nn.ParamStore,
                cfg: AmConfig | None = None, need_params: bool = True):
    """Feature cotangent ``[T, n_features]``; parameter gradients are
    accumulated only when ``need_params`` and the store is not frozen."""
    if record is None:
        raise StateError("am_backward needs a forward record")
    cfg = cfg or AmConfig.from_meta(params.meta)
    grads, stacked_bar = nn.dense_stack_backward(params, "layer", record.cache, logit_bar,
                                                 need_input=True)
    if need_params and not params.frozen:
        params.accumulate(grads)
    norm_bar = unstack_context_vjp(stacked_bar, record.features.shape[0], cfg.context,
                                   cfg.n_features)
    feat_bar = norm_bar / params["feat_std"]
    if cfg.utterance_norm:
        feat_bar = feat_bar - feat_bar.mean(axis=0)
    return feat_bar


def center(features: np.ndarray, cfg: AmConfig) -> np.ndarray:
    return features - features.mean(axis=0) if cfg.utterance_norm else features


def set_feature_stats(params: nn.ParamStore, features_list, cfg: AmConfig | None = None) -> None:
    cfg = cfg or AmConfig.from_meta(params.meta)
    allf = np.concatenate([center(np.asarray(f, dtype=np.float64), cfg)
                           for f in features_list], axis=0)
    params.buffers["feat_mean"] = allf.mean(axis=0)
    params.buffers["feat_std"] = np.maximum(allf.std(axis=0), 1e-3)


def frame_accuracy(params: nn.ParamStore, dataset, cfg: AmConfig | None = None) -> float:
    hits = total = 0
    for feats, states in dataset:
        post = am_forward(feats, params, cfg)
        hits += int(np.sum(np.argmax(post, axis=1) == np.asarray(states)))
        total += len(states)
    return hits / total


def dataset_loss(params: nn.ParamStore, dataset, cfg: AmConfig | None = None) -> float:
    return float(np.mean([ce_loss(am_forward(f, params, cfg), s) for f, s in dataset]))


def am_train(dataset, cfg: AmConfig = AmConfig(), epochs: int = 20, lr: float = 1e-3,
             params: nn.ParamStore | None = None):
    """Train on ``(features, states)`` pairs with Adam, one step per utterance.

    Feature statistics are computed from the dataset when a fresh store is
    created. Returns ``(params, losses)`` with ``losses[0]`` the initial loss.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("am_train needs a nonempty dataset")
    if params is None:
        params = init_params(cfg)
        set_feature_stats(params, [f for f, _ in dataset], cfg)
    opt = nn.Adam(params, lr)
    order_rng = np.random.default_rng(cfg.seed + 1)
    losses = [dataset_loss(params, dataset, cfg)]
    for _ in range(epochs):
        for i in order_rng.permutation(len(dataset)):
            feats, states = dataset[i]
            params.zero_grad()
            post, rec = am_forward(feats, params, cfg, return_record=True)
            am_backward(rec, ce_logit_grad(post, states), params, cfg)
            opt.step()
        losses.append(dataset_loss(params, dataset, cfg))
    params.zero_grad()
    return params, losses
