"""Two-pass speaker adaptation of the mask estimator.

The first pass labels every frame of the adaptation utterances, either with
the argmax of the acoustic model's posteriors on the beamformed features or
with the simulator's ground-truth classes. The second pass runs plain
gradient descent on the mask-network parameters only, back-propagating the
frozen acoustic model's cross-entropy through the whole front-end. All of a
speaker's utterances form one batch, so there is one update per epoch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import am, beamform
from .errors import (FreezeViolationError, InvalidConfigError, InvalidInputError,
                     ShapeError, StateError)
from .grad.pipeline import System, pipeline_forward, pipeline_vjp
from .signal import log_mel
from .sim import Scene, output_snr_db, snr_gain


class TargetMode(str, enum.Enum):
    ORACLE = "oracle"
    FIRST_PASS_ARGMAX = "first_pass_argmax"


@dataclass(frozen=True)
class AdaptConfig:
    lr: float = 0.05
    epochs: int = 10
    k_iters: int = beamform.DEFAULT_K_ITERS
    loading: float = beamform.DEFAULT_LOADING
    target_mode: TargetMode = TargetMode.ORACLE

    def __post_init__(self):
        object.__setattr__(self, "target_mode", TargetMode(self.target_mode))
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise InvalidConfigError("lr must be a positive finite number")
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        if self.k_iters < 1:
            raise InvalidConfigError("k_iters must be >= 1")
        if self.loading < 0:
            raise InvalidConfigError("loading must be >= 0")


@dataclass(frozen=True)
class EvalMetrics:
    frame_accuracy: float
    ce_loss: float
    snr_gain_db: float      # mean over scenes, relative to the best input channel
    output_snr_db: float    # mean over scenes
    n_utterances: int


@dataclass
class AdaptReport:
    epoch_losses: list = field(default_factory=list)
    pre_accuracy: float = float("nan")
    post_accuracy: float = float("nan")
    pre_snr_db: float = float("nan")
    post_snr_db: float = float("nan")
    pre_loss: float = float("nan")
    post_loss: float = float("nan")
    n_utterances: int = 0

    def key_values(self) -> dict:
        out = {
            "n_utterances": self.n_utterances,
            "epochs": len(self.epoch_losses),
            "pre_loss": self.pre_loss,
            "post_loss": self.post_loss,
            "pre_accuracy": self.pre_accuracy,
            "post_accuracy": self.post_accuracy,
            "pre_snr_db": self.pre_snr_db,
            "post_snr_db": self.post_snr_db,
        }
        for e, loss in enumerate(self.epoch_losses):
            out[f"epoch_loss.{e}"] = loss
        return out


def _check_system(system: System) -> None:
    if system is None or system.mask_params is None or system.am_params is None:
        raise StateError("system is not initialized (mask net and acoustic model required)")


def _spectrogram(utt):
    return utt.y if isinstance(utt, Scene) else utt


def first_pass_targets(utterances, system: System,
                       mode: TargetMode | str = TargetMode.FIRST_PASS_ARGMAX) -> list:
    """Frame-state targets for each utterance."""
    _check_system(system)
    mode = TargetMode(mode)
    utterances = list(utterances)
    if mode is TargetMode.ORACLE:
        if not all(isinstance(u, Scene) for u in utterances):
            raise InvalidInputError("oracle targets need simulator scenes")
        return [np.asarray(u.classes).copy() for u in utterances]
    out = []
    for utt in utterances:
        rec = pipeline_forward(system, _spectrogram(utt))
        out.append(np.argmax(rec.posteriors, axis=1))
    return out


def _with_config(system: System, cfg: AdaptConfig, mask_params) -> System:
    return replace(system, mask_params=mask_params, k_iters=cfg.k_iters, loading=cfg.loading)


def adapt_mask_estimator(utterances, targets, cfg: AdaptConfig, system: System):
    """Retrain a copy of the mask network toward ``targets``.

    Returns ``(adapted mask ParamStore, AdaptReport)``. ``system`` itself is
    left untouched. ``epoch_losses[e]`` is the mean loss before update ``e``;
    the report's pre/post metrics refer to the adaptation utterances.
    """
    _check_system(system)
    utterances = list(utterances)
    targets = [np.asarray(t) for t in targets]
    if not utterances:
        raise InvalidInputError("adaptation needs at least one utterance")
    if len(targets) != len(utterances):
        raise ShapeError(f"{len(targets)} target sequences for {len(utterances)} utterances")
    if not system.am_params.frozen:
        raise FreezeViolationError("the acoustic model must be frozen before adaptation")
    specs = [_spectrogram(u) for u in utterances]
    for spec, tgt in zip(specs, targets):
        if tgt.shape != (spec.data.shape[1],):
            raise ShapeError(f"targets of length {tgt.shape} for {spec.data.shape[1]} frames")

    work = _with_config(system, cfg, system.mask_params.copy())
    work.mask_params.frozen = False
    work.mask_params.zero_grad()
    scale = 1.0 / len(specs)
    report = AdaptReport(n_utterances=len(specs))
    for _ in range(cfg.epochs):
        work.mask_params.zero_grad()
        losses = []
        for spec, tgt in zip(specs, targets):
            rec = pipeline_forward(work, spec, tgt)
            losses.append(rec.loss)
            pipeline_vjp(scale, rec, work)
        report.epoch_losses.append(float(np.mean(losses)))
        work.mask_params.sgd_step(cfg.lr)
    work.mask_params.zero_grad()

    before = evaluate(_with_config(system, cfg, system.mask_params), utterances, targets)
    after = evaluate(work, utterances, targets)
    report.pre_loss, report.post_loss = before.ce_loss, after.ce_loss
    report.pre_accuracy, report.post_accuracy = before.frame_accuracy, after.frame_accuracy
    report.pre_snr_db, report.post_snr_db = before.output_snr_db, after.output_snr_db
    return work.mask_params, report


def evaluate(system: System, scenes, targets=None, ideal_masks: bool = False) -> EvalMetrics:
    """Frame accuracy and cross-entropy against ``targets`` (default: the
    scenes' true classes) plus oracle output SNR, averaged over scenes.

    With ``ideal_masks`` the scenes' ideal masks replace the network output.
    """
    _check_system(system)
    scenes = list(scenes)
    if not scenes:
        raise InvalidInputError("evaluation needs at least one scene")
    if not all(isinstance(s, Scene) for s in scenes):
        raise InvalidInputError("evaluation needs simulator scenes with oracle components")
    if targets is None:
        targets = [s.classes for s in scenes]
    hits = frames = 0
    losses, gains, snrs = [], [], []
    for scene, tgt in zip(scenes, targets):
        rec = pipeline_forward(system, scene.y, np.asarray(tgt),
                               masks=scene.ideal_masks if ideal_masks else None)
        losses.append(rec.loss)
        hits += int(np.sum(np.argmax(rec.posteriors, axis=1) == rec.targets))
        frames += rec.targets.size
        gains.append(snr_gain(rec.enhanced, scene, rec.weights))
        snrs.append(output_snr_db(scene, rec.weights.w))
    return EvalMetrics(hits / frames, float(np.mean(losses)), float(np.mean(gains)),
                       float(np.mean(snrs)), len(scenes))


def am_dataset(scenes, bank, channels=None) -> list:
    """``(features, classes)`` pairs from the unprocessed single channels of
    each scene (all channels unless ``channels`` is given)."""
    out = []
    for scene in scenes:
        data = scene.y.data
        for m in (range(data.shape[0]) if channels is None else channels):
            out.append((log_mel(np.abs(data[m]) ** 2, bank), np.asarray(scene.classes)))
    return out


def train_acoustic_model(system: System, scenes, cfg: am.AmConfig, epochs: int = 20,
                         lr: float = 1e-3, channels=None):
    """Fit an acoustic model on single-channel features of ``scenes`` and
    install it, frozen, in ``system``. Returns the training losses."""
    params, losses = am.am_train(am_dataset(scenes, system.bank, channels), cfg, epochs, lr)
    system.am_params = params.freeze()
    system.am_cfg = cfg
    return losses
