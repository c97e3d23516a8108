"""Forward record and reverse pass of the integrated system:

masks -> median -> covariances -> loaded solve -> QR eigensolver -> BAN ->
beamformer -> log-mel -> acoustic model -> cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import am, beamform, maskestim, nn
from ..errors import StateError
from ..signal import ComplexSpectrogram, MelBank, StftConfig, log_mel, mel_bank
from .beam import apply_vjp, ban_vjp, cov_vjp, features_vjp
from .matrix import eig_chain_vjp


@dataclass
class System:
    """All components of the integrated front-end plus acoustic model."""
    mask_cfg: maskestim.MaskNetConfig
    mask_params: nn.ParamStore
    am_cfg: am.AmConfig
    am_params: nn.ParamStore
    bank: MelBank = None
    stft_cfg: StftConfig = field(default_factory=StftConfig)
    k_iters: int = beamform.DEFAULT_K_ITERS
    loading: float = beamform.DEFAULT_LOADING
    variant: beamform.Variant = beamform.Variant.OPT

    def __post_init__(self):
        if self.bank is None:
            self.bank = mel_bank(self.stft_cfg, self.am_cfg.n_features)
        self.variant = beamform.Variant(self.variant)


@dataclass(frozen=True)
class PipelineRecord:
    """Immutable snapshot of one utterance's forward pass."""
    y: np.ndarray
    mask_rec: maskestim.MaskRecord
    per_channel: maskestim.MaskPair        # [M, T, F] each
    pooled: maskestim.MaskPair             # [T, F] each
    cov_xx: beamform.SpatialCovariance
    cov_nn: beamform.SpatialCovariance
    gev: beamform.BeamformerWeights
    weights: beamform.BeamformerWeights    # final weights (GEV or BAN-scaled)
    enhanced: np.ndarray                   # [T, F]
    features: np.ndarray                   # [T, n_mels]
    am_rec: am.AmRecord
    posteriors: np.ndarray
    targets: np.ndarray | None
    loss: float | None


def pipeline_forward(system: System, y, targets=None,
                     masks: maskestim.MaskPair | None = None) -> PipelineRecord:
    """Run every stage on one utterance ``y`` ([M, T, F]).

    Passing pooled ``masks`` bypasses the mask network; such a record has no
    network stage and cannot be differentiated.
    """
    data = y.data if isinstance(y, ComplexSpectrogram) else np.asarray(y, dtype=np.complex128)
    if masks is None:
        per_channel, mask_rec = maskestim.forward(np.abs(data), system.mask_params,
                                                  system.mask_cfg, return_record=True)
        pooled = maskestim.MaskPair(speech=maskestim.median_mask(per_channel.speech),
                                    noise=maskestim.median_mask(per_channel.noise))
    else:
        per_channel, mask_rec = None, None
        pooled = maskestim.MaskPair(speech=np.asarray(masks.speech, dtype=np.float64),
                                    noise=np.asarray(masks.noise, dtype=np.float64))
    cov_xx = beamform.spatial_covariance(data, pooled.speech, "speech")
    cov_nn = beamform.spatial_covariance(data, pooled.noise, "noise")
    gev = beamform.gev_vector(cov_xx, cov_nn, system.k_iters, system.loading)
    if system.variant is beamform.Variant.OPT:
        weights = beamform.ban_scale(gev, cov_nn)
    elif system.variant is beamform.Variant.GEV:
        weights = gev
    else:
        raise NotImplementedError("MVDR initialization of the QR iteration is not provided")
    enhanced = beamform.apply_beamformer(weights, data)
    features = log_mel(np.abs(enhanced) ** 2, system.bank)
    if system.am_params is None:
        # front-end only, e.g. while collecting features to train the acoustic model
        post = am_rec = None
    else:
        post, am_rec = am.am_forward(features, system.am_params, system.am_cfg,
                                     return_record=True)
    loss = None
    if targets is not None and post is not None:
        targets = np.asarray(targets)
        loss = am.ce_loss(post, targets)
    return PipelineRecord(data, mask_rec, per_channel, pooled, cov_xx, cov_nn, gev, weights,
                          enhanced, features, am_rec, post, targets, loss)


def pipeline_vjp(loss_grad: float, record: PipelineRecord | None, system: System) -> dict:
    """Gradients of ``loss_grad * loss`` w.r.t. the mask-estimator parameters.

    The gradients are accumulated into ``system.mask_params`` and returned.
    The acoustic model's gradient buffers are never written.
    """
    if record is None:
        raise StateError("pipeline_vjp needs a forward record")
    if record.targets is None:
        raise StateError("forward record carries no targets; loss is undefined")
    for name in ("mask_rec", "gev", "weights", "am_rec"):
        if getattr(record, name) is None:
            raise StateError(f"forward record is missing stage {name!r}")
    logit_bar = am.ce_logit_grad(record.posteriors, record.targets, loss_grad)
    feat_bar = am.am_backward(record.am_rec, logit_bar, system.am_params, system.am_cfg,
                              need_params=False)
    s_bar = features_vjp(record.enhanced, system.bank, feat_bar)
    w_bar = apply_vjp(record.weights.w, record.y, s_bar)
    pnn_bar = np.zeros_like(record.cov_nn.phi)
    if system.variant is beamform.Variant.OPT:
        w_bar, pnn_bar = ban_vjp(record.weights.record, w_bar)
    pxx_bar, pnn_bar_eig = eig_chain_vjp(record.gev.record, w_bar)
    pnn_bar = pnn_bar + pnn_bar_eig
    speech_bar = cov_vjp(record.y, record.pooled.speech, pxx_bar, record.cov_xx)
    noise_bar = cov_vjp(record.y, record.pooled.noise, pnn_bar, record.cov_nn)
    per_channel_bar = maskestim.MaskPair(
        speech=maskestim.median_mask_vjp(record.per_channel.speech, speech_bar),
        noise=maskestim.median_mask_vjp(record.per_channel.noise, noise_bar))
    return maskestim.backward(record.mask_rec, per_channel_bar, system.mask_params)
