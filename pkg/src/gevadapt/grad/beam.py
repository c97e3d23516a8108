"""Reverse-mode rules for covariance estimation, BAN, beamformer
application and the power/log-mel feature stage."""
from __future__ import annotations

import numpy as np

from ..beamform import BanRecord, SpatialCovariance, spatial_covariance
from ..errors import ShapeError, StateError
from ..signal import ComplexSpectrogram, MelBank, log_mel_vjp
from .matrix import hermitize


def cov_vjp(y, mask, phi_bar, cov: SpatialCovariance | None = None) -> np.ndarray:
    """Mask cotangent of the normalized weighted outer-product sum.

    ``mask_bar[t, f] = (Re(Y^H Phi_bar Y) - <Phi_bar, Phi>) / sum_t mask``.
    """
    data = y.data if isinstance(y, ComplexSpectrogram) else np.asarray(y)
    mask = np.asarray(mask, dtype=np.float64)
    if cov is None:
        cov = spatial_covariance(data, mask)
    phi_bar = hermitize(np.asarray(phi_bar, dtype=np.complex128))
    if phi_bar.shape != cov.phi.shape:
        raise ShapeError(f"cotangent shape {phi_bar.shape} != {cov.phi.shape}")
    quad = np.einsum("mtf,fmn,ntf->tf", np.conj(data), phi_bar, data).real
    inner = np.sum(np.conj(phi_bar) * cov.phi, axis=(-2, -1)).real
    return (quad - inner[None, :]) / cov.mask_sum[None, :]


def ban_vjp(record: BanRecord | None, w_opt_bar):
    """Cotangents ``(w_gev_bar, phi_nn_bar)`` of ``w_opt = g(w, Phi) * w``.

    The square root has its subgradient at zero set to zero; bins with a
    nonpositive denominator (scale forced to zero) pass no gradient.
    """
    if record is None:
        raise StateError("ban_vjp needs the forward record of ban_scale")
    w, phi = record.w_gev, record.phi_nn
    n_ch = w.shape[-1]
    w_opt_bar = np.asarray(w_opt_bar, dtype=np.complex128)
    live = record.den > 0
    den = np.where(live, record.den, 1.0)
    num = np.maximum(record.num, 0.0)
    root = np.sqrt(num / n_ch)
    g = np.where(live, root / den, 0.0)

    g_bar = np.real(np.sum(np.conj(w_opt_bar) * w, axis=-1))
    num_pos = live & (num > 0)
    num_bar = np.where(num_pos, g_bar / (2.0 * den * np.sqrt(np.where(num_pos, num, 1.0) * n_ch)), 0.0)
    den_bar = np.where(live, -g_bar * g / den, 0.0)

    phi2 = phi @ phi
    phi_h = np.conj(np.swapaxes(phi, -1, -2))
    pw = (phi @ w[..., None])[..., 0]
    phw = (phi_h @ w[..., None])[..., 0]
    w_bar = g[:, None] * w_opt_bar
    w_bar = w_bar + num_bar[:, None] * ((phi2 @ w[..., None])[..., 0]
                                        + (np.conj(np.swapaxes(phi2, -1, -2)) @ w[..., None])[..., 0])
    w_bar = w_bar + den_bar[:, None] * (pw + phw)
    outer = lambda u, v: u[..., :, None] * np.conj(v)[..., None, :]
    phi_bar = (num_bar[:, None, None] * (outer(w, pw) + outer(phw, w))
               + den_bar[:, None, None] * outer(w, w))
    return w_bar, hermitize(phi_bar)


def apply_vjp(w, y, s_bar) -> np.ndarray:
    """Weight cotangent of ``S[t, f] = w_f^H Y[:, t, f]``: ``sum_t conj(S_bar) Y``."""
    data = y.data if isinstance(y, ComplexSpectrogram) else np.asarray(y)
    s_bar = np.asarray(s_bar, dtype=np.complex128)
    if s_bar.shape != data.shape[1:]:
        raise ShapeError(f"cotangent shape {s_bar.shape} != [T, F] {data.shape[1:]}")
    return np.einsum("tf,mtf->fm", np.conj(s_bar), data)


def apply_vjp_input(w, s_bar) -> np.ndarray:
    """Spectrogram cotangent of the same map: ``Y_bar[m, t, f] = w_f[m] S_bar[t, f]``."""
    return np.einsum("fm,tf->mtf", np.asarray(w), np.asarray(s_bar))


def power_vjp(s, power_bar) -> np.ndarray:
    """``|S|^2`` has complex cotangent ``2 S power_bar``."""
    return 2.0 * np.asarray(s) * np.asarray(power_bar)


def features_vjp(s, bank: MelBank, feat_bar) -> np.ndarray:
    """Back-propagate log-mel features of ``|S|^2`` to the complex enhanced spectrogram."""
    power = np.abs(s) ** 2
    return power_vjp(s, log_mel_vjp(power, bank, feat_bar))
