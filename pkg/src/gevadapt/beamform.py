"""Mask-weighted spatial covariances, GEV beamforming vectors via the QR
algorithm, blind analytic normalization (BAN) and beamformer application.

Covariance stacks have shape ``[F, M, M]``, weights ``[F, M]`` and
spectrogram data ``[M, T, F]``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (DegenerateError, DegenerateMaskError, InvalidInputError,
                     ShapeError)
from .signal import ComplexSpectrogram

DEFAULT_K_ITERS = 5
DEFAULT_LOADING = 1e-6


class Variant(str, enum.Enum):
    GEV = "gev"
    OPT = "opt"    # GEV + BAN
    MVDR = "mvdr"  # declared only; no A_0 initialization is provided


@dataclass
class SpatialCovariance:
    phi: np.ndarray  # [F, M, M]
    kind: str = "speech"
    mask_sum: np.ndarray | None = None  # [F], kept for the reverse pass

    @property
    def n_bins(self) -> int:
        return self.phi.shape[0]

    @property
    def n_channels(self) -> int:
        return self.phi.shape[-1]


@dataclass
class GevRecord:
    """Everything the reverse pass needs from :func:`gev_vector`."""
    phi_xx: np.ndarray
    phi_nn: np.ndarray
    chol: np.ndarray        # Cholesky factor of the loaded noise covariance
    a0: np.ndarray          # Phi_NN^{-1} Phi_XX
    eig: linalg.EigResult
    loading: float
    ok: np.ndarray          # [F] bins with a valid solve


@dataclass
class BanRecord:
    w_gev: np.ndarray
    phi_nn: np.ndarray
    num: np.ndarray  # w^H Phi Phi w
    den: np.ndarray  # w^H Phi w


@dataclass
class BeamformerWeights:
    w: np.ndarray  # [F, M]
    variant: Variant = Variant.GEV
    ban_scale: np.ndarray | None = None
    flags: np.ndarray | None = None  # [F] True where the bin was degenerate
    record: GevRecord | BanRecord | None = field(default=None, repr=False)


def _data(y) -> np.ndarray:
    return y.data if isinstance(y, ComplexSpectrogram) else np.asarray(y, dtype=np.complex128)


def _phi(c) -> np.ndarray:
    return c.phi if isinstance(c, SpatialCovariance) else np.asarray(c, dtype=np.complex128)


def spatial_covariance(y, mask, kind: str = "speech") -> SpatialCovariance:
    """Normalized mask-weighted sum of outer products per frequency bin."""
    data = _data(y)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != data.shape[1:]:
        raise ShapeError(f"mask shape {mask.shape} != [T, F] {data.shape[1:]}")
    if np.any(mask < 0) or np.any(mask > 1):
        raise InvalidInputError("mask values must lie in [0, 1]")
    total = mask.sum(axis=0)
    if np.any(total <= 0):
        raise DegenerateMaskError(
            f"mask sums to zero in bin(s) {np.flatnonzero(total <= 0).tolist()}")
    acc = np.einsum("tf,mtf,ntf->fmn", mask, data, np.conj(data))
    phi = acc / total[:, None, None]
    phi = 0.5 * (phi + linalg._mH(phi))
    return SpatialCovariance(phi, kind, total)


def gev_vector(phi_xx, phi_nn, k_iters: int = DEFAULT_K_ITERS,
               loading: float = DEFAULT_LOADING) -> BeamformerWeights:
    """Principal eigenvector of ``Phi_NN^{-1} Phi_XX`` per bin via the QR algorithm.

    Bins whose loaded noise covariance is not positive definite get a zero
    weight and a set flag instead of failing the whole utterance.
    """
    pxx, pnn = _phi(phi_xx), _phi(phi_nn)
    if pxx.shape != pnn.shape:
        raise ShapeError(f"covariance shapes differ: {pxx.shape} vs {pnn.shape}")
    linalg.check_hermitian(pnn)
    chol, ok = linalg.cholesky_flags(linalg.loaded(pnn, loading))
    a0 = linalg.cholesky_solve(chol, pxx)
    eye = np.eye(pxx.shape[-1])
    a0 = np.where(ok[..., None, None], a0, eye)
    _, vec, eig = linalg.principal_pair(a0, k_iters)
    vec = np.where(ok[..., None], vec, 0.0)
    rec = GevRecord(pxx, pnn, chol, a0, eig, loading, ok)
    return BeamformerWeights(vec, Variant.GEV, None, ~ok, rec)


def ban_scale(w: BeamformerWeights, phi_nn) -> BeamformerWeights:
    """Scale each GEV vector by ``sqrt(w^H Phi^2 w / M) / (w^H Phi w)``."""
    vec = w.w if isinstance(w, BeamformerWeights) else np.asarray(w)
    pnn = _phi(phi_nn)
    n_ch = vec.shape[-1]
    if pnn.shape[:-1] != vec.shape:
        raise ShapeError(f"weights {vec.shape} incompatible with covariance {pnn.shape}")
    num = np.real(np.einsum("fm,fmn,fn->f", np.conj(vec), pnn @ pnn, vec))
    den = np.real(np.einsum("fm,fmn,fn->f", np.conj(vec), pnn, vec))
    degenerate = den <= 0
    safe_den = np.where(degenerate, 1.0, den)
    scale = np.where(degenerate, 0.0, np.sqrt(np.maximum(num, 0.0) / n_ch) / safe_den)
    flags = degenerate
    if isinstance(w, BeamformerWeights) and w.flags is not None:
        flags = flags | w.flags
    rec = BanRecord(vec, pnn, num, den)
    return BeamformerWeights(scale[:, None] * vec, Variant.OPT, scale, flags, rec)


def beamformer_weights(phi_xx, phi_nn, variant: Variant = Variant.OPT,
                       k_iters: int = DEFAULT_K_ITERS,
                       loading: float = DEFAULT_LOADING) -> BeamformerWeights:
    variant = Variant(variant)
    if variant is Variant.MVDR:
        raise NotImplementedError("MVDR initialization of the QR iteration is not provided")
    gev = gev_vector(phi_xx, phi_nn, k_iters, loading)
    return gev if variant is Variant.GEV else ban_scale(gev, phi_nn)


def apply_beamformer(w, y) -> np.ndarray:
    """``S[t, f] = w_f^H Y[:, t, f]``; returns complex ``[T, F]``."""
    vec = w.w if isinstance(w, BeamformerWeights) else np.asarray(w)
    data = _data(y)
    if vec.ndim != 2 or vec.shape != (data.shape[2], data.shape[0]):
        raise ShapeError(f"weights {vec.shape} do not match spectrogram {data.shape}")
    return np.einsum("fm,mtf->tf", np.conj(vec), data)


def posterior_snr(w, phi_xx, phi_nn):
    """Rayleigh quotient ``w^H Phi_XX w / w^H Phi_NN w`` (single bin or batched)."""
    w = np.asarray(w, dtype=np.complex128)
    pxx, pnn = _phi(phi_xx), _phi(phi_nn)
    num = np.einsum("...m,...mn,...n->...", np.conj(w), pxx, w)
    den = np.einsum("...m,...mn,...n->...", np.conj(w), pnn, w)
    if np.any(np.abs(den) <= 0):
        raise DegenerateError("zero noise power in posterior SNR")
    q = num / den
    if np.any(np.abs(q.imag) > 1e-10 * np.maximum(np.abs(q), 1e-300)):
        raise InvalidInputError("posterior SNR has a non-negligible imaginary part")
    return q.real
