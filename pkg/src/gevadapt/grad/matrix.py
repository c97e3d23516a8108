"""Reverse-mode rules for QR, the QR algorithm and the GEV eigenvector chain.

Complex cotangents follow the real-pair convention: for a real loss ``l``
and complex ``z = x + iy`` the cotangent is ``dl/dx + i dl/dy``, so that a
first-order change is ``Re(sum(conj(z_bar) * dz))``.
"""
from __future__ import annotations

import numpy as np

from ..beamform import GevRecord
from ..errors import ShapeError, StateError
from ..linalg import _mH, cholesky_solve


def hermitize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + _mH(x))


def qr_vjp(a, q, r, q_bar, r_bar) -> np.ndarray:
    """VJP of the phase-fixed QR map (square, full rank) at ``a``.

    With ``G = Q^H Q_bar - R_bar R^H`` the input cotangent is
    ``Q (R_bar R^H + tril(G - G^H, -1) + i Im diag(G)) R^{-H}``.
    """
    a = np.asarray(a)
    shapes = {np.shape(x) for x in (a, q, r, q_bar, r_bar)}
    if len(shapes) != 1:
        raise ShapeError(f"qr_vjp shape mismatch: {sorted(shapes)}")
    rbar_rh = r_bar @ _mH(r)
    g = _mH(q) @ q_bar - rbar_rh
    inner = rbar_rh + np.tril(g - _mH(g), -1)
    diag = np.diagonal(g, axis1=-2, axis2=-1).imag
    n = a.shape[-1]
    idx = np.arange(n)
    inner = inner.astype(np.complex128, copy=True)
    inner[..., idx, idx] += 1j * diag
    left = q @ inner
    # left @ R^{-H} == (R^{-1} left^H)^H
    return _mH(np.linalg.solve(r, _mH(left)))


def qr_algorithm_vjp(history, a_final_bar=None, accum_q_bar=None) -> np.ndarray:
    """Back-propagate through ``A_{k+1} = R_k Q_k`` and ``P = Q_0 ... Q_{K-1}``."""
    if not history:
        raise StateError("QR iteration history is missing")
    a_last = history[-1][0]
    zeros = np.zeros_like(a_last, dtype=np.complex128)
    a_bar = zeros.copy() if a_final_bar is None else np.asarray(a_final_bar, dtype=np.complex128)
    p_bar = zeros.copy() if accum_q_bar is None else np.asarray(accum_q_bar, dtype=np.complex128)
    prefix = [np.broadcast_to(np.eye(a_last.shape[-1], dtype=np.complex128), a_last.shape)]
    for _, q, _ in history[:-1]:
        prefix.append(prefix[-1] @ q)
    for k in range(len(history) - 1, -1, -1):
        a_k, q_k, r_k = history[k]
        q_bar = _mH(r_k) @ a_bar + _mH(prefix[k]) @ p_bar
        r_bar = a_bar @ _mH(q_k)
        p_bar = p_bar @ _mH(q_k)
        a_bar = qr_vjp(a_k, q_k, r_k, q_bar, r_bar)
    return a_bar


def fix_phase_vjp(p, v_bar) -> np.ndarray:
    """VJP of :func:`gevadapt.linalg.fix_phase` (normalize, then pivot phase)."""
    p = np.asarray(p, dtype=np.complex128)
    v_bar = np.asarray(v_bar, dtype=np.complex128)
    norm = np.linalg.norm(p, axis=-1, keepdims=True)
    v = p / norm
    idx = np.argmax(np.abs(v), axis=-1)[..., None]
    s = np.take_along_axis(v, idx, axis=-1)
    abs_s = np.abs(s)
    c = np.conj(s) / abs_s
    c_bar = np.sum(np.conj(v) * v_bar, axis=-1, keepdims=True)
    u_bar = v_bar * np.conj(c)
    s_bar = np.conj(c_bar) / (2 * abs_s) - c_bar * s ** 2 / (2 * abs_s ** 3)
    np.put_along_axis(u_bar, idx, np.take_along_axis(u_bar, idx, axis=-1) + s_bar, axis=-1)
    proj = np.real(np.sum(np.conj(v) * u_bar, axis=-1, keepdims=True))
    return (u_bar - v * proj) / norm


def eig_chain_vjp(record: GevRecord | None, w_bar, eigval_bar=None):
    """Cotangents of ``(Phi_XX, Phi_NN)`` given the cotangent of the GEV vector.

    Chains the phase fix, the accumulated-Q products, every QR step and the
    loaded Cholesky solve ``A_0 = (Phi_NN + rho tr/n I)^{-1} Phi_XX``.
    Returned cotangents are Hermitian; flagged bins get zeros.
    """
    if record is None or not record.eig.history:
        raise StateError("eig_chain_vjp needs the forward record of gev_vector")
    w_bar = np.where(record.ok[..., None], np.asarray(w_bar, dtype=np.complex128), 0.0)
    accum = record.eig.accum_q
    n = accum.shape[-1]
    p_bar = np.zeros_like(accum)
    p_bar[..., :, 0] = fix_phase_vjp(accum[..., :, 0], w_bar)
    a_final_bar = np.zeros_like(accum)
    if eigval_bar is not None:
        a_final_bar[..., 0, 0] = np.where(record.ok, eigval_bar, 0.0)
    a0_bar = qr_algorithm_vjp(record.eig.history, a_final_bar, p_bar)
    pxx_bar = cholesky_solve(record.chol, a0_bar)
    b_bar = -pxx_bar @ _mH(record.a0)
    tr_bar = np.trace(b_bar, axis1=-2, axis2=-1).real
    pnn_bar = b_bar + (record.loading * tr_bar / n)[..., None, None] * np.eye(n)
    keep = record.ok[..., None, None]
    return (np.where(keep, hermitize(pxx_bar), 0.0),
            np.where(keep, hermitize(pnn_bar), 0.0))
