"""Dense complex kernels: Householder QR, the unshifted QR algorithm and
loaded Hermitian solves.

All routines accept a single ``[n, n]`` matrix or a batch ``[..., n, n]``;
per-frequency problems are handled as one batch.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (FormatError, InvalidConfigError, InvalidInputError,
                     ShapeError, SingularCovarianceError)


@dataclass(frozen=True)
class QrFactors:
    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class EigResult:
    """Output of :func:`qr_algorithm`.

    ``history`` holds ``(A_k, Q_k, R_k)`` for every iteration performed and is
    what the reverse pass consumes.
    """
    a_final: np.ndarray
    accum_q: np.ndarray
    k_iters: int
    history: tuple = ()


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has NaN or Inf entries")
    return a


def _mH(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def qr_decompose(a) -> QrFactors:
    """Householder QR with ``diag(R)`` real and nonnegative.

    The reflector for column ``j`` maps ``x`` onto ``-exp(i arg x_0) |x| e_1``;
    afterwards each column of Q is rotated so the matching diagonal entry of
    R becomes real. Columns whose diagonal is exactly zero keep phase 1.
    """
    a = _as_square(a)
    n = a.shape[-1]
    r = a.copy()
    q = np.broadcast_to(np.eye(n, dtype=np.complex128), a.shape).copy()
    for j in range(n - 1):
        x = r[..., j:, j]
        norm_x = np.linalg.norm(x, axis=-1)
        x0 = x[..., 0]
        abs_x0 = np.abs(x0)
        phase = np.where(abs_x0 > 0, x0 / np.where(abs_x0 > 0, abs_x0, 1.0), 1.0)
        v = x.copy()
        v[..., 0] += phase * norm_x
        norm_v = np.linalg.norm(v, axis=-1)
        live = norm_v > 0
        v = np.where(live[..., None], v / np.where(live, norm_v, 1.0)[..., None], 0.0)
        # R <- H R, Q <- Q H with H = I - 2 v v^H
        block = r[..., j:, j:]
        r[..., j:, j:] = block - 2.0 * v[..., :, None] * (np.conj(v)[..., None, :] @ block)
        qblock = q[..., :, j:]
        q[..., :, j:] = qblock - 2.0 * (qblock @ v[..., :, None]) * np.conj(v)[..., None, :]
        r[..., j + 1:, j] = 0.0
    d = np.diagonal(r, axis1=-2, axis2=-1)
    abs_d = np.abs(d)
    ph = np.where(abs_d > 0, d / np.where(abs_d > 0, abs_d, 1.0), 1.0)
    r = np.conj(ph)[..., :, None] * r
    q = q * ph[..., None, :]
    idx = np.arange(n)
    r[..., idx, idx] = r[..., idx, idx].real
    return QrFactors(q, r)


def qr_algorithm(a0, k_iters: int) -> EigResult:
    """Unshifted QR iteration ``A_{k+1} = R_k Q_k`` with ``P = Q_0 ... Q_{K-1}``.

    Exactly ``k_iters`` factorizations are performed and accumulated, so
    ``a_final == P^H a0 P`` up to rounding.
    """
    a = _as_square(a0)
    if k_iters < 1:
        raise InvalidConfigError("k_iters must be >= 1")
    n = a.shape[-1]
    accum = np.broadcast_to(np.eye(n, dtype=np.complex128), a.shape).copy()
    history = []
    for _ in range(k_iters):
        f = qr_decompose(a)
        history.append((a, f.q, f.r))
        a = f.r @ f.q
        accum = accum @ f.q
    return EigResult(a, accum, k_iters, tuple(history))


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Normalize columns-last vectors and rotate so the largest-magnitude entry is real >= 0."""
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    idx = np.argmax(np.abs(v), axis=-1)
    pivot = np.take_along_axis(v, idx[..., None], axis=-1)
    abs_p = np.abs(pivot)
    rot = np.where(abs_p > 0, np.conj(pivot) / np.where(abs_p > 0, abs_p, 1.0), 1.0)
    return v * rot


def principal_pair(phi, k_iters: int = 5, result: EigResult | None = None):
    """Dominant eigenvalue and eigenvector of ``phi`` after ``k_iters`` QR steps.

    Returns ``(eigval, eigvec, result)``; ``eigval`` is ``Re(A_K[0, 0])`` and
    ``eigvec`` is the first column of the accumulated Q with the phase
    convention of :func:`fix_phase`.
    """
    if k_iters < 1:
        raise InvalidConfigError("k_iters must be >= 1")
    if result is None:
        result = qr_algorithm(phi, k_iters)
    eigval = result.a_final[..., 0, 0].real
    eigvec = fix_phase(result.accum_q[..., :, 0])
    return eigval, eigvec, result


def loaded(phi: np.ndarray, loading: float) -> np.ndarray:
    """``phi + loading * tr(phi)/n * I``."""
    n = phi.shape[-1]
    tr = np.trace(phi, axis1=-2, axis2=-1).real
    return phi + (loading * tr / n)[..., None, None] * np.eye(n)


def cholesky_flags(phi_loaded: np.ndarray):
    """Batched Cholesky; returns ``(L, ok)`` with identity factors where it failed."""
    try:
        return np.linalg.cholesky(phi_loaded), np.ones(phi_loaded.shape[:-2], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    n = phi_loaded.shape[-1]
    flat = phi_loaded.reshape(-1, n, n)
    chol = np.empty_like(flat)
    ok = np.ones(flat.shape[0], dtype=bool)
    for i, mat in enumerate(flat):
        try:
            chol[i] = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            chol[i] = np.eye(n)
            ok[i] = False
    return chol.reshape(phi_loaded.shape), ok.reshape(phi_loaded.shape[:-2])


def check_hermitian(phi: np.ndarray, tol: float = 1e-8) -> None:
    scale = max(1.0, float(np.max(np.abs(phi), initial=0.0)))
    if np.max(np.abs(phi - _mH(phi)), initial=0.0) > tol * scale:
        raise InvalidInputError("matrix is not Hermitian")


def cholesky_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(_mH(chol), y)


def herm_solve(phi, b, loading: float = 0.0) -> np.ndarray:
    """Solve ``(phi + loading*tr(phi)/n*I) x = b`` through a Cholesky factor."""
    phi = _as_square(phi)
    b = np.asarray(b, dtype=np.complex128)
    if b.shape[:-1] != phi.shape[:-1]:
        raise ShapeError(f"rhs shape {b.shape} incompatible with {phi.shape}")
    if loading < 0:
        raise InvalidConfigError("loading must be >= 0")
    check_hermitian(phi)
    chol, ok = cholesky_flags(loaded(phi, loading))
    if not np.all(ok):
        raise SingularCovarianceError(
            f"{int(np.size(ok) - np.count_nonzero(ok))} matrix(es) not positive definite after loading")
    return cholesky_solve(chol, b)


# Binary matrix dump: repeated records of
#   <u8 n_rows> <u8 n_cols> <u4 tag> payload
# tag 0 = float64, tag 1 = complex128 stored as interleaved re/im doubles,
# payload row-major little-endian.
_HEADER = struct.Struct("<QQI")
TAG_REAL, TAG_COMPLEX = 0, 1


def write_matrices(path, matrices) -> None:
    """Write one matrix, or a stack ``[k, rows, cols]`` as k records."""
    arr = np.asarray(matrices)
    if arr.ndim == 1:
        arr = arr[None, None, :]
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError("dump expects a matrix or a stack of matrices")
    is_complex = np.iscomplexobj(arr)
    with open(path, "wb") as fh:
        for mat in arr:
            fh.write(_HEADER.pack(mat.shape[0], mat.shape[1],
                                  TAG_COMPLEX if is_complex else TAG_REAL))
            dtype = "<c16" if is_complex else "<f8"
            fh.write(np.ascontiguousarray(mat, dtype=dtype).tobytes())


def read_matrices(path) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0
    while pos < len(blob):
        if len(blob) - pos < _HEADER.size:
            raise FormatError(f"{path}: truncated header at byte {pos}")
        rows, cols, tag = _HEADER.unpack_from(blob, pos)
        pos += _HEADER.size
        if tag == TAG_REAL:
            dtype, width = "<f8", 8
        elif tag == TAG_COMPLEX:
            dtype, width = "<c16", 16
        else:
            raise FormatError(f"{path}: unknown dtype tag {tag}")
        nbytes = rows * cols * width
        if len(blob) - pos < nbytes:
            raise FormatError(f"{path}: truncated payload")
        out.append(np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=pos)
                   .reshape(rows, cols).astype(np.complex128 if tag else np.float64))
        pos += nbytes
    return out
