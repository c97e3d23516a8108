"""Independent reference computations used by the tests."""
import numpy as np


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def herm_psd(rng, n, dof=None, batch=()):
    dof = dof or 2 * n
    b = crandn(rng, *batch, n, dof)
    return b @ np.conj(np.swapaxes(b, -1, -2)) / dof


def char_poly_eigvals(a):
    """Roots of det(lambda I - A) for 2x2 and 3x3 matrices, coefficients by hand."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    tr = np.trace(a)
    if n == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        disc = np.sqrt(tr * tr - 4 * det)
        return np.array([(tr + disc) / 2, (tr - disc) / 2])
    if n == 3:
        minors = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] + a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
                  + a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
               - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
               + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
        return np.roots([1.0, -tr, minors, -det])
    raise ValueError("oracle supports n in {2, 3}")


def gen_eig_oracle(phi_xx, phi_nn):
    """Principal generalized eigenpair of a Hermitian pair via det(Pxx - l Pnn) = 0.

    For 2x2 the quadratic is solved in closed form; for 3x3 the cubic's roots
    are used. The eigenvector is a null vector of Pxx - l Pnn taken from the
    cross product of two of its rows (3x3) or the adjugate row (2x2).
    """
    n = phi_xx.shape[0]
    if n == 2:
        a, b = phi_xx, phi_nn
        c2 = b[0, 0] * b[1, 1] - b[0, 1] * b[1, 0]
        c1 = -(a[0, 0] * b[1, 1] + a[1, 1] * b[0, 0] - a[0, 1] * b[1, 0] - a[1, 0] * b[0, 1])
        c0 = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        disc = np.sqrt(c1 * c1 - 4 * c2 * c0)
        roots = np.array([(-c1 + disc) / (2 * c2), (-c1 - disc) / (2 * c2)])
    else:
        roots = char_poly_eigvals(np.linalg.inv(phi_nn) @ phi_xx)
    roots = np.sort(roots.real)[::-1]
    lam = roots[0]
    m = phi_xx - lam * phi_nn
    if n == 2:
        # pick the better-conditioned row of the singular matrix
        row = m[0] if np.linalg.norm(m[0]) >= np.linalg.norm(m[1]) else m[1]
        v = np.array([-row[1], row[0]])
    else:
        pairs = [(0, 1), (0, 2), (1, 2)]
        cands = [np.cross(m[i], m[j]) for i, j in pairs]
        v = max(cands, key=np.linalg.norm)
    return roots, v / np.linalg.norm(v)


def cosine(u, v):
    return abs(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v))


def random_unit_vectors(rng, count, n):
    v = crandn(rng, count, n)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
