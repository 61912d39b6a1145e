"""
Dense complex linear-algebra kernels.

Matrices are plain 2-D ``numpy`` arrays of ``complex128``. Vectorization is
column-major throughout, so ``vec(B @ X @ A.T) == kron(A, B) @ vec(X)``.
"""

import numpy as np
import scipy.linalg

from .errors import EigenFailure, NotHermitian, ShapeMismatch, Singular, SizeOverflow

__all__ = [
    "vec",
    "unvec",
    "hermitian_part",
    "is_hermitian",
    "hermitian_solve",
    "pseudo_inverse",
    "kronecker",
    "psd_project",
    "KRON_ELEMENT_BUDGET",
]

HERMITIAN_RTOL = 1e-10
PIVOT_RTOL = 1e-14
# 2**28 complex entries is 4 GiB; anything beyond that is a caller bug.
KRON_ELEMENT_BUDGET = 2**28


def _as_matrix(a, name="A"):
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    return a


def vec(a):
    """Column-wise vectorization of a matrix (or a stack of matrices).

    For a ``(..., rows, cols)`` array returns ``(..., rows*cols)``.
    """
    a = np.asarray(a)
    return np.swapaxes(a, -1, -2).reshape(a.shape[:-2] + (-1,))


def unvec(v, rows, cols):
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (cols, rows)), -1, -2)


def hermitian_part(a):
    a = np.asarray(a)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def is_hermitian(a, rtol=HERMITIAN_RTOL):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = np.max(np.abs(a)) if a.size else 0.0
    return bool(np.max(np.abs(a - a.conj().T)) <= rtol * max(scale, np.finfo(float).tiny))


def hermitian_solve(a, b):
    """
    Solve ``A X = B`` for Hermitian ``A``.

    Cholesky is tried first. Indefinite (but non-singular) matrices, which
    appear when sampled covariances have had the noise floor subtracted,
    fall back to the Bunch-Kaufman ``LDL^H`` factorization.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Hermitian matrix (symmetry checked to a relative tolerance of 1e-10).
    b : array_like, shape (n,) or (n, k)

    Returns
    -------
    numpy.ndarray
        Solution with the same shape as `b`.

    Raises
    ------
    NotHermitian
        If `a` is not Hermitian within tolerance.
    Singular
        If a factorization pivot is below ``1e-14 * max|diag(A)|``.
    """
    a = _as_matrix(a)
    b_arr = np.asarray(b, dtype=np.complex128)
    was_vector = b_arr.ndim == 1
    b2 = b_arr[:, None] if was_vector else b_arr
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeMismatch(f"A must be square, got {a.shape}")
    if b2.ndim != 2 or b2.shape[0] != n:
        raise ShapeMismatch(f"B has {b2.shape[0]} rows, A has {n}")
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b2)):
        raise ValueError("non-finite entries in hermitian_solve input")
    if not is_hermitian(a):
        raise NotHermitian("matrix is not Hermitian within relative tolerance 1e-10")
    a = hermitian_part(a)
    max_diag = float(np.max(np.abs(np.diag(a).real)))
    if max_diag == 0.0:
        raise Singular("zero matrix")
    floor = PIVOT_RTOL * max_diag

    try:
        c, lower = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        pivots = np.abs(np.diag(c)) ** 2
        if np.min(pivots) >= floor:
            x = scipy.linalg.cho_solve((c, lower), b2, check_finite=False)
            return x[:, 0] if was_vector else x
    except np.linalg.LinAlgError:
        pass

    lu, d, perm = scipy.linalg.ldl(a, lower=True, hermitian=True, check_finite=False)
    # d is block diagonal with 1x1 and 2x2 blocks; its eigenvalues are the pivots.
    d_eigs = np.linalg.eigvalsh(hermitian_part(d))
    if np.min(np.abs(d_eigs)) < floor:
        raise Singular("LDL^H pivot below 1e-14 x max diagonal")
    tri = lu[perm]
    z = scipy.linalg.solve_triangular(tri, b2[perm], lower=True, unit_diagonal=True)
    w = np.linalg.solve(d, z)
    v = scipy.linalg.solve_triangular(tri.conj().T, w, lower=False, unit_diagonal=True)
    x = np.empty_like(v)
    x[perm] = v
    return x[:, 0] if was_vector else x


def pseudo_inverse(a):
    """
    Moore-Penrose pseudo-inverse via the SVD.

    Singular values below ``max(rows, cols) * sigma_max * 1e-12`` are treated
    as zero, so rank-deficient inputs are handled without error.
    """
    a = _as_matrix(a)
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]), dtype=np.complex128)
    cutoff = max(a.shape) * s[0] * 1e-12
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vh.conj().T * s_inv) @ u.conj().T


def kronecker(a, b, element_budget=KRON_ELEMENT_BUDGET):
    """Kronecker product ``A (x) B``; raises SizeOverflow past `element_budget`."""
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    size = a.shape[0] * b.shape[0] * a.shape[1] * b.shape[1]
    if size > element_budget:
        raise SizeOverflow(f"Kronecker output would hold {size} elements (budget {element_budget})")
    return np.kron(a, b)


def psd_project(a):
    """
    Nearest Hermitian positive semi-definite matrix (Frobenius sense).

    The input is Hermitian-symmetrized and its negative eigenvalues are
    clipped to zero. The result is exactly Hermitian.
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"psd_project needs a square matrix, got {a.shape}")
    h = hermitian_part(a)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    if np.all(w >= 0.0):
        return h
    w = np.clip(w, 0.0, None)
    return hermitian_part((v * w) @ v.conj().T)
