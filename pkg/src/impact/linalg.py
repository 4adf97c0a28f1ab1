"""Dense float64 matrix/vector helpers and a symmetric eigensolver.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64. The
helpers here add the shape and domain checks the rest of the package relies on.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError, DimensionError, DivisionDomainError, RankError
from .kernels import jacobi_sweeps

JACOBI_RTOL = 1e-12
JACOBI_MAX_SWEEPS = 100
MIN_DIVISOR = 1e-300


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b) -> np.ndarray:
    """Matrix-matrix or matrix-vector product with a conformability check."""
    a = as_matrix(a, "left operand")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b, "hadamard")
    return a * b


def hdivide(a, b) -> np.ndarray:
    """Elementwise division; every divisor must satisfy ``|b| >= 1e-300``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b, "hdivide")
    if np.any(np.abs(b) < MIN_DIVISOR):
        raise DivisionDomainError("hdivide: divisor has (near-)zero entries")
    return a / b


def outer(u, v) -> np.ndarray:
    return np.outer(as_vector(u, "u"), as_vector(v, "v"))


def frobenius(a) -> float:
    return float(np.sqrt(np.sum(np.asarray(a, dtype=np.float64) ** 2)))


def trace(a) -> float:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"trace of non-square matrix {a.shape}")
    return float(np.trace(a))


def max_abs(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.max(np.abs(a))) if a.size else 0.0


def orthonormality_error(u) -> float:
    """``max |U^T U - I|`` for a basis stored column-wise."""
    u = as_matrix(u)
    return max_abs(u.T @ u - np.eye(u.shape[1]))


def is_orthonormal(u, tol: float = 1e-10) -> bool:
    return orthonormality_error(u) <= tol


def is_numerically_psd(a, rtol: float = 1e-8) -> bool:
    """Symmetric ``a`` with smallest eigenvalue >= ``-rtol * (1 + max|a|)``."""
    a = as_matrix(a)
    if a.size == 0:
        return True
    lam = sym_eig(a).eigenvalues
    return bool(lam[-1] >= -rtol * (1.0 + max_abs(a)))


def quadratic_mean(v) -> float:
    v = as_vector(v)
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return 0.0
    s = v / m  # rescale so squaring neither overflows nor underflows
    return m * float(np.sqrt(np.mean(s * s)))


def arithmetic_mean(v) -> float:
    """Mean of absolute values, the form used in the QM >= AM inequality."""
    v = as_vector(v)
    return float(np.mean(np.abs(v)))


@dataclass(frozen=True)
class SymEigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def _fix_signs(v: np.ndarray) -> None:
    for j in range(v.shape[1]):
        col = np.abs(v[:, j])
        # near-ties resolve to the first index so 2x2 closed forms are stable
        idx = int(np.flatnonzero(col >= col.max() * (1.0 - 1e-12))[0])
        if v[idx, j] < 0.0:
            v[:, j] = -v[:, j]


def sym_eig(a, *, use_numba: bool | None = None) -> SymEigResult:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi.

    The input is symmetrized as ``(A + A^T)/2`` first. Eigenvalues come back in
    non-increasing order (stable on ties), with each eigenvector's
    largest-magnitude entry made positive.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"sym_eig needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("sym_eig: matrix has non-finite entries")
    scale = max_abs(a)
    if max_abs(a - a.T) > 1e-9 * (1.0 + scale):
        raise DataError("sym_eig: matrix is not symmetric")
    if n == 0:
        return SymEigResult(np.zeros(0), np.zeros((0, 0)))

    work = 0.5 * (a + a.T)
    tol = JACOBI_RTOL * frobenius(work)
    v, sweeps, off = jacobi_sweeps(work, tol, JACOBI_MAX_SWEEPS, use_numba=use_numba)
    if off > tol:
        raise ConvergenceError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps", off)

    lam = np.diag(work).copy()
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    _fix_signs(v)
    return SymEigResult(lam, v, sweeps)


def _complete_basis(u: np.ndarray, filled: int) -> None:
    """Fill columns ``filled:`` of ``u`` with unit vectors orthogonal to the rest."""
    rows = u.shape[0]
    candidate = 0
    for j in range(filled, u.shape[1]):
        while True:
            e = np.zeros(rows)
            e[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                e -= u[:, :j] @ (u[:, :j].T @ e)
            norm = np.linalg.norm(e)
            if norm > 1e-8:
                u[:, j] = e / norm
                break


def truncated_svd(w, r: int, *, use_numba: bool | None = None):
    """Top-``r`` singular triplets of ``w`` via the smaller Gram matrix.

    Returns ``(U_r, S_r, V_r)`` with ``w ~= U_r @ diag(S_r) @ V_r.T``.
    """
    w = as_matrix(w, "W")
    rows, cols = w.shape
    k = min(rows, cols)
    if not 1 <= r <= k:
        raise RankError(f"rank {r} outside [1, {k}] for a {rows}x{cols} matrix")

    flip = rows < cols
    m = w.T if flip else w  # m is tall: m.shape[1] == k
    eig = sym_eig(m.T @ m, use_numba=use_numba)
    v = eig.eigenvectors
    mv = m @ v
    sigma = np.minimum.accumulate(np.sqrt(np.sum(mv * mv, axis=0)))
    tiny = sigma[0] * 1e-13

    u = np.zeros((m.shape[0], k))
    good = 0
    for j in range(k):
        if sigma[j] <= tiny:
            sigma[j:] = 0.0
            break
        col = mv[:, j] / sigma[j]
        # one re-orthogonalization pass against earlier columns
        col -= u[:, :j] @ (u[:, :j].T @ col)
        u[:, j] = col / np.linalg.norm(col)
        good = j + 1
    if good < k:
        _complete_basis(u, good)

    u_r, s_r, v_r = u[:, :r].copy(), sigma[:r].copy(), v[:, :r].copy()
    if flip:
        return v_r, s_r, u_r
    return u_r, s_r, v_r
