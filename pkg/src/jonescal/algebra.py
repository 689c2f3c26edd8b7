"""Small fixed-size complex linear-algebra kernels (2x2 and 4x4).

Conventions used throughout the toolkit:

* ``vec2`` stacks columns (column-major), so ``vec2(A @ B @ C) ==
  (C.T kron A) @ vec2(B)``.
* Jones matrices are flattened row-major, ``[J11, J12, J21, J22]``;
  only coherency/visibility vectors use the column-major ``vec2``.
"""

import numpy as np

from .errors import SingularMatrixError

# Relative pivot tolerance for declaring a 4x4 Hermitian system singular.
PIVOT_RTOL = 1e-12


def vec2(m: np.ndarray) -> np.ndarray:
    """Column-major vectorization of 2x2 matrices (batched on leading axes)."""
    m = np.asarray(m)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (4,))


def unvec2(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec2` (batched on leading axes)."""
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (2, 2)), -1, -2)


def kron_conj(jq: np.ndarray, jp: np.ndarray) -> np.ndarray:
    """conj(jq) kron jp, the 4x4 map sending vec2(C) to vec2(jp @ C @ jq^H)."""
    return np.kron(np.conj(jq), jp)


def herm_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for Hermitian ``a`` via explicit eigenfactorization.

    A pivot (eigenvalue magnitude) below ``PIVOT_RTOL * max|eig|`` raises
    :class:`SingularMatrixError`. One step of iterative refinement keeps the
    relative residual at ~machine level for condition numbers up to 1e8.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    w, v = np.linalg.eigh(a)
    scale = np.max(np.abs(w))
    if scale == 0.0 or np.min(np.abs(w)) <= PIVOT_RTOL * scale:
        raise SingularMatrixError(
            f"pivot below {PIVOT_RTOL:g} * |a| (min |eig| = {np.min(np.abs(w)):.3e})"
        )

    def solve(rhs):
        return v @ ((v.conj().T @ rhs) / w)

    x = solve(b)
    x = x + solve(b - a @ x)
    return x


def herm_inv(a: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian matrix, same pivot policy as :func:`herm_solve`."""
    a = np.asarray(a, dtype=complex)
    w, v = np.linalg.eigh(a)
    scale = np.max(np.abs(w))
    if scale == 0.0 or np.min(np.abs(w)) <= PIVOT_RTOL * scale:
        raise SingularMatrixError(
            f"pivot below {PIVOT_RTOL:g} * |a| (min |eig| = {np.min(np.abs(w)):.3e})"
        )
    inv = (v / w) @ v.conj().T
    return 0.5 * (inv + inv.conj().T)


def require_hermitian(a: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Validate Hermitian symmetry to within ``rtol`` and symmetrize exactly."""
    a = np.asarray(a, dtype=complex)
    dev = np.max(np.abs(a - a.conj().T))
    ref = max(np.max(np.abs(a)), 1.0)
    if dev > rtol * ref:
        raise ValueError(f"matrix not Hermitian: max deviation {dev:.3e}")
    return 0.5 * (a + a.conj().T)
