"""Fisher information and Cramér-Rao bounds for the Jones parameters under
inverse-gamma-texture compound-Gaussian noise.

Real parametrization: for each (source i, antenna p) the eight reals
[Re J11, Im J11, Re J12, Im J12, Re J21, Im J21, Re J22, Im J22], sources
outer, antennas inner; index(i, p, k, c) = ((i*M + p)*4 + k)*2 + c.
"""

from dataclasses import dataclass

import numpy as np

from .algebra import herm_inv
from .calib_robust import _sigma_upsilon
from .model import SourceModel, baseline_pairs

EIG_CUTOFF = 1e-10


def n_real_params(d: int, m: int) -> int:
    return 8 * d * m


def param_index(i: int, p: int, k: int, c: int, m: int) -> int:
    """Flat index of Re (c=0) or Im (c=1) of Jones entry k (row-major)."""
    return ((i * m + p) * 4 + k) * 2 + c


def model_jacobian(
    jones: np.ndarray, sources: SourceModel, p: int, q: int
) -> np.ndarray:
    """(4, 8DM) complex sensitivities of the (p, q) model visibility.

    Only parameters of paths (i, p) and (i, q) enter; the derivative with
    respect to the p-side entries is a column of the per-source sigma factor
    built from the q-side Jones, and vice versa with the (conjugated) upsilon
    factor.
    """
    d, m = jones.shape[:2]
    jac = np.zeros((4, n_real_params(d, m)), dtype=complex)
    c_vecs = sources.c_vecs()
    for i in range(d):
        sigma_q, _ = _sigma_upsilon(jones[i, q][None], c_vecs[i])
        _, upsilon_p = _sigma_upsilon(jones[i, p][None], c_vecs[i])
        for k in range(4):
            col = param_index(i, p, k, 0, m)
            jac[:, col] = sigma_q[0][:, k]
            jac[:, col + 1] = 1j * sigma_q[0][:, k]
            col = param_index(i, q, k, 0, m)
            jac[:, col] = upsilon_p[0][:, k]
            jac[:, col + 1] = -1j * upsilon_p[0][:, k]
    return jac


def fisher(
    jones: np.ndarray, sources: SourceModel, omega: np.ndarray, nu: float
) -> np.ndarray:
    """Fisher information over the real Jones parametrization.

    ``omega`` is the speckle covariance including its scale; the texture
    prior contributes the factor 2 (nu + 4) / (nu + 5), which tends to the
    Gaussian value as nu grows.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    d, m = jones.shape[:2]
    n = n_real_params(d, m)
    omega_inv = herm_inv(np.asarray(omega, dtype=complex))
    f = np.zeros((n, n))
    for p, q in baseline_pairs(m):
        jac = model_jacobian(jones, sources, p, q)
        f += np.real(jac.conj().T @ omega_inv @ jac)
    f *= 2.0 * (nu + 4.0) / (nu + 5.0)
    return 0.5 * (f + f.T)


@dataclass
class CrbBounds:
    """Per-parameter variance bounds plus the flagged ambiguity dimension."""

    values: np.ndarray
    ambiguity_dim: int


def crb_diag(f: np.ndarray, cutoff: float = EIG_CUTOFF) -> CrbBounds:
    """Diagonal of the eigenvalue-thresholded pseudo-inverse of the FIM."""
    w, v = np.linalg.eigh(0.5 * (f + f.T))
    lam_max = float(np.max(w)) if w.size else 0.0
    keep = w > cutoff * lam_max
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    diag = np.einsum("ij,j,ij->i", v, inv_w, v)
    return CrbBounds(values=diag, ambiguity_dim=int(np.sum(~keep)))
