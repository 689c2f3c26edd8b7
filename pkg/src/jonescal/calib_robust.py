"""Robust calibration by relaxed concentrated maximum likelihood.

The solver alternates three blocks until it stalls:

* a per-baseline texture estimate tau = a^H omega^{-1} a / 4,
* a trace-normalized fixed-point update of the speckle covariance omega
  (optionally one covariance per baseline),
* an EM sweep over sources whose M-step is closed-form block coordinate
  descent over antennas.

Jones sets are (D, M, 2, 2) complex arrays; per-path parameters are the
row-major flattening [J11, J12, J21, J22].
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .algebra import herm_inv, herm_solve
from .errors import (
    DegenerateResidualsError,
    NonFiniteError,
    SingularMatrixError,
    SingularNormalMatrixError,
)
from .model import SourceModel, VisibilityBatch, baseline_pairs, pair_to_index, synth_per_source
from .serialize import complex_to_pairs, pairs_to_complex

TEXTURE_FLOOR = 1e-12
RIDGE_INITIAL = 1e-9
RIDGE_MAX = 1e-3


@dataclass
class NoiseState:
    """Current texture vector and speckle covariance estimate.

    ``omega`` is (4, 4) in shared mode or (B, 4, 4) in per-baseline mode.
    """

    tau: np.ndarray
    omega: np.ndarray

    @property
    def per_baseline(self) -> bool:
        return self.omega.ndim == 3

    def omega_for(self, b: int) -> np.ndarray:
        return self.omega[b] if self.per_baseline else self.omega


@dataclass(frozen=True)
class EmWeights:
    """Per-source expectation weights; positive and summing to one."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if np.any(beta <= 0) or abs(beta.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def uniform(cls, d: int) -> "EmWeights":
        return cls(beta=np.full(d, 1.0 / d))


@dataclass
class BcdFactors:
    """Linear factors for one antenna's closed-form update.

    ``sigma`` maps theta_{i,p} to the upper-triangle contributions (q > p),
    ``upsilon`` (already conjugated) to the conjugated lower ones (q < p);
    ``a_blocks``/``a_tilde_blocks`` are the matching inverse-covariance
    weights, and ``upper_idx``/``lower_idx`` the baseline rows.
    """

    sigma: np.ndarray
    upsilon: np.ndarray
    a_blocks: np.ndarray
    a_tilde_blocks: np.ndarray
    upper_idx: np.ndarray
    lower_idx: np.ndarray


@dataclass
class CalibrationConfig:
    """Solver options. ``theta_init`` defaults to identity Jones matrices."""

    theta_init: np.ndarray | None = None
    omega_init: np.ndarray | None = None
    tau_init: np.ndarray | None = None
    beta: np.ndarray | None = None
    outer_iters: int = 20
    em_iters: int = 5
    bcd_sweeps: int = 3
    tol: float = 1e-8
    per_baseline_speckle: bool = False
    freeze_texture: bool = False
    freeze_speckle: bool = False
    texture_floor: float = TEXTURE_FLOOR
    ridge_initial: float = RIDGE_INITIAL
    ridge_max: float = RIDGE_MAX
    time_budget_s: float | None = None


@dataclass
class CalibrationState:
    """Solver output: Jones estimate, noise state, and convergence traces.

    ``eps_outer``/``eps_em``/``eps_bcd`` hold the squared real-part parameter
    changes per iteration of the corresponding loop (EM traces are grouped per
    outer iteration, BCD traces per (outer, em, source) visit); ``nll`` holds
    the relaxed negative log-likelihood after each outer iteration.
    """

    jones: np.ndarray
    noise: NoiseState
    converged: bool = False
    n_outer: int = 0
    method: str = "robust"
    eps_outer: list = field(default_factory=list)
    eps_em: list = field(default_factory=list)
    eps_bcd: list = field(default_factory=list)
    nll: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_json_obj(self):
        return {
            "method": self.method,
            "jones": complex_to_pairs(self.jones),
            "tau": self.noise.tau.tolist(),
            "omega": complex_to_pairs(self.noise.omega),
            "converged": self.converged,
            "n_outer": self.n_outer,
            "eps_outer": self.eps_outer,
            "eps_em": self.eps_em,
            "eps_bcd": self.eps_bcd,
            "nll": self.nll,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_json_obj(cls, obj):
        noise = NoiseState(
            tau=np.asarray(obj["tau"], dtype=float),
            omega=pairs_to_complex(obj["omega"]),
        )
        return cls(
            jones=pairs_to_complex(obj["jones"]),
            noise=noise,
            converged=bool(obj.get("converged", False)),
            n_outer=int(obj.get("n_outer", 0)),
            method=obj.get("method", "robust"),
            eps_outer=list(obj.get("eps_outer", [])),
            eps_em=list(obj.get("eps_em", [])),
            eps_bcd=list(obj.get("eps_bcd", [])),
            nll=list(obj.get("nll", [])),
            wall_time_s=float(obj.get("wall_time_s", 0.0)),
        )


def residual(x: VisibilityBatch, jones: np.ndarray, sources: SourceModel, p: int, q: int) -> np.ndarray:
    """Measured minus modeled visibility for baseline (p, q)."""
    b = pair_to_index(x.n_antennas)[p, q]
    model = synth_per_source(jones, sources).sum(axis=0)
    return x.data[b] - model[b]


def residual_all(x: VisibilityBatch, jones: np.ndarray, sources: SourceModel) -> np.ndarray:
    """(B, 4) residuals over all baselines."""
    return x.data - synth_per_source(jones, sources).sum(axis=0)


def update_texture(a: np.ndarray, omega: np.ndarray, floor: float = TEXTURE_FLOOR) -> float:
    """Texture estimate a^H omega^{-1} a / 4, floored away from zero."""
    quad = np.real(np.vdot(a, herm_solve(omega, a)))
    return max(quad / 4.0, floor)


def update_textures(
    residuals: np.ndarray, omega_inv: np.ndarray, floor: float = TEXTURE_FLOOR
) -> np.ndarray:
    """Vectorized texture update given precomputed inverse covariance(s)."""
    if omega_inv.ndim == 2:
        quad = np.einsum("bi,ij,bj->b", residuals.conj(), omega_inv, residuals).real
    else:
        quad = np.einsum("bi,bij,bj->b", residuals.conj(), omega_inv, residuals).real
    return np.maximum(quad / 4.0, floor)


def update_speckle(
    residuals: np.ndarray, omega_prev: np.ndarray, floor: float = TEXTURE_FLOOR
) -> np.ndarray:
    """One fixed-point step of the shared speckle covariance, unit trace.

    Raises DegenerateResidualsError when every residual is (near) zero, in
    which case the caller should keep the previous covariance.
    """
    b = residuals.shape[0]
    inv = herm_inv(omega_prev)
    quad = np.einsum("bi,ij,bj->b", residuals.conj(), inv, residuals).real
    if np.all(quad <= 4.0 * floor):
        raise DegenerateResidualsError("all residuals below texture floor")
    quad = np.maximum(quad, 4.0 * floor)
    omega = (4.0 / b) * np.einsum("bi,bj->ij", residuals / quad[:, None], residuals.conj())
    omega = 0.5 * (omega + omega.conj().T)
    return omega / np.trace(omega).real


def update_speckle_per_baseline(
    a: np.ndarray,
    omega_prev: np.ndarray,
    floor: float = TEXTURE_FLOOR,
    ridge: float = RIDGE_INITIAL,
) -> np.ndarray:
    """Per-baseline speckle update: rank-1 step plus ridge, unit trace."""
    inv = herm_inv(omega_prev)
    quad = float(np.real(a.conj() @ inv @ a))
    if quad <= 4.0 * floor:
        raise DegenerateResidualsError("residual below texture floor")
    omega = 4.0 * np.outer(a, a.conj()) / quad
    omega = omega + ridge * np.trace(omega).real / 4.0 * np.eye(4)
    omega = 0.5 * (omega + omega.conj().T)
    return omega / np.trace(omega).real


def e_step(
    x: VisibilityBatch, jones: np.ndarray, sources: SourceModel, weights: EmWeights
) -> np.ndarray:
    """(D, B, 4) per-source complete-data estimates; they sum back to x."""
    u = synth_per_source(jones, sources)
    gap = x.data - u.sum(axis=0)
    return u + weights.beta[:, None, None] * gap[None]


def _sigma_upsilon(jones_i: np.ndarray, c: np.ndarray):
    """All-antenna factor blocks for one source.

    Returns (sigma, upsilon) of shape (M, 4, 4): sigma[q] maps theta_{i,p} to
    the (p, q) model vector; conj(upsilon[q]) maps it to the conjugated (q, p)
    one.
    """
    m = jones_i.shape[0]
    qf = jones_i.reshape(m, 4)
    c1, c2, c3, c4 = c
    q1, q2, q3, q4 = qf[:, 0], qf[:, 1], qf[:, 2], qf[:, 3]

    sigma = np.zeros((m, 4, 4), dtype=complex)
    al = q1.conj() * c1 + q2.conj() * c3
    be = q1.conj() * c2 + q2.conj() * c4
    ga = q3.conj() * c1 + q4.conj() * c3
    ro = q3.conj() * c2 + q4.conj() * c4
    sigma[:, 0, 0] = al
    sigma[:, 0, 1] = be
    sigma[:, 1, 2] = al
    sigma[:, 1, 3] = be
    sigma[:, 2, 0] = ga
    sigma[:, 2, 1] = ro
    sigma[:, 3, 2] = ga
    sigma[:, 3, 3] = ro

    upsilon = np.zeros((m, 4, 4), dtype=complex)
    la = q1 * c1 + q2 * c2
    mu = q1 * c3 + q2 * c4
    nu = q3 * c1 + q4 * c2
    xi = q3 * c3 + q4 * c4
    upsilon[:, 0, 0] = la
    upsilon[:, 0, 1] = mu
    upsilon[:, 1, 0] = nu
    upsilon[:, 1, 1] = xi
    upsilon[:, 2, 2] = la
    upsilon[:, 2, 3] = mu
    upsilon[:, 3, 2] = nu
    upsilon[:, 3, 3] = xi
    return sigma, upsilon


def build_bcd_factors(
    jones: np.ndarray,
    sources: SourceModel,
    noise: NoiseState,
    weights: EmWeights,
    i: int,
    p: int,
    omega_inv: np.ndarray | None = None,
) -> BcdFactors:
    """Assemble the linear system pieces for antenna p of source i."""
    m = jones.shape[1]
    c = sources.c_vecs()[i]
    sigma_all, upsilon_all = _sigma_upsilon(jones[i], c)
    if omega_inv is None:
        omega_inv = (
            np.stack([herm_inv(noise.omega[b]) for b in range(noise.omega.shape[0])])
            if noise.per_baseline
            else herm_inv(noise.omega)
        )
    idx = pair_to_index(m)
    upper_q = np.arange(p + 1, m)
    lower_q = np.arange(0, p)
    upper_idx = idx[p, upper_q] if upper_q.size else np.empty(0, dtype=int)
    lower_idx = idx[lower_q, p] if lower_q.size else np.empty(0, dtype=int)

    def inv_for(rows):
        base = omega_inv[rows] if omega_inv.ndim == 3 else omega_inv[None]
        scale = 1.0 / (weights.beta[i] * noise.tau[rows])
        return base * scale[:, None, None]

    return BcdFactors(
        sigma=sigma_all[upper_q],
        upsilon=upsilon_all[lower_q].conj(),
        a_blocks=inv_for(upper_idx) if upper_q.size else np.empty((0, 4, 4), dtype=complex),
        a_tilde_blocks=inv_for(lower_idx).conj() if lower_q.size else np.empty((0, 4, 4), dtype=complex),
        upper_idx=upper_idx,
        lower_idx=lower_idx,
    )


def bcd_update(
    factors: BcdFactors,
    wi: np.ndarray,
    ridge_initial: float = RIDGE_INITIAL,
    ridge_max: float = RIDGE_MAX,
) -> np.ndarray:
    """Closed-form minimizer of one antenna's weighted LS block.

    ``wi`` is the (B, 4) complete-data vector of the source being updated.
    Both triangle branches contribute for interior antennas; only one exists
    for the first/last antenna.
    """
    normal = np.zeros((4, 4), dtype=complex)
    rhs = np.zeros(4, dtype=complex)
    if factors.upper_idx.size:
        w_u = wi[factors.upper_idx]
        normal += np.einsum("qji,qjk,qkl->il", factors.sigma.conj(), factors.a_blocks, factors.sigma)
        rhs += np.einsum("qji,qjk,qk->i", factors.sigma.conj(), factors.a_blocks, w_u)
    if factors.lower_idx.size:
        w_l = wi[factors.lower_idx].conj()
        normal += np.einsum(
            "qji,qjk,qkl->il", factors.upsilon.conj(), factors.a_tilde_blocks, factors.upsilon
        )
        rhs += np.einsum("qji,qjk,qk->i", factors.upsilon.conj(), factors.a_tilde_blocks, w_l)
    normal = 0.5 * (normal + normal.conj().T)
    try:
        return herm_solve(normal, rhs)
    except SingularMatrixError:
        pass
    delta = ridge_initial * np.trace(normal).real / 4.0
    cap = ridge_max * np.trace(normal).real / 4.0
    while delta <= cap:
        try:
            return herm_solve(normal + delta * np.eye(4), rhs)
        except SingularMatrixError:
            delta *= 2.0
    raise SingularNormalMatrixError(
        "normal matrix singular after ridge escalation (geometry too sparse?)"
    )


def relaxed_nll(
    x: VisibilityBatch, jones: np.ndarray, sources: SourceModel, noise: NoiseState
) -> float:
    """Relaxed negative log-likelihood at the given parameter blocks."""
    res = residual_all(x, jones, sources)
    b = res.shape[0]
    if noise.per_baseline:
        inv = np.stack([herm_inv(noise.omega[k]) for k in range(b)])
        quad = np.einsum("bi,bij,bj->b", res.conj(), inv, res).real
        logdet = sum(np.linalg.slogdet(noise.omega[k])[1] for k in range(b))
    else:
        inv = herm_inv(noise.omega)
        quad = np.einsum("bi,ij,bj->b", res.conj(), inv, res).real
        logdet = b * np.linalg.slogdet(noise.omega)[1]
    return float(
        4 * b * np.log(np.pi)
        + 4 * np.sum(np.log(noise.tau))
        + logdet
        + np.sum(quad / noise.tau)
    )


def _omega_inverses(omega: np.ndarray, ridge_initial: float, ridge_max: float):
    """Invert the speckle covariance, ridging it if numerically singular.

    Returns (inverse(s), possibly-ridged omega).
    """

    def robust_inv(a):
        try:
            return herm_inv(a), a
        except SingularMatrixError:
            delta = ridge_initial * np.trace(a).real / 4.0
            cap = ridge_max * np.trace(a).real / 4.0
            while delta <= cap:
                ridged = a + delta * np.eye(4)
                ridged = ridged / np.trace(ridged).real
                try:
                    return herm_inv(ridged), ridged
                except SingularMatrixError:
                    delta *= 2.0
            raise

    if omega.ndim == 2:
        return robust_inv(omega)
    invs, outs = zip(*(robust_inv(omega[k]) for k in range(omega.shape[0])))
    return np.stack(invs), np.stack(outs)


def _theta_step(
    x: VisibilityBatch,
    jones: np.ndarray,
    sources: SourceModel,
    weights: EmWeights,
    noise: NoiseState,
    omega_inv: np.ndarray,
    cfg: CalibrationConfig,
    eps_em_out: list,
    eps_bcd_out: list,
) -> np.ndarray:
    """EM loop with closed-form BCD M-steps; mutates and returns ``jones``."""
    d, m = jones.shape[:2]
    for _ in range(cfg.em_iters):
        w = e_step(x, jones, sources, weights)
        jones_before_em = jones.copy()
        for i in range(d):
            for _sweep in range(cfg.bcd_sweeps):
                before_sweep = jones[i].copy()
                for p in range(m):
                    factors = build_bcd_factors(
                        jones, sources, noise, weights, i, p, omega_inv=omega_inv
                    )
                    theta = bcd_update(factors, w[i], cfg.ridge_initial, cfg.ridge_max)
                    jones[i, p] = theta.reshape(2, 2)
                eps_bcd = float(np.sum((jones[i] - before_sweep).real ** 2))
                eps_bcd_out.append(eps_bcd)
                if eps_bcd < cfg.tol:
                    break
        eps_em = float(np.sum((jones - jones_before_em).real ** 2))
        eps_em_out.append(eps_em)
        if eps_em < cfg.tol:
            break
    return jones


def calibrate(
    x: VisibilityBatch, sources: SourceModel, config: CalibrationConfig | None = None
) -> CalibrationState:
    """Run the full relaxed concentrated ML loop on one visibility batch."""
    cfg = config or CalibrationConfig()
    d = sources.d
    m = x.n_antennas
    b = x.n_baselines
    if cfg.theta_init is not None:
        jones = np.array(cfg.theta_init, dtype=complex)
        if jones.shape != (d, m, 2, 2):
            raise ValueError(f"theta_init must have shape ({d}, {m}, 2, 2)")
    else:
        jones = np.broadcast_to(np.eye(2, dtype=complex), (d, m, 2, 2)).copy()
    if cfg.omega_init is not None:
        omega = np.asarray(cfg.omega_init, dtype=complex)
    else:
        omega = (
            np.broadcast_to(np.eye(4, dtype=complex) / 4, (b, 4, 4)).copy()
            if cfg.per_baseline_speckle
            else np.eye(4, dtype=complex) / 4
        )
    tau = np.ones(b) if cfg.tau_init is None else np.asarray(cfg.tau_init, dtype=float).copy()
    weights = EmWeights(beta=cfg.beta) if cfg.beta is not None else EmWeights.uniform(d)

    state = CalibrationState(jones=jones, noise=NoiseState(tau=tau, omega=omega))
    start = time.perf_counter()
    state.nll.append(relaxed_nll(x, jones, sources, state.noise))

    for outer in range(cfg.outer_iters):
        omega_inv, omega = _omega_inverses(omega, cfg.ridge_initial, cfg.ridge_max)
        state.noise.omega = omega
        jones_before = jones.copy()
        em_trace: list = []
        bcd_trace: list = []
        jones = _theta_step(
            x, jones, sources, weights, state.noise, omega_inv, cfg, em_trace, bcd_trace
        )
        state.eps_em.append(em_trace)
        state.eps_bcd.append(bcd_trace)

        res = residual_all(x, jones, sources)
        if not cfg.freeze_speckle:
            try:
                if cfg.per_baseline_speckle:
                    new_omega = omega.copy()
                    for k in range(b):
                        try:
                            new_omega[k] = update_speckle_per_baseline(
                                res[k], omega[k], cfg.texture_floor, cfg.ridge_initial
                            )
                        except DegenerateResidualsError:
                            pass
                    omega = new_omega
                else:
                    omega = update_speckle(res, omega, cfg.texture_floor)
            except DegenerateResidualsError:
                pass
            state.noise.omega = omega
        if not cfg.freeze_texture:
            omega_inv, omega = _omega_inverses(omega, cfg.ridge_initial, cfg.ridge_max)
            state.noise.omega = omega
            tau = update_textures(res, omega_inv, cfg.texture_floor)
            state.noise.tau = tau

        state.jones = jones
        state.n_outer = outer + 1
        eps_outer = float(np.sum((jones - jones_before).real ** 2))
        state.eps_outer.append(eps_outer)
        state.nll.append(relaxed_nll(x, jones, sources, state.noise))
        if not (
            np.all(np.isfinite(jones))
            and np.all(np.isfinite(tau))
            and np.all(np.isfinite(omega))
        ):
            state.wall_time_s = time.perf_counter() - start
            raise NonFiniteError(f"non-finite update at outer iteration {outer + 1}", state)
        if eps_outer < cfg.tol:
            state.converged = True
            break
        if cfg.time_budget_s is not None and time.perf_counter() - start > cfg.time_budget_s:
            break

    state.wall_time_s = time.perf_counter() - start
    return state
