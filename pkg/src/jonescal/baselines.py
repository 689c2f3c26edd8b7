"""Comparison calibrators: Gaussian least squares and a Student's-t ECM
reimplementation, sharing the robust solver's EM+BCD machinery.

The Gaussian baseline is exactly the robust algorithm with the texture frozen
at one and the speckle covariance frozen at I/4. The Student's-t baseline is
iteratively reweighted: residual a_pq gets weight (nu + 4) / (nu + |a_pq|^2 /
s^2) with s^2 the weighted mean residual power per component; the weights
enter the BCD blocks as effective inverse textures. The degrees of freedom
can optionally be re-estimated on a log-spaced grid by maximizing the
marginal likelihood of the scaled residuals.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .algebra import herm_inv
from .calib_robust import (
    CalibrationConfig,
    CalibrationState,
    EmWeights,
    NoiseState,
    _theta_step,
    calibrate,
    relaxed_nll,
    residual_all,
)
from .errors import ConfigError
from .model import SourceModel, VisibilityBatch

NU_GRID = np.logspace(np.log10(0.1), np.log10(100.0), 40)


@dataclass
class BaselineConfig:
    """Options for the comparison calibrators."""

    kind: str = "gaussian_ls"
    nu_init: float = 5.0
    estimate_nu: bool = False
    solver: CalibrationConfig = field(default_factory=CalibrationConfig)
    time_budget_s: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian_ls", "student_t"):
            raise ConfigError("baseline.kind", "must be 'gaussian_ls' or 'student_t'")
        if self.nu_init <= 0:
            raise ConfigError("baseline.nu_init", "must be positive")
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise ConfigError("baseline.time_budget_s", "must be positive")


def gaussian_ls_calibrate(
    x: VisibilityBatch,
    sources: SourceModel,
    config: BaselineConfig | CalibrationConfig | None = None,
) -> CalibrationState:
    """Classical white-Gaussian least-squares calibration."""
    if isinstance(config, BaselineConfig):
        solver = config.solver
        budget = config.time_budget_s
    else:
        solver = config or CalibrationConfig()
        budget = None
    cfg = CalibrationConfig(
        theta_init=solver.theta_init,
        beta=solver.beta,
        outer_iters=solver.outer_iters,
        em_iters=solver.em_iters,
        bcd_sweeps=solver.bcd_sweeps,
        tol=solver.tol,
        freeze_texture=True,
        freeze_speckle=True,
        texture_floor=solver.texture_floor,
        ridge_initial=solver.ridge_initial,
        ridge_max=solver.ridge_max,
        time_budget_s=budget if budget is not None else solver.time_budget_s,
    )
    state = calibrate(x, sources, cfg)
    state.method = "gaussian_ls"
    return state


def student_t_weights(residuals: np.ndarray, nu: float, s2: float) -> np.ndarray:
    """Posterior precision weights for 4-component complex residuals."""
    delta = np.einsum("bi,bi->b", residuals.conj(), residuals).real / s2
    return (nu + 4.0) / (nu + delta)


def _student_t_scale(residuals: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean residual power per complex component."""
    power = np.einsum("bi,bi->b", residuals.conj(), residuals).real
    return max(float(np.sum(weights * power) / (4.0 * residuals.shape[0])), 1e-30)


def _nu_log_likelihood(nu: float, delta: np.ndarray, s2: float) -> float:
    """Marginal log-likelihood of the residuals for a given nu (up to consts)."""
    b = delta.shape[0]
    return (
        b * (nu * math.log(nu) - math.lgamma(nu) + math.lgamma(nu + 4.0))
        - 4.0 * b * math.log(s2)
        - (nu + 4.0) * float(np.sum(np.log(nu + delta)))
    )


def update_nu(residuals: np.ndarray, s2: float, grid: np.ndarray = NU_GRID) -> float:
    """Grid maximization of the marginal likelihood over degrees of freedom."""
    delta = np.einsum("bi,bi->b", residuals.conj(), residuals).real / s2
    scores = [_nu_log_likelihood(nu, delta, s2) for nu in grid]
    return float(grid[int(np.argmax(scores))])


def student_t_calibrate(
    x: VisibilityBatch,
    sources: SourceModel,
    config: BaselineConfig | None = None,
) -> CalibrationState:
    """Iteratively reweighted calibration under a Student's-t noise model."""
    cfg = config or BaselineConfig(kind="student_t")
    solver = cfg.solver
    d = sources.d
    m = x.n_antennas
    b = x.n_baselines
    if solver.theta_init is not None:
        jones = np.array(solver.theta_init, dtype=complex)
    else:
        jones = np.broadcast_to(np.eye(2, dtype=complex), (d, m, 2, 2)).copy()
    weights = EmWeights(beta=solver.beta) if solver.beta is not None else EmWeights.uniform(d)
    omega = np.eye(4, dtype=complex) / 4
    omega_inv = herm_inv(omega)
    nu = cfg.nu_init
    s2 = 1.0

    state = CalibrationState(
        jones=jones, noise=NoiseState(tau=np.ones(b), omega=omega), method="student_t"
    )
    start = time.perf_counter()
    state.nll.append(relaxed_nll(x, jones, sources, state.noise))

    for outer in range(solver.outer_iters):
        res = residual_all(x, jones, sources)
        s2 = _student_t_scale(res, student_t_weights(res, nu, s2))
        w = student_t_weights(res, nu, s2)
        if cfg.estimate_nu:
            nu = update_nu(res, s2)
            w = student_t_weights(res, nu, s2)
        state.noise.tau = 1.0 / w

        jones_before = jones.copy()
        em_trace: list = []
        bcd_trace: list = []
        jones = _theta_step(
            x, jones, sources, weights, state.noise, omega_inv, solver, em_trace, bcd_trace
        )
        state.eps_em.append(em_trace)
        state.eps_bcd.append(bcd_trace)
        state.jones = jones
        state.n_outer = outer + 1
        eps_outer = float(np.sum((jones - jones_before).real ** 2))
        state.eps_outer.append(eps_outer)
        state.nll.append(relaxed_nll(x, jones, sources, state.noise))
        if eps_outer < solver.tol:
            state.converged = True
            break
        if cfg.time_budget_s is not None and time.perf_counter() - start > cfg.time_budget_s:
            break

    state.wall_time_s = time.perf_counter() - start
    return state
