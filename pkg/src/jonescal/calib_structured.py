"""Physical-parameter extraction from estimated Jones matrices.

Fits the structured factorization gain * beam * scalar-phase * rotation to a
Jones set in the Frobenius sense, by cyclic closed-form (gains, offsets) and
gridded 1D (Faraday angle) updates.

Ambiguities (documented, resolved by canonicalization and small truth
ranges): the per-path scalar phase and the rotation angle are determined
modulo pi, both canonicalized to (-pi/2, pi/2]; a common shift of all
per-source offsets can be traded against per-antenna gain phases
(exp{j s.r_p}), which :func:`align_offset_gauge` removes against a
reference.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGainError,
    DegenerateGeometryError,
    DegeneratePhaseError,
)
from .model import AntennaArray, SourceModel, StructuredParams, rotation

GRID_STEP = math.pi / 720
GOLDEN_ITERS = 20
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def canonical_angle(x: float) -> float:
    """Wrap an angle to (-pi/2, pi/2] (mod pi)."""
    r = math.remainder(x, math.pi)
    if r <= -math.pi / 2:
        r += math.pi
    return r


@dataclass
class StructuredCalibConfig:
    init: StructuredParams | None = None
    cycles: int = 50
    tol: float = 1e-8
    grid_step: float = GRID_STEP
    golden_iters: int = GOLDEN_ITERS


def _phase_factor(params: StructuredParams, array: AntennaArray, i: int, p: int) -> complex:
    return np.exp(1j * (params.offsets[i] @ array.positions[p]))


def structured_cost(
    jhat: np.ndarray, params: StructuredParams, sources: SourceModel, array: AntennaArray
) -> float:
    """Total squared Frobenius misfit of the structured model."""
    total = 0.0
    for i in range(params.d):
        f = rotation(params.faraday[i])
        for p in range(params.m):
            g = np.diag(params.gains[p])
            model = g @ sources.beam(i, p) @ (_phase_factor(params, array, i, p) * f)
            total += float(np.sum(np.abs(jhat[i, p] - model) ** 2))
    return total


def estimate_gains(
    jhat: np.ndarray,
    params: StructuredParams,
    sources: SourceModel,
    array: AntennaArray,
) -> np.ndarray:
    """(M, 2) conditionally optimal complex gains given rotation and offsets.

    Per antenna and polarization: ratio of the summed conjugated diagonals of
    X = R Jhat^H and W = R R^H, with R the gain-free model factor.
    """
    d, m = params.d, params.m
    gains = np.empty((m, 2), dtype=complex)
    for p in range(m):
        num = np.zeros(2, dtype=complex)
        den = np.zeros(2, dtype=complex)
        for i in range(d):
            r = sources.beam(i, p) @ (
                _phase_factor(params, array, i, p) * rotation(params.faraday[i])
            )
            xm = r @ jhat[i, p].conj().T
            wm = r @ r.conj().T
            num += np.diag(xm).conj()
            den += np.diag(wm).conj()
        if np.any(np.abs(den) < 1e-12):
            raise DegenerateGainError(f"vanishing model power at antenna {p}")
        gains[p] = num / den
    return gains


def estimate_phase(
    jhat_ip: np.ndarray,
    params: StructuredParams,
    sources: SourceModel,
    i: int,
    p: int,
) -> float:
    """Scalar propagation phase for path (i, p), canonical in (-pi/2, pi/2].

    Solves exp{2j phi} = Tr{M} / Tr{M^H} with M = Jhat F^H H^H G^H; the phase
    is determined modulo pi.
    """
    f = rotation(params.faraday[i])
    g = np.diag(params.gains[p])
    mm = jhat_ip @ f.conj().T @ sources.beam(i, p).conj().T @ g.conj().T
    tr = np.trace(mm)
    if abs(tr) < 1e-12:
        raise DegeneratePhaseError(f"trace magnitude below tolerance for path ({i}, {p})")
    return canonical_angle(0.5 * np.angle(tr / np.conj(tr)))


def estimate_offsets(phases: np.ndarray, array: AntennaArray) -> np.ndarray:
    """Closed-form 2x2 LS fit of per-antenna phases to eta*u + zeta*v."""
    u = array.positions[:, 0]
    v = array.positions[:, 1]
    suu, svv, suv = u @ u, v @ v, u @ v
    det = suu * svv - suv * suv
    if det <= 1e-12:
        raise DegenerateGeometryError("antenna positions are collinear in (u, v)")
    su = phases @ u
    sv = phases @ v
    return np.array([(su * svv - sv * suv) / det, (-su * suv + sv * suu) / det])


def _faraday_cost_terms(
    jhat: np.ndarray,
    params: StructuredParams,
    sources: SourceModel,
    array: AntennaArray,
    i: int,
):
    """Reduce the source-i misfit to c0 - 2(a cos + b sin) over the angle."""
    c0 = 0.0
    t = np.zeros((2, 2), dtype=complex)
    for p in range(params.m):
        a_p = np.diag(params.gains[p]) @ sources.beam(i, p) * _phase_factor(params, array, i, p)
        c0 += float(np.sum(np.abs(jhat[i, p]) ** 2) + np.sum(np.abs(a_p) ** 2))
        t += a_p.conj().T @ jhat[i, p]
    a = float(np.real(t[0, 0] + t[1, 1]))
    b = float(np.real(t[0, 1] - t[1, 0]))
    return c0, a, b


def estimate_faraday(
    jhat: np.ndarray,
    params: StructuredParams,
    sources: SourceModel,
    array: AntennaArray,
    i: int,
    grid_step: float = GRID_STEP,
    golden_iters: int = GOLDEN_ITERS,
) -> float:
    """Rotation angle minimizing the source-i misfit, by grid + golden section.

    The candidate never replaces the incoming angle unless it improves the
    misfit (guards cost monotonicity at grid resolution).
    """
    c0, a, b = _faraday_cost_terms(jhat, params, sources, array, i)

    def cost(theta):
        return c0 - 2.0 * (a * math.cos(theta) + b * math.sin(theta))

    n = int(round(math.pi / grid_step))
    grid = -math.pi / 2 + grid_step * np.arange(1, n + 1)
    values = [cost(th) for th in grid]
    k = int(np.argmin(values))
    lo = grid[k] - grid_step
    hi = grid[k] + grid_step

    c = hi - _INVPHI * (hi - lo)
    e = lo + _INVPHI * (hi - lo)
    fc, fe = cost(c), cost(e)
    for _ in range(golden_iters):
        if fc < fe:
            hi, e, fe = e, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = cost(c)
        else:
            lo, c, fc = c, e, fe
            e = lo + _INVPHI * (hi - lo)
            fe = cost(e)
    candidate = canonical_angle(0.5 * (lo + hi))
    current = params.faraday[i]
    if cost(candidate) <= cost(current):
        return candidate
    return canonical_angle(current)


def calibrate_structured(
    jhat: np.ndarray,
    sources: SourceModel,
    array: AntennaArray,
    config: StructuredCalibConfig | None = None,
) -> StructuredParams:
    """Cyclic extraction of rotation angles, gains, and offsets from a Jones
    set, in that order, until the parameter vector stalls."""
    cfg = config or StructuredCalibConfig()
    d, m = jhat.shape[:2]
    if cfg.init is not None:
        params = cfg.init
    else:
        params = StructuredParams(
            faraday=np.zeros(d),
            gains=np.ones((m, 2), dtype=complex),
            offsets=np.zeros((d, 2)),
        )

    prev = params.to_real_vector()
    for cycle in range(cfg.cycles):
        try:
            faraday = np.array(
                [
                    estimate_faraday(
                        jhat, params, sources, array, i, cfg.grid_step, cfg.golden_iters
                    )
                    for i in range(d)
                ]
            )
            params = StructuredParams(faraday=faraday, gains=params.gains, offsets=params.offsets)
            gains = estimate_gains(jhat, params, sources, array)
            params = StructuredParams(faraday=params.faraday, gains=gains, offsets=params.offsets)
            offsets = np.empty((d, 2))
            for i in range(d):
                phases = np.array(
                    [estimate_phase(jhat[i, p], params, sources, i, p) for p in range(m)]
                )
                offsets[i] = estimate_offsets(phases, array)
            params = StructuredParams(faraday=params.faraday, gains=params.gains, offsets=offsets)
        except (DegenerateGainError, DegeneratePhaseError, DegenerateGeometryError) as exc:
            raise type(exc)(f"cycle {cycle + 1}: {exc}") from exc
        vec = params.to_real_vector()
        if float(np.max(np.abs(vec - prev))) < cfg.tol:
            break
        prev = vec
    return params


def align_offset_gauge(
    est: StructuredParams, reference: StructuredParams, array: AntennaArray
) -> StructuredParams:
    """Remove the common offset shift (with its gain-phase counterpart)
    against a reference parameter set; the transform leaves the modeled Jones
    matrices unchanged."""
    shift = np.mean(est.offsets - reference.offsets, axis=0)
    gains = est.gains * np.exp(1j * (array.positions @ shift))[:, None]
    return StructuredParams(
        faraday=est.faraday.copy(), gains=gains, offsets=est.offsets - shift
    )
