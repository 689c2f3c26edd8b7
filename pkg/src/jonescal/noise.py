"""Compound-Gaussian (texture x speckle) noise generation, outlier injection,
and SNR bookkeeping.

Noise per baseline is sqrt(tau) * g with positive random texture tau and
complex Gaussian speckle g ~ CN(0, sigma2 * omega), tr(omega) = 1.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ZeroSignalError
from .model import AntennaArray, SourceModel, VisibilityBatch, synth_per_source

TEXTURE_LAWS = ("constant", "inverse_gamma", "table")


def unit_trace(omega: np.ndarray) -> np.ndarray:
    """Renormalize a speckle covariance (or a stack of them) to unit trace."""
    omega = np.asarray(omega, dtype=complex)
    tr = np.trace(omega, axis1=-2, axis2=-1).real
    return omega / tr[..., None, None] if omega.ndim == 3 else omega / tr


def default_speckle(rho: float = 0.9) -> np.ndarray:
    """Unit-trace 4x4 covariance with entries rho^|k-l| * exp{j pi (k-l) / 2}."""
    k = np.arange(4)
    diff = k[:, None] - k[None, :]
    return unit_trace(rho ** np.abs(diff) * np.exp(1j * np.pi * diff / 2))


@dataclass(frozen=True)
class NoiseSpec:
    """Texture law + unit-trace speckle covariance + overall scale sigma2.

    ``omega`` is either a shared (4, 4) covariance or a (B, 4, 4) stack;
    ``per_baseline`` asks the estimator for the per-baseline speckle mode.
    """

    texture_law: str = "constant"
    nu: float | None = None
    table: np.ndarray | None = None
    omega: np.ndarray | None = None
    sigma2: float = 1.0
    per_baseline: bool = False

    def __post_init__(self):
        if self.texture_law not in TEXTURE_LAWS:
            raise ConfigError("noise.texture_law", f"must be one of {TEXTURE_LAWS}")
        if self.texture_law == "inverse_gamma":
            if self.nu is None or self.nu <= 0:
                raise ConfigError("noise.nu", "inverse_gamma texture needs nu > 0")
        if self.texture_law == "table":
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 1 or tab.size == 0 or np.any(tab <= 0):
                raise ConfigError("noise.table", "need a nonempty positive table")
            object.__setattr__(self, "table", tab)
        if self.sigma2 < 0:
            raise ConfigError("noise.sigma2", "must be nonnegative")
        omega = np.eye(4, dtype=complex) / 4 if self.omega is None else np.asarray(self.omega, dtype=complex)
        if omega.shape[-2:] != (4, 4) or omega.ndim not in (2, 3):
            raise ConfigError("noise.omega", "expected a (4, 4) matrix or (B, 4, 4) stack")
        dev = np.max(np.abs(omega - np.conj(np.swapaxes(omega, -1, -2))))
        if dev > 1e-10 * max(1.0, np.max(np.abs(omega))):
            raise ConfigError("noise.omega", "speckle covariance must be Hermitian")
        if np.min(np.linalg.eigvalsh(omega)) < -1e-10:
            raise ConfigError("noise.omega", "speckle covariance must be PSD")
        object.__setattr__(self, "omega", unit_trace(omega))

    def expected_texture(self) -> float:
        if self.texture_law == "constant":
            return 1.0
        if self.texture_law == "table":
            return float(np.mean(self.table))
        if self.nu <= 2:
            raise ConfigError("noise.nu", "texture mean diverges for nu <= 2; SNR undefined")
        return self.nu / (self.nu - 2)


def sample_texture(spec: NoiseSpec, rng: np.random.Generator) -> float:
    """One positive texture draw."""
    return float(sample_textures(spec, 1, rng)[0])


def sample_textures(spec: NoiseSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    if spec.texture_law == "constant":
        return np.ones(size)
    if spec.texture_law == "table":
        return rng.choice(spec.table, size=size)
    # inverse-gamma(nu/2, nu/2) via reciprocal of gamma draws
    return 1.0 / rng.gamma(shape=spec.nu / 2, scale=2.0 / spec.nu, size=size)


def _speckle_factors(omega: np.ndarray, b: int) -> np.ndarray:
    """(B, 4, 4) factors L with L L^H = omega (eigenvalue-based, PSD-safe)."""
    om = np.broadcast_to(omega, (b, 4, 4)) if omega.ndim == 2 else omega
    w, v = np.linalg.eigh(om)
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)[:, None, :]


def sample_noise(spec: NoiseSpec, b: int, rng: np.random.Generator) -> np.ndarray:
    """(B, 4) compound-Gaussian noise draws, one per baseline."""
    if spec.omega.ndim == 3 and spec.omega.shape[0] != b:
        raise ConfigError("noise.omega", f"per-baseline stack must have {b} entries")
    tau = sample_textures(spec, b, rng)
    xi = (rng.standard_normal((b, 4)) + 1j * rng.standard_normal((b, 4))) / np.sqrt(2)
    g = np.einsum("bij,bj->bi", _speckle_factors(spec.omega, b), xi)
    return np.sqrt(spec.sigma2 * tau)[:, None] * g


@dataclass(frozen=True)
class OutlierSpec:
    """Weak non-calibrator sources absorbed into the noise.

    Each outlier source carries a random apparent direction (uniform phase
    slopes over the array) and near-identity Jones terms jittered by
    ``jones_jitter`` per entry; its visibility contribution is normalized so
    a single source injects flux_scale^2 of the calibrator signal power.
    """

    d_prime: int = 0
    flux_scale: float = 0.1
    jones_jitter: float = 0.3

    def __post_init__(self):
        if self.d_prime < 0:
            raise ConfigError("outliers.d_prime", "must be nonnegative")
        if self.flux_scale <= 0:
            raise ConfigError("outliers.flux_scale", "must be positive")


def inject_outliers(
    clean: VisibilityBatch,
    spec: OutlierSpec,
    array: AntennaArray,
    rng: np.random.Generator,
) -> VisibilityBatch:
    """Add the visibility contributions of ``d_prime`` weak random sources."""
    if spec.d_prime == 0:
        return VisibilityBatch(data=clean.data.copy(), n_antennas=clean.n_antennas)
    m = clean.n_antennas
    ref = np.linalg.norm(clean.data)
    if ref == 0.0:
        raise ZeroSignalError("cannot scale outliers against a zero calibrator signal")
    unit_coh = SourceModel(coherencies=np.eye(2, dtype=complex)[None])
    data = clean.data.copy()
    for _ in range(spec.d_prime):
        slope = rng.uniform(-np.pi, np.pi, size=2)
        phases = np.exp(1j * (array.positions @ slope))
        jitter = spec.jones_jitter * (
            rng.standard_normal((m, 2, 2)) + 1j * rng.standard_normal((m, 2, 2))
        ) / np.sqrt(2)
        jones = phases[:, None, None] * (np.eye(2, dtype=complex) + jitter)
        contrib = synth_per_source(jones[None], unit_coh)[0]
        norm = np.linalg.norm(contrib)
        if norm > 0:
            data += contrib * (spec.flux_scale * ref / norm)
    return VisibilityBatch(data=data, n_antennas=m)


def calibrate_snr(clean: VisibilityBatch, spec: NoiseSpec, target_snr_db: float) -> NoiseSpec:
    """Rescale sigma2 so 10 log10(signal energy / expected noise energy) hits
    the target.

    Expected noise energy per baseline is E[tau] * sigma2 * tr(omega)
    = E[tau] * sigma2.
    """
    signal = float(np.vdot(clean.data, clean.data).real)
    if signal == 0.0:
        raise ZeroSignalError("clean visibilities are identically zero")
    b = clean.n_baselines
    sigma2 = signal / (b * spec.expected_texture() * 10.0 ** (target_snr_db / 10.0))
    return replace(spec, sigma2=sigma2)


def empirical_snr_db(clean: VisibilityBatch, noise: np.ndarray) -> float:
    """Realized SNR of one noise draw against the clean batch."""
    return 10.0 * np.log10(
        np.vdot(clean.data, clean.data).real / np.vdot(noise, noise).real
    )


def make_baseline_noise_stack(omega: np.ndarray, b: int) -> np.ndarray:
    """Broadcast a shared speckle covariance to a per-baseline stack."""
    if omega.ndim == 2:
        return np.broadcast_to(omega, (b, 4, 4)).copy()
    return omega.copy()
