"""Monte-Carlo experiment runner: scene presets, seeded reproducible sweeps,
MSE/CRB reporting, and convergence traces.

Seeding: a single 64-bit seed fans out through ``numpy.random.SeedSequence``
into one child stream per (SNR point, run); per-run draws happen in a fixed
order (initial Jones guess, structured initial guess, outliers, noise), so
results are independent of thread count.
"""

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BaselineConfig, gaussian_ls_calibrate, student_t_calibrate
from .calib_robust import CalibrationConfig, CalibrationState, calibrate
from .calib_structured import StructuredCalibConfig, align_offset_gauge, calibrate_structured
from .crb import crb_diag, fisher
from .errors import ConfigError, JonescalError
from .model import (
    AntennaArray,
    Scene,
    SourceModel,
    StructuredParams,
    VisibilityBatch,
    structured_jones_all,
    synth_all,
)
from .noise import NoiseSpec, OutlierSpec, calibrate_snr, default_speckle, sample_noise, inject_outliers

METHODS = ("robust", "gaussian_ls", "student_t")


# ---------------------------------------------------------------------------
# Scene construction
# ---------------------------------------------------------------------------

def disc_positions(m: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """(M, 2) positions drawn uniformly over a disc, in wavelengths."""
    r = radius * np.sqrt(rng.uniform(0.05, 1.0, size=m))
    phi = rng.uniform(0, 2 * np.pi, size=m)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def perturb_jones(truth: np.ndarray, rel: float, rng: np.random.Generator) -> np.ndarray:
    """Truth plus a complex Gaussian perturbation of relative size ``rel``."""
    scale = rel * np.sqrt(np.mean(np.abs(truth) ** 2))
    noise = (rng.standard_normal(truth.shape) + 1j * rng.standard_normal(truth.shape)) / np.sqrt(2)
    return truth + scale * noise


def default_scene(
    d: int = 2,
    m: int = 8,
    seed: int = 1234,
    fluxes: tuple = (2.0, 1.0),
    jones_spread: float = 0.1,
    direction_slope: float = 2.0,
    radius: float = 5.0,
) -> Scene:
    """Unpolarized calibrators with direction-dependent path phases.

    Each source carries a random phase slope over the array (apparent
    direction), which keeps the per-source responses well separated; the rest
    of the Jones matrices are near-identity with ``jones_spread`` scatter.
    """
    rng = np.random.default_rng(seed)
    pos = disc_positions(m, radius, rng)
    flux = [fluxes[i % len(fluxes)] for i in range(d)]
    coh = np.stack([f * np.eye(2, dtype=complex) for f in flux])
    slopes = rng.uniform(-direction_slope, direction_slope, size=(d, 2))
    phases = np.exp(1j * (slopes @ pos.T))
    jones = np.broadcast_to(np.eye(2, dtype=complex), (d, m, 2, 2)).copy()
    jones += jones_spread * (
        rng.standard_normal((d, m, 2, 2)) + 1j * rng.standard_normal((d, m, 2, 2))
    ) / np.sqrt(2)
    jones *= phases[:, :, None, None]
    return Scene(
        array=AntennaArray(pos),
        sources=SourceModel(coherencies=coh),
        jones_truth=jones,
    )


def structured_scene(
    d: int = 2,
    m: int = 8,
    seed: int = 1234,
    fluxes: tuple = (2.0, 1.0),
    gain_spread: float = 0.1,
    offset_scale: float = 0.03,
    radius: float = 5.0,
) -> Scene:
    """Scene whose truth Jones set follows the structured physical model.

    Offsets are kept small enough that every per-path phase stays inside
    (-pi/2, pi/2), avoiding the modulo-pi branch of the phase estimator.
    """
    rng = np.random.default_rng(seed)
    pos = disc_positions(m, radius, rng)
    flux = [fluxes[i % len(fluxes)] for i in range(d)]
    coh = np.stack([f * np.eye(2, dtype=complex) for f in flux])
    faraday = rng.uniform(-0.5, 0.5, size=d)
    gains = 1.0 + gain_spread * (
        rng.standard_normal((m, 2)) + 1j * rng.standard_normal((m, 2))
    ) / np.sqrt(2)
    offsets = rng.uniform(-offset_scale, offset_scale, size=(d, 2))
    params = StructuredParams(faraday=faraday, gains=gains, offsets=offsets)
    array = AntennaArray(pos)
    sources = SourceModel(coherencies=coh)
    return Scene(
        array=array,
        sources=sources,
        jones_truth=structured_jones_all(params, sources, array),
        structured_truth=params,
    )


def perturb_structured(
    truth: StructuredParams, rel: float, rng: np.random.Generator
) -> StructuredParams:
    """Relative perturbation of every structured parameter block."""

    def spread(x):
        s = np.sqrt(np.mean(np.abs(x) ** 2))
        return s if s > 0 else 1.0

    faraday = truth.faraday + rel * spread(truth.faraday) * rng.standard_normal(truth.d)
    faraday = np.clip(faraday, -np.pi / 2 + 1e-9, np.pi / 2)
    gains = truth.gains + rel * spread(truth.gains) * (
        rng.standard_normal(truth.gains.shape) + 1j * rng.standard_normal(truth.gains.shape)
    ) / np.sqrt(2)
    offsets = truth.offsets + rel * spread(truth.offsets) * rng.standard_normal((truth.d, 2))
    return StructuredParams(faraday=faraday, gains=gains, offsets=offsets)


# ---------------------------------------------------------------------------
# Gauge alignment and error vectors
# ---------------------------------------------------------------------------

def align_jones(est: np.ndarray, truth: np.ndarray, coherencies: np.ndarray) -> np.ndarray:
    """Best-fit per-source gauge transform of ``est`` toward ``truth``.

    For (near-)scalar coherencies the invariance group is the full unitary
    group and the fit is a Procrustes solve; otherwise diagonal phases in the
    coherency eigenbasis are fitted (the commuting subgroup).
    """
    out = est.copy()
    for i in range(est.shape[0]):
        c = coherencies[i]
        w, e = np.linalg.eigh(c)
        if w.max() - w.min() <= 1e-9 * max(abs(w.max()), 1.0):
            s = np.zeros((2, 2), dtype=complex)
            for p in range(est.shape[1]):
                s += est[i, p].conj().T @ truth[i, p]
            u, _, vh = np.linalg.svd(s)
            q = u @ vh
        else:
            est_e = est[i] @ e
            truth_e = truth[i] @ e
            phases = np.ones(2, dtype=complex)
            for k in range(2):
                s = complex(np.sum(np.conj(est_e[:, :, k]) * truth_e[:, :, k]))
                if abs(s) > 0:
                    phases[k] = s / abs(s)
            q = e @ np.diag(phases) @ e.conj().T
        out[i] = est[i] @ q
    return out


def jones_real_vector(jones: np.ndarray) -> np.ndarray:
    """Flatten to the canonical real parameter order used by the FIM."""
    flat = jones.reshape(-1, 4)
    return np.column_stack(
        [flat[:, 0].real, flat[:, 0].imag, flat[:, 1].real, flat[:, 1].imag,
         flat[:, 2].real, flat[:, 2].imag, flat[:, 3].real, flat[:, 3].imag]
    ).reshape(-1)


def jones_sq_errors(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-real-parameter squared errors in canonical order."""
    diff = jones_real_vector(est) - jones_real_vector(truth)
    return diff**2


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scene: Scene
    methods: list = field(default_factory=lambda: ["robust"])
    snr_db: list = field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0])
    runs: int = 100
    seed: int = 0
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(
        texture_law="inverse_gamma", nu=3.0, omega=default_speckle()))
    outliers: OutlierSpec | None = None
    solver: CalibrationConfig = field(default_factory=CalibrationConfig)
    init_perturbation: float = 0.1
    align: bool = False
    structured: bool = False
    structured_init_perturbation: float = 0.1
    student_t_nu: float = 5.0
    student_t_estimate_nu: bool = False
    matched_time: bool = False
    threads: int = 1
    compute_crb: bool = True

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs", "need at least one Monte-Carlo run")
        if not self.snr_db:
            raise ConfigError("snr_db", "SNR grid must be nonempty")
        for name in self.methods:
            if name not in METHODS:
                raise ConfigError("methods", f"unknown method '{name}' (choose from {METHODS})")
        if self.structured and self.scene.structured_truth is None:
            raise ConfigError("structured", "scene has no structured truth parameters")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")

    def canonical_obj(self):
        return {
            "scene": self.scene.to_json_obj(),
            "methods": list(self.methods),
            "snr_db": [float(s) for s in self.snr_db],
            "runs": self.runs,
            "seed": self.seed,
            "noise": {
                "texture_law": self.noise.texture_law,
                "nu": self.noise.nu,
                "sigma2": self.noise.sigma2,
                "per_baseline": self.noise.per_baseline,
            },
            "outliers": None if self.outliers is None else {
                "d_prime": self.outliers.d_prime,
                "flux_scale": self.outliers.flux_scale,
                "jones_jitter": self.outliers.jones_jitter,
            },
            "solver": {
                "outer_iters": self.solver.outer_iters,
                "em_iters": self.solver.em_iters,
                "bcd_sweeps": self.solver.bcd_sweeps,
                "tol": self.solver.tol,
                "per_baseline_speckle": self.solver.per_baseline_speckle,
            },
            "init_perturbation": self.init_perturbation,
            "align": self.align,
            "structured": self.structured,
            "structured_init_perturbation": self.structured_init_perturbation,
            "student_t_nu": self.student_t_nu,
            "student_t_estimate_nu": self.student_t_estimate_nu,
            "matched_time": self.matched_time,
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.canonical_obj(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class ExperimentResult:
    config_hash: str
    seed: int
    rows: list                      # dicts: method, snr_db, param_index, mse, crb, runs
    structured_rows: list
    metadata: dict
    traces: dict                    # traces[method][snr_idx] = first-run convergence trace
    failures: list


def convergence_trace(state: CalibrationState) -> dict:
    """Per-loop-level squared-step series for semilog plotting."""
    return {
        "outer": list(state.eps_outer),
        "em": list(state.eps_em[0]) if state.eps_em else [],
        "bcd": list(state.eps_bcd[0]) if state.eps_bcd else [],
    }


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _solver_config(cfg: ExperimentConfig, init: np.ndarray) -> CalibrationConfig:
    return replace(cfg.solver, theta_init=init, per_baseline_speckle=cfg.noise.per_baseline)


def _run_methods(cfg: ExperimentConfig, x: VisibilityBatch, init: np.ndarray):
    """Calibrate one batch with every requested method under matched budgets."""
    states = {}
    robust_time = None
    for name in cfg.methods:
        solver = _solver_config(cfg, init.copy())
        if name == "robust":
            state = calibrate(x, cfg.scene.sources, solver)
            robust_time = state.wall_time_s
        elif name == "gaussian_ls":
            budget = robust_time if cfg.matched_time else None
            bl = BaselineConfig(kind="gaussian_ls", solver=solver, time_budget_s=budget)
            state = gaussian_ls_calibrate(x, cfg.scene.sources, bl)
        else:
            budget = robust_time if cfg.matched_time else None
            bl = BaselineConfig(
                kind="student_t",
                nu_init=cfg.student_t_nu,
                estimate_nu=cfg.student_t_estimate_nu,
                solver=solver,
                time_budget_s=budget,
            )
            state = student_t_calibrate(x, cfg.scene.sources, bl)
        states[name] = state
    return states


def _one_run(cfg: ExperimentConfig, snr: float, child_seed) -> dict:
    rng = np.random.default_rng(child_seed)
    scene = cfg.scene
    truth = scene.jones_truth
    clean = synth_all(truth, scene.sources)

    init = perturb_jones(truth, cfg.init_perturbation, rng)
    structured_init = None
    if cfg.structured:
        structured_init = perturb_structured(
            scene.structured_truth, cfg.structured_init_perturbation, rng
        )
    data = clean.data.copy()
    if cfg.outliers is not None and cfg.outliers.d_prime > 0:
        data = inject_outliers(clean, cfg.outliers, scene.array, rng).data
    spec = calibrate_snr(clean, cfg.noise, snr)
    data = data + sample_noise(spec, clean.n_baselines, rng)
    x = VisibilityBatch(data=data, n_antennas=scene.m)

    out = {"sq": {}, "sq_structured": {}, "trace": {}, "time": {}, "error": None}
    try:
        states = _run_methods(cfg, x, init)
    except JonescalError as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    for name, state in states.items():
        est = state.jones
        if cfg.align:
            est = align_jones(est, truth, scene.sources.coherencies)
        out["sq"][name] = jones_sq_errors(est, truth)
        out["trace"][name] = convergence_trace(state)
        out["time"][name] = state.wall_time_s
        if cfg.structured:
            try:
                params = calibrate_structured(
                    state.jones,
                    scene.sources,
                    scene.array,
                    StructuredCalibConfig(init=structured_init),
                )
                aligned = align_offset_gauge(params, scene.structured_truth, scene.array)
                diff = aligned.to_real_vector() - scene.structured_truth.to_real_vector()
                out["sq_structured"][name] = diff**2
            except JonescalError as exc:
                out["error"] = f"structured/{name}: {type(exc).__name__}: {exc}"
    return out


def _crb_for_snr(cfg: ExperimentConfig, snr: float):
    if not cfg.compute_crb or cfg.noise.omega.ndim != 2:
        return None
    clean = synth_all(cfg.scene.jones_truth, cfg.scene.sources)
    spec = calibrate_snr(clean, cfg.noise, snr)
    omega_scaled = spec.sigma2 * spec.omega
    nu = cfg.noise.nu if cfg.noise.texture_law == "inverse_gamma" else math.inf
    f = fisher(cfg.scene.jones_truth, cfg.scene.sources, omega_scaled, nu)
    return crb_diag(f).values


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute the Monte-Carlo sweep and aggregate per-parameter MSEs."""
    n_snr = len(cfg.snr_db)
    children = np.random.SeedSequence(cfg.seed).spawn(n_snr * cfg.runs)
    jobs = [
        (si, run, cfg.snr_db[si], children[si * cfg.runs + run])
        for si in range(n_snr)
        for run in range(cfg.runs)
    ]

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda j: _one_run(cfg, j[2], j[3]), jobs))
    else:
        results = [_one_run(cfg, j[2], j[3]) for j in jobs]

    rows = []
    structured_rows = []
    traces: dict = {name: {} for name in cfg.methods}
    failures = []
    wall = {name: 0.0 for name in cfg.methods}
    for si, snr in enumerate(cfg.snr_db):
        crb_vals = _crb_for_snr(cfg, snr)
        per_run = results[si * cfg.runs : (si + 1) * cfg.runs]
        for run, res in enumerate(per_run):
            if res["error"] is not None:
                failures.append({"snr_db": snr, "run": run, "error": res["error"]})
        for name in cfg.methods:
            sq = np.array([r["sq"][name] for r in per_run if name in r["sq"]])
            n_ok = sq.shape[0]
            if n_ok == 0:
                continue
            mse = sq.mean(axis=0)
            for k in range(mse.shape[0]):
                rows.append({
                    "method": name,
                    "snr_db": float(snr),
                    "param_index": k,
                    "mse": float(mse[k]),
                    "crb": float(crb_vals[k]) if crb_vals is not None else math.nan,
                    "runs": n_ok,
                })
            first = next((r for r in per_run if name in r["trace"]), None)
            if first is not None:
                traces[name][si] = first["trace"][name]
            wall[name] += float(sum(r["time"].get(name, 0.0) for r in per_run))
            if cfg.structured:
                sq_s = np.array(
                    [r["sq_structured"][name] for r in per_run if name in r["sq_structured"]]
                )
                if sq_s.shape[0]:
                    mse_s = sq_s.mean(axis=0)
                    for k in range(mse_s.shape[0]):
                        structured_rows.append({
                            "method": name,
                            "snr_db": float(snr),
                            "param_index": k,
                            "mse": float(mse_s[k]),
                            "crb": math.nan,
                            "runs": int(sq_s.shape[0]),
                        })

    scene = cfg.scene
    b = scene.array.n_baselines
    metadata = {
        "config": cfg.canonical_obj(),
        "config_hash": cfg.config_hash(),
        "d": scene.d,
        "m": scene.m,
        "baselines": b,
        "real_parameters": 8 * scene.d * scene.m,
        "real_measurements": 8 * b,
        "structured_real_parameters": (
            scene.structured_truth.to_real_vector().shape[0]
            if scene.structured_truth is not None
            else None
        ),
        "wall_time_s": wall,
        "failed_runs": len(failures),
    }
    return ExperimentResult(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        rows=rows,
        structured_rows=structured_rows,
        metadata=metadata,
        traces=traces,
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

CSV_FIELDS = ["method", "snr_db", "param_index", "mse", "crb", "runs", "seed"]


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, ".17g")
    return str(value)


def write_rows_csv(rows, seed: int, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow([
                row["method"], _fmt(float(row["snr_db"])), row["param_index"],
                _fmt(row["mse"]), _fmt(row["crb"]), row["runs"], seed,
            ])


def write_result(result: ExperimentResult, out_dir) -> dict:
    """Write results.csv (+ structured CSV when present) and the metadata
    sidecar; returns the paths written."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    main = os.path.join(out_dir, "results.csv")
    write_rows_csv(result.rows, result.seed, main)
    paths["results"] = main
    if result.structured_rows:
        spath = os.path.join(out_dir, "results_structured.csv")
        write_rows_csv(result.structured_rows, result.seed, spath)
        paths["results_structured"] = spath
    sidecar = os.path.join(out_dir, "metadata.json")
    with open(sidecar, "w") as fh:
        json.dump(
            {
                "metadata": result.metadata,
                "traces": result.traces,
                "failures": result.failures,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    paths["metadata"] = sidecar
    return paths


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def preset_config(name: str, seed: int = 0, runs: int = 100, threads: int = 1) -> ExperimentConfig:
    """Bundled experiment presets mirroring the reference simulation setups."""
    if name == "fig2":
        return ExperimentConfig(
            scene=default_scene(d=2, m=8, seed=seed + 1000),
            methods=["robust"],
            snr_db=[5.0, 10.0, 15.0, 20.0],
            runs=runs,
            seed=seed,
            noise=NoiseSpec(texture_law="inverse_gamma", nu=3.0, omega=default_speckle()),
            init_perturbation=0.05,
            align=True,
            threads=threads,
        )
    if name == "fig3":
        return ExperimentConfig(
            scene=default_scene(d=2, m=8, seed=seed + 1000),
            methods=["robust", "student_t", "gaussian_ls"],
            snr_db=[10.0, 15.0, 20.0],
            runs=runs,
            seed=seed,
            noise=NoiseSpec(texture_law="constant"),
            outliers=OutlierSpec(d_prime=8, flux_scale=0.1),
            solver=CalibrationConfig(outer_iters=10),
            init_perturbation=0.05,
            align=True,
            compute_crb=False,
            threads=threads,
        )
    if name == "fig4":
        return ExperimentConfig(
            scene=structured_scene(d=2, m=8, seed=seed + 2000),
            methods=["robust", "student_t", "gaussian_ls"],
            snr_db=[10.0, 15.0, 20.0],
            runs=runs,
            seed=seed,
            noise=NoiseSpec(texture_law="constant"),
            outliers=OutlierSpec(d_prime=4, flux_scale=0.1),
            solver=CalibrationConfig(outer_iters=10),
            init_perturbation=0.05,
            structured=True,
            compute_crb=False,
            threads=threads,
        )
    raise ConfigError("preset", f"unknown preset '{name}' (fig2, fig3, fig4)")
