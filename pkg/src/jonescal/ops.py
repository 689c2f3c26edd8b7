"""Single-shot operations shared by the HTTP service and the CLI.

Each function takes plain JSON-style objects (already validated by the
caller's schema layer), runs the core numerics, and returns JSON-style
objects; complex leaves are [re, im] pairs.
"""

import numpy as np

from .baselines import BaselineConfig, gaussian_ls_calibrate, student_t_calibrate
from .calib_robust import CalibrationConfig, calibrate
from .calib_structured import StructuredCalibConfig, calibrate_structured
from .crb import crb_diag, fisher
from .errors import ConfigError
from .harness import perturb_jones
from .model import Scene, StructuredParams, VisibilityBatch, synth_all
from .noise import (
    NoiseSpec,
    OutlierSpec,
    calibrate_snr,
    default_speckle,
    inject_outliers,
    sample_noise,
)
from .serialize import pairs_to_complex


def noise_spec_from_obj(obj) -> NoiseSpec:
    obj = obj or {}
    law = obj.get("texture_law", "constant")
    omega = obj.get("omega", "white")
    if omega == "default":
        omega_arr = default_speckle()
    elif omega == "white" or omega is None:
        omega_arr = np.eye(4, dtype=complex) / 4
    else:
        omega_arr = pairs_to_complex(omega)
    table = obj.get("table")
    return NoiseSpec(
        texture_law=law,
        nu=obj.get("nu"),
        table=None if table is None else np.asarray(table, dtype=float),
        omega=omega_arr,
        sigma2=float(obj.get("sigma2", 1.0)),
        per_baseline=bool(obj.get("per_baseline", False)),
    )


def outlier_spec_from_obj(obj) -> OutlierSpec | None:
    if not obj:
        return None
    return OutlierSpec(
        d_prime=int(obj.get("d_prime", 0)),
        flux_scale=float(obj.get("flux_scale", 0.1)),
        jones_jitter=float(obj.get("jones_jitter", 0.3)),
    )


def solver_config_from_obj(obj) -> CalibrationConfig:
    obj = obj or {}
    return CalibrationConfig(
        outer_iters=int(obj.get("outer_iters", 20)),
        em_iters=int(obj.get("em_iters", 5)),
        bcd_sweeps=int(obj.get("bcd_sweeps", 3)),
        tol=float(obj.get("tol", 1e-8)),
        per_baseline_speckle=bool(obj.get("per_baseline_speckle", False)),
    )


def simulate(scene_obj, noise_obj=None, outliers_obj=None, snr_db=None, seed=0) -> dict:
    """Scene + noise model -> one visibility realization."""
    scene = Scene.from_json_obj(scene_obj)
    spec = noise_spec_from_obj(noise_obj)
    outliers = outlier_spec_from_obj(outliers_obj)
    rng = np.random.default_rng(seed)
    clean = synth_all(scene.jones_truth, scene.sources)
    data = clean.data.copy()
    if outliers is not None and outliers.d_prime > 0:
        data = inject_outliers(clean, outliers, scene.array, rng).data
    if snr_db is not None:
        spec = calibrate_snr(clean, spec, float(snr_db))
    if spec.sigma2 > 0:
        data = data + sample_noise(spec, clean.n_baselines, rng)
    batch = VisibilityBatch(data=data, n_antennas=scene.m)
    return {
        "visibilities": batch.to_json_obj(),
        "sigma2": spec.sigma2,
        "seed": seed,
    }


def run_calibrate(
    scene_obj,
    vis_obj,
    method="robust",
    solver_obj=None,
    init="truth",
    init_perturbation=0.0,
    seed=0,
    student_t_nu=5.0,
    student_t_estimate_nu=False,
) -> dict:
    """Visibilities + method -> calibration state object."""
    scene = Scene.from_json_obj(scene_obj)
    x = VisibilityBatch.from_json_obj(vis_obj)
    if x.n_antennas != scene.m:
        raise ConfigError("visibilities.n_antennas", "does not match the scene antenna count")
    solver = solver_config_from_obj(solver_obj)
    if init == "truth":
        rng = np.random.default_rng(seed)
        solver.theta_init = (
            perturb_jones(scene.jones_truth, init_perturbation, rng)
            if init_perturbation > 0
            else scene.jones_truth.copy()
        )
    elif init != "identity":
        raise ConfigError("init", "must be 'truth' or 'identity'")
    if method == "robust":
        state = calibrate(x, scene.sources, solver)
    elif method == "gaussian_ls":
        state = gaussian_ls_calibrate(x, scene.sources, solver)
    elif method == "student_t":
        state = student_t_calibrate(
            x,
            scene.sources,
            BaselineConfig(
                kind="student_t",
                nu_init=student_t_nu,
                estimate_nu=student_t_estimate_nu,
                solver=solver,
            ),
        )
    else:
        raise ConfigError("method", "must be robust, gaussian_ls, or student_t")
    return state.to_json_obj()


def run_calibrate_structured(scene_obj, jones_obj, init_obj=None, cycles=50, tol=1e-8) -> dict:
    """Jones estimate -> physical parameters in the canonical ordering."""
    scene = Scene.from_json_obj(scene_obj)
    jhat = pairs_to_complex(jones_obj)
    if jhat.shape != (scene.d, scene.m, 2, 2):
        raise ConfigError("jones", f"expected shape ({scene.d}, {scene.m}, 2, 2)")
    init = None if init_obj is None else StructuredParams.from_json_obj(init_obj)
    params = calibrate_structured(
        jhat, scene.sources, scene.array,
        StructuredCalibConfig(init=init, cycles=int(cycles), tol=float(tol)),
    )
    return params.to_json_obj()


def run_crb(scene_obj, nu, snr_db=None, sigma2=None, omega="default") -> dict:
    """Scene + noise level -> per-parameter CRB values."""
    scene = Scene.from_json_obj(scene_obj)
    spec = noise_spec_from_obj({"texture_law": "inverse_gamma", "nu": nu, "omega": omega})
    if snr_db is not None:
        clean = synth_all(scene.jones_truth, scene.sources)
        spec = calibrate_snr(clean, spec, float(snr_db))
        sigma2 = spec.sigma2
    elif sigma2 is None:
        raise ConfigError("crb", "either snr_db or sigma2 is required")
    f = fisher(scene.jones_truth, scene.sources, float(sigma2) * spec.omega, float(nu))
    bounds = crb_diag(f)
    return {
        "crb": bounds.values.tolist(),
        "ambiguity_dim": bounds.ambiguity_dim,
        "sigma2": float(sigma2),
        "nu": float(nu),
    }
