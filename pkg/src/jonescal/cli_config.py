"""Experiment configuration files: JSON schema parsing and validation.

Schema (all blocks optional unless noted):

  scene / scene_path   inline scene object, or path to a scene file  [required]
  methods              subset of ["robust", "gaussian_ls", "student_t"]
  snr_db               list of SNR points in dB
  runs, seed, threads  integers
  noise                {texture_law, nu, omega: "default"|"white"|pairs, per_baseline}
  outliers             {d_prime, flux_scale, jones_jitter}
  solver               {outer_iters, em_iters, bcd_sweeps, tol, per_baseline_speckle}
  init_perturbation    relative size of the initial Jones guess perturbation
  align                gauge-align estimates to truth before the MSE
  structured           also extract and score physical parameters
  student_t            {nu, estimate_nu}
  matched_time         give baselines the robust method's wall-clock budget
  compute_crb          attach CRB values to the result rows
"""

import os

from .errors import ConfigError
from .harness import ExperimentConfig
from .model import Scene
from .ops import noise_spec_from_obj, outlier_spec_from_obj, solver_config_from_obj
from .serialize import load_json


def _require(obj, field, kind, default=None):
    value = obj.get(field, default)
    if value is None:
        return None
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(field, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def load_scene_file(path) -> Scene:
    if not os.path.exists(path):
        raise ConfigError("scene_path", f"missing scene file: {path}")
    return Scene.from_json_obj(load_json(path))


def experiment_config_from_obj(obj, base_dir=".") -> ExperimentConfig:
    if "scene" in obj:
        scene = Scene.from_json_obj(obj["scene"])
    elif "scene_path" in obj:
        path = obj["scene_path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        scene = load_scene_file(path)
    else:
        raise ConfigError("scene", "config needs 'scene' or 'scene_path'")

    student = obj.get("student_t", {}) or {}
    kwargs = dict(
        scene=scene,
        methods=list(obj.get("methods", ["robust"])),
        snr_db=[float(s) for s in obj.get("snr_db", [5.0, 10.0, 15.0, 20.0])],
        runs=int(obj.get("runs", 100)),
        seed=int(obj.get("seed", 0)),
        noise=noise_spec_from_obj(obj.get("noise", {"texture_law": "inverse_gamma",
                                                    "nu": 3.0, "omega": "default"})),
        solver=solver_config_from_obj(obj.get("solver")),
        init_perturbation=float(obj.get("init_perturbation", 0.1)),
        align=bool(obj.get("align", False)),
        structured=bool(obj.get("structured", False)),
        structured_init_perturbation=float(obj.get("structured_init_perturbation", 0.1)),
        student_t_nu=float(student.get("nu", 5.0)),
        student_t_estimate_nu=bool(student.get("estimate_nu", False)),
        matched_time=bool(obj.get("matched_time", False)),
        threads=int(obj.get("threads", 1)),
        compute_crb=bool(obj.get("compute_crb", True)),
    )
    outliers = outlier_spec_from_obj(obj.get("outliers"))
    if outliers is not None:
        kwargs["outliers"] = outliers
    return ExperimentConfig(**kwargs)


def experiment_config_from_file(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError("config", f"missing config file: {path}")
    return experiment_config_from_obj(load_json(path), base_dir=os.path.dirname(path) or ".")
