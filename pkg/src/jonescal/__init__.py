"""jonescal: robust radio-interferometer calibration toolkit.

Simulates dual-polarization visibility batches under compound-Gaussian
(texture x speckle) noise with optional weak-source outliers, estimates
per-source/per-antenna Jones matrices by relaxed concentrated maximum
likelihood (with Gaussian least-squares and Student's-t baselines), extracts
physical gain/ionospheric/rotation parameters, and validates estimator
efficiency against Cramér-Rao bounds.
"""

__version__ = "0.1.0"

from .algebra import herm_solve, kron_conj, unvec2, vec2
from .calib_robust import (
    CalibrationConfig,
    CalibrationState,
    EmWeights,
    NoiseState,
    bcd_update,
    build_bcd_factors,
    calibrate,
    e_step,
    relaxed_nll,
    residual,
    residual_all,
    update_speckle,
    update_speckle_per_baseline,
    update_texture,
)
from .calib_structured import (
    StructuredCalibConfig,
    align_offset_gauge,
    calibrate_structured,
    estimate_faraday,
    estimate_gains,
    estimate_offsets,
    estimate_phase,
)
from .baselines import BaselineConfig, gaussian_ls_calibrate, student_t_calibrate
from .crb import CrbBounds, crb_diag, fisher, model_jacobian
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    align_jones,
    convergence_trace,
    default_scene,
    preset_config,
    run_experiment,
    structured_scene,
    write_result,
)
from .model import (
    AntennaArray,
    Scene,
    SourceModel,
    StructuredParams,
    VisibilityBatch,
    build_structured_jones,
    structured_jones_all,
    synth_all,
    synth_baseline,
)
from .noise import (
    NoiseSpec,
    OutlierSpec,
    calibrate_snr,
    default_speckle,
    inject_outliers,
    sample_noise,
    sample_texture,
)
