"""HTTP service wrapping the calibration toolkit.

Endpoints mirror the CLI subcommands for single-shot use: simulate a
visibility batch, calibrate it, extract structured parameters, evaluate
CRBs, or run a (desk-scale) Monte-Carlo experiment. Nested array payloads
(scenes, visibilities, Jones sets) use the documented JSON schemas with
[re, im] complex leaves and are validated by the core parsers.
"""

from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from . import ops
from .errors import ConfigError, JonescalError
from .harness import run_experiment
from .cli_config import experiment_config_from_obj


class SimulateRequest(BaseModel):
    scene: dict
    noise: Optional[dict] = None
    outliers: Optional[dict] = None
    snr_db: Optional[float] = None
    seed: int = 0


class SimulateResponse(BaseModel):
    visibilities: dict
    sigma2: float
    seed: int


class CalibrateRequest(BaseModel):
    scene: dict
    visibilities: dict
    method: str = "robust"
    solver: Optional[dict] = None
    init: str = "truth"
    init_perturbation: float = 0.0
    seed: int = 0
    student_t_nu: float = 5.0
    student_t_estimate_nu: bool = False


class StructuredRequest(BaseModel):
    scene: dict
    jones: Any
    init: Optional[dict] = None
    cycles: int = 50
    tol: float = 1e-8


class CrbRequest(BaseModel):
    scene: dict
    nu: float = Field(gt=0)
    snr_db: Optional[float] = None
    sigma2: Optional[float] = None
    omega: Any = "default"


class CrbResponse(BaseModel):
    crb: list[float]
    ambiguity_dim: int
    sigma2: float
    nu: float


class ExperimentRequest(BaseModel):
    config: dict


def create_app() -> FastAPI:
    app = FastAPI(title="jonescal", version=__version__)

    def guarded(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except JonescalError as exc:
            raise HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}")

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        return guarded(
            ops.simulate, req.scene, req.noise, req.outliers, req.snr_db, req.seed
        )

    @app.post("/calibrate")
    def calibrate(req: CalibrateRequest):
        return guarded(
            ops.run_calibrate,
            req.scene,
            req.visibilities,
            method=req.method,
            solver_obj=req.solver,
            init=req.init,
            init_perturbation=req.init_perturbation,
            seed=req.seed,
            student_t_nu=req.student_t_nu,
            student_t_estimate_nu=req.student_t_estimate_nu,
        )

    @app.post("/calibrate/structured")
    def calibrate_structured(req: StructuredRequest):
        return guarded(
            ops.run_calibrate_structured, req.scene, req.jones, req.init, req.cycles, req.tol
        )

    @app.post("/crb", response_model=CrbResponse)
    def crb(req: CrbRequest):
        return guarded(ops.run_crb, req.scene, req.nu, req.snr_db, req.sigma2, req.omega)

    @app.post("/experiment")
    def experiment(req: ExperimentRequest):
        def run():
            cfg = experiment_config_from_obj(req.config)
            result = run_experiment(cfg)
            return {
                "rows": result.rows,
                "structured_rows": result.structured_rows,
                "metadata": result.metadata,
                "failures": result.failures,
            }

        return guarded(run)

    return app


app = create_app()
