"""
Experiment routes: fixed-point sweeps, limiting flow and short sampler runs

Handlers are plain def: the numerics are CPU-bound and run in FastAPI's threadpool.
"""
from fastapi import APIRouter, HTTPException

from ..exceptions import NumericalError
from ..models import ExperimentConfig, FixedPointSweepResult, FlowResult, SimulationSummary
from ..services.experiment_service import experiment_service

router = APIRouter()

MAX_HTTP_STEPS = 200_000


@router.post("/fixed-point", response_model=FixedPointSweepResult)
def run_fixed_point(config: ExperimentConfig):
    """Picard fixed point for every epsilon in fixed_point.epsilons"""
    try:
        return experiment_service.run_fixed_point_sweep(config)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalError as e:
        raise HTTPException(status_code=500, detail=f"Fixed-point sweep failed: {str(e)}")


@router.post("/flow", response_model=FlowResult)
def run_flow(config: ExperimentConfig):
    """Limiting flow from the configured start, with the fitted exponential rate"""
    try:
        result, _ = experiment_service.run_flow(config)
        return result
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalError as e:
        raise HTTPException(status_code=500, detail=f"Flow integration failed: {str(e)}")


@router.post("/simulate", response_model=SimulationSummary)
def run_simulation(config: ExperimentConfig):
    """Short adaptive runs; long runs belong to the command line"""
    if config.simulation.n_steps > MAX_HTTP_STEPS:
        raise HTTPException(
            status_code=422,
            detail=f"n_steps={config.simulation.n_steps} exceeds {MAX_HTTP_STEPS}; use the command line",
        )
    try:
        summary, _ = experiment_service.run_simulation(config)
        return summary
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalError as e:
        raise HTTPException(status_code=500, detail=f"Simulation failed: {str(e)}")
