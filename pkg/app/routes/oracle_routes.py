"""
Free-energy oracle routes

Handlers are plain def: the quadrature is CPU-bound and runs in FastAPI's threadpool.
"""
from typing import Literal, Optional

from fastapi import APIRouter, HTTPException, Query
from pydantic import ValidationError

from ..exceptions import NumericalError
from ..models import OracleResult, PotentialFamily, PotentialSpec
from ..services.experiment_service import experiment_service

router = APIRouter()


@router.get("/", response_model=OracleResult)
def get_oracle(
    family: PotentialFamily = Query(PotentialFamily.COUPLED_WELL, description="Builtin potential family"),
    a: float = Query(2.0, description="First amplitude"),
    b: float = Query(1.0, description="Second amplitude"),
    c: float = Query(0.5, description="Third amplitude"),
    extension: Optional[Literal["y", "z"]] = Query(None, description="Extend to d=3 along y or z"),
    e: float = Query(0.0, description="Amplitude of the extension factor"),
    nodes: int = Query(64, ge=4, le=512, description="Grid nodes per reaction coordinate"),
    y_nodes: int = Query(256, ge=32, le=2048, description="Quadrature nodes per orthogonal coordinate"),
):
    """A_star, its zero-mean version, the mean force and the z-marginal on the grid"""
    try:
        spec = PotentialSpec(family=family, a=a, b=b, c=c, extension=extension, e=e)
        return experiment_service.compute_oracle(spec, nodes, y_nodes)
    except (ValidationError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalError as e:
        raise HTTPException(status_code=500, detail=f"Failed to compute oracle: {str(e)}")
