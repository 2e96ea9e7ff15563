from .experiment_routes import router as experiment_router
from .oracle_routes import router as oracle_router

__all__ = ["experiment_router", "oracle_router"]
