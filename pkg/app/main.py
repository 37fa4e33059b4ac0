import logging

import psutil
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.core.config import settings
from app.core.errors import DepthPipelineError
from app.routers import depth
from app.services.background_tasks import task_manager

logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    debug=settings.debug,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(DepthPipelineError)
async def pipeline_error_handler(request: Request, exc: DepthPipelineError):
    logger.error(f"{request.url.path}: {type(exc).__name__}: {exc}")
    return JSONResponse(status_code=exc.status_code, content={"detail": str(exc), "error": type(exc).__name__})


@app.get("/")
def read_root():
    return {"message": "Surround Depth API", "version": settings.app_version}


@app.get("/health")
def health_check():
    """Service version, host load and the number of jobs currently running."""
    return {
        "status": "healthy",
        "version": settings.app_version,
        "memory": psutil.virtual_memory().percent,
        "cpu": psutil.cpu_percent(),
        "threads": settings.threads,
        "running_jobs": len(task_manager.running_tasks),
    }


app.include_router(depth.router, prefix="/api")
