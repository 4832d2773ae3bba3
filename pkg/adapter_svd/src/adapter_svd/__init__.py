"""Wire adapter serving an image-to-video latent denoiser to remote solvers."""

from .model import (
    MOCK_MODEL_ID,
    MockVideoModel,
    ModelLoadError,
    ModelSession,
    Preconditioning,
    VideoDenoiseModel,
    load_model,
)
from .server import AdapterServer, serve, serve_connection, serve_stdio

__all__ = [
    "MOCK_MODEL_ID",
    "MockVideoModel",
    "ModelLoadError",
    "ModelSession",
    "Preconditioning",
    "VideoDenoiseModel",
    "load_model",
    "AdapterServer",
    "serve",
    "serve_connection",
    "serve_stdio",
]
