"""Model sessions: preconditioning constants plus the denoiser they wrap.

A session fixes the served model's identity, device, nominal latent shape
(N, C, H, W), and the EDM preconditioning constants that map a raw noise
level sigma onto network inputs:

    c_skip = sd^2 / (sigma^2 + sd^2)
    c_out  = sigma * sd / sqrt(sigma^2 + sd^2)
    c_in   = 1 / sqrt(sigma^2 + sd^2)
    c_noise = log(sigma) / 4

with sd the model's data standard deviation. The denoiser output is
c_skip * x + c_out * F(c_in * x, c_noise, conditioning), so sigma = 0 is the
identity regardless of the network.

The bundled "mock-svd" model stands in for a checkpoint: a fixed seeded
per-channel affine layer followed by tanh, with an analytic vector-Jacobian
product. It serves 25-frame, 4-channel latents like the real video model it
mocks, runs anywhere, and is deterministic down to the bit. Other model ids
are resolved through a pluggable backend factory named in the config; when
the backend (or its weights) is unavailable the load fails with
ModelLoadError and the server refuses the handshake with that detail.
"""

from __future__ import annotations

import importlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

__all__ = [
    "MOCK_MODEL_ID",
    "ModelLoadError",
    "ModelSession",
    "Preconditioning",
    "VideoDenoiseModel",
    "MockVideoModel",
    "load_model",
]

MOCK_MODEL_ID = "mock-svd"

_MOCK_FRAME_COUNT = 25
_MOCK_CHANNELS = 4
_MOCK_HEIGHT = 8
_MOCK_WIDTH = 8
_MOCK_SIGMA_DATA = 0.5
_MOCK_PARAM_SEED = 20240824


class ModelLoadError(Exception):
    """The configured model cannot be brought up on this host."""


@dataclass(frozen=True)
class Preconditioning:
    """EDM input/output scalings at one noise level."""

    c_skip: float
    c_out: float
    c_in: float
    c_noise: float

    @staticmethod
    def at(sigma: float, sigma_data: float) -> "Preconditioning":
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if sigma_data <= 0:
            raise ValueError(f"sigma_data must be > 0, got {sigma_data}")
        total = sigma * sigma + sigma_data * sigma_data
        return Preconditioning(
            c_skip=sigma_data * sigma_data / total,
            c_out=sigma * sigma_data / math.sqrt(total),
            c_in=1.0 / math.sqrt(total),
            c_noise=math.log(sigma) / 4.0 if sigma > 0 else 0.0,
        )


@dataclass(frozen=True)
class ModelSession:
    """Identity and shape contract of the served model.

    latent_shape is the model card's nominal (N, C, H, W); the server
    enforces the N and C axes on every request and lets spatial dims float,
    since they only rescale compute.
    """

    model_id: str
    device: str
    latent_shape: tuple[int, int, int, int]
    sigma_data: float
    precision: str

    def __post_init__(self) -> None:
        if len(self.latent_shape) != 4 or any(int(v) < 1 for v in self.latent_shape):
            raise ValueError(f"latent_shape must be positive (N, C, H, W), got {self.latent_shape}")
        if self.sigma_data <= 0:
            raise ValueError(f"sigma_data must be > 0, got {self.sigma_data}")
        if self.precision not in ("fp32", "fp16"):
            raise ValueError(f"precision must be fp32 or fp16, got {self.precision!r}")
        object.__setattr__(self, "latent_shape", tuple(int(v) for v in self.latent_shape))

    @property
    def frame_count(self) -> int:
        return self.latent_shape[0]

    @property
    def channels(self) -> int:
        return self.latent_shape[1]

    def preconditioning(self, sigma: float) -> Preconditioning:
        return Preconditioning.at(sigma, self.sigma_data)


class VideoDenoiseModel(Protocol):
    """What the serving loop needs from any backend."""

    session: ModelSession
    latent_space_id: str
    supports_vjp: bool

    def denoise(
        self, latent: np.ndarray, sigma: float, conditioning: Optional[np.ndarray]
    ) -> np.ndarray: ...

    def vjp(
        self,
        latent: np.ndarray,
        sigma: float,
        cotangent: np.ndarray,
        conditioning: Optional[np.ndarray],
    ) -> np.ndarray: ...


class MockVideoModel:
    """Deterministic stand-in with the real model's serving shape.

    The network is per-channel affine plus tanh on the preconditioned input:

        F(u) = tanh(gain * u + bias + shift * c_noise + cond_bias)

    where gain/bias/shift are fixed arrays seeded from the model id and the
    channel axis is the last tensor axis. The Jacobian of the full denoiser
    is diagonal, so the VJP is exact and cheap:

        vjp(c) = (c_skip + c_out * c_in * gain * (1 - F^2)) * c

    The mock computes in float64 whatever precision the session records;
    reduced precision only matters for real checkpoints.
    """

    latent_space_id = "svd-vae"

    def __init__(self, session: ModelSession, enable_vjp: bool = True) -> None:
        self.session = session
        self.supports_vjp = bool(enable_vjp)
        rng = np.random.default_rng(
            np.frombuffer(f"{_MOCK_PARAM_SEED}/{session.model_id}".encode(), dtype=np.uint8)
        )
        channels = session.channels
        self._gain = rng.uniform(0.5, 1.5, channels)
        self._bias = rng.normal(0.0, 0.1, channels)
        self._shift = rng.normal(0.0, 0.05, channels)
        self._cond_gain = rng.normal(0.0, 0.1, channels)

    def _check(self, latent: np.ndarray, sigma: float) -> None:
        if latent.ndim != 4:
            raise ValueError(f"latent must be rank 4 (N, H, W, C), got rank {latent.ndim}")
        if latent.shape[3] != self.session.channels:
            raise ValueError(
                f"model serves {self.session.channels} channels, latent has {latent.shape[3]}"
            )
        if not math.isfinite(sigma) or sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {sigma}")

    def _pre_activation(
        self, latent: np.ndarray, pre: Preconditioning, conditioning: Optional[np.ndarray]
    ) -> np.ndarray:
        u = self._gain * (pre.c_in * latent) + self._bias + self._shift * pre.c_noise
        if conditioning is not None:
            u = u + self._cond_gain * math.tanh(float(np.mean(conditioning)))
        return u

    def denoise(
        self, latent: np.ndarray, sigma: float, conditioning: Optional[np.ndarray]
    ) -> np.ndarray:
        self._check(latent, sigma)
        latent = np.asarray(latent, dtype=np.float64)
        pre = self.session.preconditioning(sigma)
        activated = np.tanh(self._pre_activation(latent, pre, conditioning))
        return pre.c_skip * latent + pre.c_out * activated

    def vjp(
        self,
        latent: np.ndarray,
        sigma: float,
        cotangent: np.ndarray,
        conditioning: Optional[np.ndarray],
    ) -> np.ndarray:
        if not self.supports_vjp:
            raise ValueError("VJP is disabled for this session")
        self._check(latent, sigma)
        if cotangent.shape != latent.shape:
            raise ValueError(
                f"cotangent shape {cotangent.shape} does not match latent {latent.shape}"
            )
        latent = np.asarray(latent, dtype=np.float64)
        cotangent = np.asarray(cotangent, dtype=np.float64)
        pre = self.session.preconditioning(sigma)
        activated = np.tanh(self._pre_activation(latent, pre, conditioning))
        diag = pre.c_skip + pre.c_out * pre.c_in * self._gain * (1.0 - activated * activated)
        return diag * cotangent


def _mock_session(precision: str) -> ModelSession:
    return ModelSession(
        model_id=MOCK_MODEL_ID,
        device="cpu",
        latent_shape=(_MOCK_FRAME_COUNT, _MOCK_CHANNELS, _MOCK_HEIGHT, _MOCK_WIDTH),
        sigma_data=_MOCK_SIGMA_DATA,
        precision=precision,
    )


def _load_backend(config: dict) -> VideoDenoiseModel:
    spec = config.get("backend")
    if not isinstance(spec, str) or ":" not in spec:
        raise ModelLoadError(
            f"model {config['model']!r} needs a 'backend' of the form module:factory"
        )
    weights = config.get("weights")
    if weights is not None and not Path(weights).is_file():
        raise ModelLoadError(f"weights file not found: {weights}")
    module_name, _, factory_name = spec.partition(":")
    try:
        module = importlib.import_module(module_name)
        factory = getattr(module, factory_name)
    except (ImportError, AttributeError) as err:
        raise ModelLoadError(f"backend {spec!r} is not importable: {err}") from err
    try:
        return factory(config)
    except Exception as err:
        raise ModelLoadError(f"backend {spec!r} failed to build the model: {err}") from err


def load_model(config: dict) -> VideoDenoiseModel:
    """Bring up the configured model; raises ModelLoadError when it cannot run here."""
    model_id = config.get("model", MOCK_MODEL_ID)
    precision = config.get("precision", "fp32")
    if precision not in ("fp32", "fp16"):
        raise ModelLoadError(f"precision must be fp32 or fp16, got {precision!r}")
    enable_vjp = bool(config.get("enable_vjp", True))
    if model_id == MOCK_MODEL_ID:
        return MockVideoModel(_mock_session(precision), enable_vjp=enable_vjp)
    return _load_backend({**config, "model": model_id})
