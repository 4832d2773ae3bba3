"""Variance-exploding noise schedule and the discrete reverse-ODE step.

The reverse process integrates dx = ((x - mu)/sigma) dsigma from sigma_max
down to 0 with plain Euler steps over a rho-spaced noise ladder:

    sigmas[i] = (smax^(1/rho) + (i/(steps-1)) * (smin^(1/rho) - smax^(1/rho)))^rho

for i < steps, with a final entry sigmas[steps] = 0 so the last step lands
exactly on the denoised mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["NoiseSchedule", "build_schedule", "ve_step", "add_noise"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing noise levels, ending at exactly zero.

    Attributes:
        sigmas: length (steps + 1) array; sigmas[0] = sigma_max,
            sigmas[steps] = 0, strictly decreasing.
        sigma_max, sigma_min, rho, steps: generating parameters.
    """

    sigmas: np.ndarray
    sigma_max: float
    sigma_min: float
    rho: float
    steps: int

    def __post_init__(self) -> None:
        sigmas = np.array(self.sigmas, dtype=np.float64, copy=True)
        if sigmas.ndim != 1 or sigmas.size != self.steps + 1:
            raise ValueError(f"expected {self.steps + 1} sigma values, got {sigmas.shape}")
        if not np.isfinite(sigmas).all():
            raise ValueError("sigmas must be finite")
        if sigmas[0] != self.sigma_max or sigmas[-1] != 0.0:
            raise ValueError("sigmas must start at sigma_max and end at 0")
        if np.any(np.diff(sigmas) >= 0):
            raise ValueError("sigmas must be strictly decreasing")
        sigmas.flags.writeable = False
        object.__setattr__(self, "sigmas", sigmas)

    def to_json(self) -> str:
        payload = {
            "sigma_max": self.sigma_max,
            "sigma_min": self.sigma_min,
            "rho": self.rho,
            "steps": self.steps,
            "sigmas": [float(s) for s in self.sigmas],
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "NoiseSchedule":
        payload = json.loads(text)
        return NoiseSchedule(
            sigmas=np.array(payload["sigmas"], dtype=np.float64),
            sigma_max=float(payload["sigma_max"]),
            sigma_min=float(payload["sigma_min"]),
            rho=float(payload["rho"]),
            steps=int(payload["steps"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "NoiseSchedule":
        return NoiseSchedule.from_json(Path(path).read_text(encoding="utf-8"))


def build_schedule(
    sigma_max: float = 700.0,
    sigma_min: float = 0.002,
    rho: float = 7.0,
    steps: int = 100,
) -> NoiseSchedule:
    """Rho-spaced noise ladder from sigma_max down to 0.

    Args:
        sigma_max: First (largest) noise level, > sigma_min.
        sigma_min: Last nonzero noise level, > 0.
        rho: Spacing exponent, >= 1.
        steps: Number of reverse steps, >= 1; the returned ladder has
            steps + 1 entries including the terminal 0.
    """
    if not sigma_max > sigma_min > 0:
        raise ValueError(f"need sigma_max > sigma_min > 0, got {sigma_max}, {sigma_min}")
    if rho < 1:
        raise ValueError(f"rho must be >= 1, got {rho}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps == 1:
        sigmas = np.array([sigma_max, 0.0])
    else:
        ramp = np.arange(steps, dtype=np.float64) / (steps - 1)
        inv_rho = 1.0 / rho
        ladder = (sigma_max**inv_rho + ramp * (sigma_min**inv_rho - sigma_max**inv_rho)) ** rho
        # The ramp endpoints are sigma_max and sigma_min by construction;
        # pin them so power-function rounding cannot shift the boundaries.
        ladder[0] = sigma_max
        ladder[-1] = sigma_min
        sigmas = np.concatenate([ladder, [0.0]])
    return NoiseSchedule(
        sigmas=sigmas, sigma_max=sigma_max, sigma_min=sigma_min, rho=rho, steps=steps
    )


def ve_step(x: np.ndarray, mu: np.ndarray, sigma_from: float, sigma_to: float) -> np.ndarray:
    """One Euler step of the reverse ODE: x + ((x - mu)/sigma_from)(sigma_to - sigma_from).

    At sigma_to = 0 the step returns mu exactly (algebraic identity).

    Args:
        x: Current state, any shape.
        mu: Denoised mean, same shape as x.
        sigma_from: Current noise level, > sigma_to.
        sigma_to: Next noise level, >= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape != mu.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs mu {mu.shape}")
    if not sigma_from > sigma_to >= 0:
        raise ValueError(f"need sigma_from > sigma_to >= 0, got {sigma_from} -> {sigma_to}")
    if not (np.isfinite(x).all() and np.isfinite(mu).all()):
        raise ValueError("non-finite input to ve_step")
    if sigma_to == 0.0:
        return mu.copy()
    return x + (x - mu) / sigma_from * (sigma_to - sigma_from)


def add_noise(x0: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """x0 + sigma * eps with eps drawn i.i.d. standard normal from a seeded generator."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x0 = np.asarray(x0, dtype=np.float64)
    if sigma == 0.0:
        return x0.copy()
    rng = np.random.default_rng(seed)
    return x0 + sigma * rng.standard_normal(x0.shape)
