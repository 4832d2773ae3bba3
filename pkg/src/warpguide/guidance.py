"""Adaptive guidance weights, score modulation, and the two guided-sampling updates.

The sampler blends the denoiser's estimate mu with a depth-warped prior under a
per-frame weight lambda. The weight trades off two modeled error magnitudes:

    denoiser error   ~ v2 * sigma        (shrinks as sampling proceeds)
    warp error       ~ v3 * pose_dist    (fixed per frame)

Minimizing the resulting bound f(lambda) = v2*sigma/(1+lambda)
+ lambda*v3*pose_dist/(1+lambda) + v1*|log lambda| gives a closed-form root in
terms of Q = v3*pose_dist - v2*sigma:

    lambda_hat = (-(2*v1 + Q) + sqrt(Q^2 + 4*v1*Q)) / (2*v1)

The root is positive only for Q <= -4*v1 (denoiser error dominating); outside
that regime the formula goes negative or complex and the weight is clamped to
lambda_min. A numeric minimizer of f is provided as an independent reference.

Two ways to apply the blended mean mu_tilde:

    DGS: substitute mu_tilde for mu in the reverse-ODE Euler step.
    Posterior: nudge the noisy latent along the denoiser VJP direction that
    shrinks ||mu - mu_tilde||_2, step size kappa_scale*sqrt(sigma), then take
    a standard reverse step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .denoiser import CapabilityError, Denoiser, LatentVideo
from .geometry.grids import ImageGrid, WarpResult
from .schedule import ve_step

__all__ = [
    "DEFAULT_KAPPA_SCALE",
    "GuidanceMode",
    "ModulationMode",
    "WeightFn",
    "GuidanceConfig",
    "LambdaTrace",
    "error_model_D",
    "error_model_P",
    "lambda_objective",
    "lambda_formula_raw",
    "lambda_closed_form",
    "lambda_closed_form_array",
    "lambda_numeric_oracle",
    "lambda_for_step",
    "error_bound_gap",
    "modulate_mean",
    "modulate_mean_array",
    "dgs_step",
    "posterior_update",
    "kappa_value",
]

# Step-size scale for the posterior update, kappa = kappa_scale * sqrt(sigma).
# The default is 2*exp(-2), whose schedule-wide step ratio kappa/sqrt(sigma^2+1)
# peaks at sqrt(2)*exp(-2) at sigma = 1.
DEFAULT_KAPPA_SCALE: float = 2.0 * math.exp(-2.0)

_ORACLE_GRID_POINTS = 2000
_ORACLE_LOG10_LO = -8.0
_ORACLE_LOG10_HI = 12.0


class GuidanceMode(str, Enum):
    DGS = "dgs"
    POSTERIOR = "posterior"


class ModulationMode(str, Enum):
    WEIGHTED_AVERAGE = "weighted_average"
    PIXEL_SELECTION = "pixel_selection"


class WeightFn(str, Enum):
    ADAPTIVE = "adaptive"
    CONSTANT = "constant"
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    ORACLE_NUMERIC = "oracle_numeric"


@dataclass(frozen=True)
class GuidanceConfig:
    """All knobs for guided sampling.

    Attributes:
        v1: Weight of the |log lambda| regularizer, > 0.
        v2: Denoiser-error scale (error ~ v2*sigma), > 0.
        v3: Warp-error scale (error ~ v3*pose_dist), > 0.
        mode: DGS substitutes the blended mean into the reverse step;
            POSTERIOR takes a VJP-guided update then a standard step.
        kappa_scale: Posterior step scale, kappa = kappa_scale*sqrt(sigma).
        lambda_min, lambda_max: Clamp range for the weight, 0 < min <= max.
        modulation: How the blended mean is formed per pixel.
        weight_fn: Weight schedule; ADAPTIVE is the closed form above,
            ORACLE_NUMERIC the numeric minimizer, the rest are fixed
            baselines (CONSTANT uses weight_constant; LINEAR uses the number
            of remaining steps t; EXPONENTIAL uses exp(t+1)).
        weight_constant: Lambda used by the CONSTANT schedule.
    """

    v1: float = 1e-6
    v2: float = 0.9
    v3: float = 0.05
    mode: GuidanceMode = GuidanceMode.DGS
    kappa_scale: float = DEFAULT_KAPPA_SCALE
    lambda_min: float = 1e-4
    lambda_max: float = 1e12
    modulation: ModulationMode = ModulationMode.WEIGHTED_AVERAGE
    weight_fn: WeightFn = WeightFn.ADAPTIVE
    weight_constant: float = 0.5

    def __post_init__(self) -> None:
        for name in ("v1", "v2", "v3"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite real, got {value}")
        if not (0 < self.lambda_min <= self.lambda_max):
            raise ValueError(
                f"need 0 < lambda_min <= lambda_max, got {self.lambda_min}, {self.lambda_max}"
            )
        if not (np.isfinite(self.kappa_scale) and self.kappa_scale > 0):
            raise ValueError(f"kappa_scale must be positive, got {self.kappa_scale}")
        if not (np.isfinite(self.weight_constant) and self.weight_constant > 0):
            raise ValueError(f"weight_constant must be positive, got {self.weight_constant}")
        object.__setattr__(self, "mode", GuidanceMode(self.mode))
        object.__setattr__(self, "modulation", ModulationMode(self.modulation))
        object.__setattr__(self, "weight_fn", WeightFn(self.weight_fn))

    @property
    def v(self) -> tuple[float, float, float]:
        return (self.v1, self.v2, self.v3)

    @property
    def clamp(self) -> tuple[float, float]:
        return (self.lambda_min, self.lambda_max)

    def to_dict(self) -> dict:
        return {
            "v1": self.v1,
            "v2": self.v2,
            "v3": self.v3,
            "mode": self.mode.value,
            "kappa_scale": self.kappa_scale,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "modulation": self.modulation.value,
            "weight_fn": self.weight_fn.value,
            "weight_constant": self.weight_constant,
        }

    @staticmethod
    def from_dict(payload: dict) -> "GuidanceConfig":
        known = {
            "v1",
            "v2",
            "v3",
            "mode",
            "kappa_scale",
            "lambda_min",
            "lambda_max",
            "modulation",
            "weight_fn",
            "weight_constant",
        }
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown guidance keys: {sorted(unknown)}")
        return GuidanceConfig(**payload)

    def with_mode(self, mode: GuidanceMode) -> "GuidanceConfig":
        return replace(self, mode=mode)


def error_model_D(v2: float, sigma: float) -> float:
    """Modeled denoiser-error magnitude v2*sigma."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if v2 <= 0:
        raise ValueError(f"v2 must be > 0, got {v2}")
    return v2 * sigma


def error_model_P(v3: float, pose_dist: float) -> float:
    """Modeled warp-error magnitude v3*pose_dist."""
    if pose_dist < 0:
        raise ValueError(f"pose_dist must be >= 0, got {pose_dist}")
    if v3 <= 0:
        raise ValueError(f"v3 must be > 0, got {v3}")
    return v3 * pose_dist


def lambda_objective(
    lam: float, v: tuple[float, float, float], sigma: float, pose_dist: float
) -> float:
    """Error-bound objective f(lambda) = v2*s/(1+l) + l*v3*p/(1+l) + v1*|log l|.

    Args:
        lam: Candidate weight, must be > 0.
        v: (v1, v2, v3), all > 0.
        sigma: Noise level, >= 0.
        pose_dist: Pose distance, >= 0.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    v1, v2, v3 = v
    return float(v2 * sigma / (1.0 + lam) + lam * v3 * pose_dist / (1.0 + lam) + v1 * abs(math.log(lam)))


def _objective_values(
    lams: np.ndarray, v: tuple[float, float, float], sigma: float, pose_dist: float
) -> np.ndarray:
    v1, v2, v3 = v
    return v2 * sigma / (1.0 + lams) + lams * v3 * pose_dist / (1.0 + lams) + v1 * np.abs(
        np.log(lams)
    )


def _raw_root(v1: float, q: np.ndarray) -> np.ndarray:
    """Pre-clamp root of the objective as a function of Q = v3*p - v2*s.

    Evaluates (-(2*v1+Q) + sqrt(Q^2+4*v1*Q)) / (2*v1) in cancellation-free
    form on each branch: for Q < 0 every surviving term is nonnegative, and
    for Q >= 0 the expression is rationalized to -2*v1/(sqrt(disc)+Q+2*v1).
    NaN where the discriminant is negative (no real root).
    """
    q = np.asarray(q, dtype=np.float64)
    disc = q * (q + 4.0 * v1)
    out = np.full(q.shape, np.nan)
    neg = (q < 0) & (disc >= 0)
    if np.any(neg):
        out[neg] = (-q[neg] - 2.0 * v1 + np.sqrt(disc[neg])) / (2.0 * v1)
    pos = q >= 0
    if np.any(pos):
        out[pos] = -2.0 * v1 / (np.sqrt(disc[pos]) + q[pos] + 2.0 * v1)
    return out


def lambda_formula_raw(v: tuple[float, float, float], sigma: float, pose_dist: float) -> float:
    """Unclamped closed-form weight; NaN when the root is complex.

    With Q = v3*pose_dist - v2*sigma, returns
    (-(2*v1+Q) + sqrt(Q*(Q+4*v1))) / (2*v1). The value is positive only for
    Q <= -4*v1; at Q = 0 it is exactly -1.
    """
    v1, v2, v3 = v
    if v1 <= 0:
        raise ValueError(f"v1 must be > 0, got {v1}")
    q = v3 * pose_dist - v2 * sigma
    return float(_raw_root(v1, np.asarray(q)))


def lambda_closed_form(
    v: tuple[float, float, float],
    sigma: float,
    pose_dist: float,
    clamp: tuple[float, float] = (1e-4, 1e12),
) -> float:
    """Closed-form adaptive weight, clamped to [lambda_min, lambda_max].

    Complex or non-positive roots fall back to lambda_min (the unguided
    limit); positive roots are clamped into the range.
    """
    lo, hi = clamp
    if not (0 < lo <= hi):
        raise ValueError(f"need 0 < lambda_min <= lambda_max, got {clamp}")
    raw = lambda_formula_raw(v, sigma, pose_dist)
    if math.isnan(raw) or raw <= 0:
        return lo
    return min(max(raw, lo), hi)


def lambda_closed_form_array(
    v: tuple[float, float, float],
    sigma: float,
    pose_dists: np.ndarray,
    clamp: tuple[float, float] = (1e-4, 1e12),
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized closed-form weight over many pose distances at one sigma.

    Returns:
        (raw, clamped): raw pre-clamp roots (NaN where complex) and the
        clamped weights.
    """
    v1, v2, v3 = v
    if v1 <= 0:
        raise ValueError(f"v1 must be > 0, got {v1}")
    lo, hi = clamp
    if not (0 < lo <= hi):
        raise ValueError(f"need 0 < lambda_min <= lambda_max, got {clamp}")
    pose_dists = np.asarray(pose_dists, dtype=np.float64)
    q = v3 * pose_dists - v2 * sigma
    raw = _raw_root(v1, q)
    clamped = np.where(np.isnan(raw) | (raw <= 0), lo, np.clip(raw, lo, hi))
    return raw, clamped


def lambda_numeric_oracle(
    v: tuple[float, float, float], sigma: float, pose_dist: float
) -> float:
    """Reference minimizer of the objective: log-grid search plus golden-section.

    Searches lambda in [1e-8, 1e12] on a 2000-point log grid, then refines
    around the best grid point with golden-section in log space. The result's
    objective is within 1e-9 of the grid optimum by construction (refinement
    only ever improves on the bracket).
    """
    v1 = v[0]
    if v1 <= 0:
        raise ValueError(f"v1 must be > 0, got {v1}")
    if sigma < 0 or pose_dist < 0:
        raise ValueError("sigma and pose_dist must be >= 0")
    grid = np.logspace(_ORACLE_LOG10_LO, _ORACLE_LOG10_HI, _ORACLE_GRID_POINTS)
    values = _objective_values(grid, v, sigma, pose_dist)
    best = int(np.argmin(values))
    lo = math.log(grid[max(best - 1, 0)])
    hi = math.log(grid[min(best + 1, grid.size - 1)])

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = lambda_objective(math.exp(c), v, sigma, pose_dist)
    fd = lambda_objective(math.exp(d), v, sigma, pose_dist)
    for _ in range(120):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = lambda_objective(math.exp(c), v, sigma, pose_dist)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = lambda_objective(math.exp(d), v, sigma, pose_dist)
    refined = math.exp((a + b) / 2.0)
    if lambda_objective(refined, v, sigma, pose_dist) <= float(values[best]):
        return refined
    return float(grid[best])


def lambda_for_step(
    config: GuidanceConfig, sigma: float, pose_dists: np.ndarray, steps_remaining: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame weights for one reverse step under the configured schedule.

    Args:
        config: Guidance configuration.
        sigma: Current noise level.
        pose_dists: (N,) pose distance of each target frame from its source.
        steps_remaining: Countdown argument t for the LINEAR/EXPONENTIAL
            baselines (T at the first step, 1 at the last).

    Returns:
        (raw, clamped) arrays of shape (N,): the schedule's pre-clamp values
        (NaN where the adaptive root is complex) and the clamped weights.
    """
    pose_dists = np.asarray(pose_dists, dtype=np.float64)
    n = pose_dists.shape[0]
    lo, hi = config.clamp
    if config.weight_fn is WeightFn.ADAPTIVE:
        return lambda_closed_form_array(config.v, sigma, pose_dists, config.clamp)
    if config.weight_fn is WeightFn.ORACLE_NUMERIC:
        raw = np.array(
            [lambda_numeric_oracle(config.v, sigma, float(p)) for p in pose_dists]
        )
    elif config.weight_fn is WeightFn.CONSTANT:
        raw = np.full(n, config.weight_constant)
    elif config.weight_fn is WeightFn.LINEAR:
        raw = np.full(n, float(steps_remaining))
    elif config.weight_fn is WeightFn.EXPONENTIAL:
        raw = np.full(n, math.exp(float(steps_remaining) + 1.0))
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown weight_fn {config.weight_fn}")
    clamped = np.where(raw <= 0, lo, np.clip(raw, lo, hi))
    return raw, clamped


def error_bound_gap(
    v: tuple[float, float, float],
    sigma: float,
    pose_dist: float,
    lam: Optional[float] = None,
) -> tuple[float, float]:
    """Blended-error bound versus the pure warp error, for a given or derived weight.

    Returns:
        (blend_bound, warp_error) where
        blend_bound = v2*sigma/(1+lam) + lam*v3*pose_dist/(1+lam) and
        warp_error = v3*pose_dist. When lam is None it is taken from the
        closed form when that has a positive root, else from the numeric
        oracle.
    """
    v1, v2, v3 = v
    if lam is None:
        raw = lambda_formula_raw(v, sigma, pose_dist)
        lam = raw if (not math.isnan(raw) and raw > 0) else lambda_numeric_oracle(
            v, sigma, pose_dist
        )
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    blend_bound = v2 * sigma / (1.0 + lam) + lam * v3 * pose_dist / (1.0 + lam)
    return float(blend_bound), float(v3 * pose_dist)


def modulate_mean_array(
    mu: np.ndarray,
    warped: np.ndarray,
    valid: np.ndarray,
    lam: float,
    mode: ModulationMode = ModulationMode.WEIGHTED_AVERAGE,
) -> np.ndarray:
    """Blend the denoised mean with the warped prior on valid pixels.

    weighted_average: (mu + lam*warped)/(1+lam) on valid pixels, mu elsewhere.
    pixel_selection: rank valid pixels by channel L2 residual ||mu - warped||,
    take exactly floor(lam/(1+lam) * n_valid) lowest-residual pixels from the
    warped image (ties broken by row-major index), everything else from mu.
    Invalid pixels always come from mu; sentinel fill never leaks through.

    Args:
        mu: (H, W, C) denoised mean.
        warped: (H, W, C) warped prior.
        valid: (H, W) boolean validity of the warp.
        lam: Weight, >= 0.
        mode: Blend rule.
    """
    mu = np.asarray(mu, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if mu.ndim != 3 or mu.shape != warped.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs warped {warped.shape}")
    if valid.shape != mu.shape[:2]:
        raise ValueError(f"validity shape {valid.shape} != {mu.shape[:2]}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mode = ModulationMode(mode)
    out = mu.copy()
    if mode is ModulationMode.WEIGHTED_AVERAGE:
        blend = (mu + lam * warped) / (1.0 + lam)
        out[valid] = blend[valid]
        return out
    valid_flat = np.flatnonzero(valid.reshape(-1))
    n_valid = valid_flat.size
    take = int(math.floor(lam / (1.0 + lam) * n_valid))
    if take > 0:
        h, w, c = mu.shape
        residual = np.linalg.norm(
            mu.reshape(-1, c)[valid_flat] - warped.reshape(-1, c)[valid_flat], axis=1
        )
        # Stable sort keeps row-major order among equal residuals.
        order = np.argsort(residual, kind="stable")
        chosen = valid_flat[order[:take]]
        flat_out = out.reshape(-1, c)
        flat_out[chosen] = warped.reshape(-1, c)[chosen]
    return out


def modulate_mean(
    mu: ImageGrid,
    warped: WarpResult,
    lam: float,
    mode: ModulationMode = ModulationMode.WEIGHTED_AVERAGE,
) -> ImageGrid:
    """ImageGrid wrapper over modulate_mean_array using the warp's own validity."""
    data = modulate_mean_array(mu.data, warped.image.data, warped.validity, lam, mode)
    return ImageGrid(data=data)


def dgs_step(
    x: ImageGrid, mu_tilde: ImageGrid, sigma_from: float, sigma_to: float
) -> ImageGrid:
    """Reverse-ODE Euler step with the blended mean substituted for mu."""
    return ImageGrid(data=ve_step(x.data, mu_tilde.data, sigma_from, sigma_to))


def kappa_value(kappa_scale: float, sigma: float) -> float:
    """Posterior update step size kappa_scale * sqrt(sigma)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return kappa_scale * math.sqrt(sigma)


def posterior_update(
    x: LatentVideo,
    denoiser: Denoiser,
    mu: LatentVideo,
    mu_tilde: LatentVideo,
    sigma: float,
    kappa_scale: float = DEFAULT_KAPPA_SCALE,
) -> LatentVideo:
    """Nudge the noisy latent along the VJP direction shrinking ||mu - mu_tilde||.

    The cotangent is the gradient of ||mu - mu_tilde||_2 with respect to mu,
    i.e. the unit residual (mu - mu_tilde)/||mu - mu_tilde|| over the whole
    latent (zero when the residual norm is below 1e-12). The denoiser VJP
    pulls it back to input space; the result is normalized globally and
    applied with step size kappa = kappa_scale*sqrt(sigma), so a nonzero
    update always has L2 norm exactly kappa.

    Raises:
        CapabilityError: The denoiser does not advertise VJP support.
    """
    if not denoiser.capabilities.supports_vjp:
        raise CapabilityError("posterior update requires a denoiser with VJP support")
    if mu.data.shape != x.data.shape or mu_tilde.data.shape != x.data.shape:
        raise ValueError("x, mu, mu_tilde must share one shape")
    residual = mu.data - mu_tilde.data
    norm = float(np.linalg.norm(residual))
    if norm < 1e-12:
        return x
    cotangent = LatentVideo(data=residual / norm)
    grad = denoiser.vjp(x, sigma, cotangent).data
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm == 0.0:
        return x
    kappa = kappa_value(kappa_scale, sigma)
    return LatentVideo(data=x.data - kappa * (grad / grad_norm))


@dataclass
class LambdaTrace:
    """Per-(step, frame) record of the guidance weight.

    Arrays are (steps, frames): q, raw (pre-clamp, NaN where the adaptive
    root is complex), and clamped. sigmas is per step, pose_dists per frame.
    The blend ratio lambda/(1+lambda) is derived on demand.
    """

    sigmas: np.ndarray
    pose_dists: np.ndarray
    q: np.ndarray = field(init=False)
    raw: np.ndarray = field(init=False)
    clamped: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        self.pose_dists = np.asarray(self.pose_dists, dtype=np.float64)
        shape = (self.sigmas.size, self.pose_dists.size)
        self.q = np.full(shape, np.nan)
        self.raw = np.full(shape, np.nan)
        self.clamped = np.full(shape, np.nan)

    @property
    def n_steps(self) -> int:
        return int(self.sigmas.size)

    @property
    def n_frames(self) -> int:
        return int(self.pose_dists.size)

    @property
    def ratio(self) -> np.ndarray:
        return self.clamped / (1.0 + self.clamped)

    def record(self, step: int, q: np.ndarray, raw: np.ndarray, clamped: np.ndarray) -> None:
        self.q[step] = q
        self.raw[step] = raw
        self.clamped[step] = clamped

    def validate(self, lambda_min: float, lambda_max: float) -> None:
        if np.isnan(self.clamped).any():
            raise ValueError("trace has unrecorded (step, frame) entries")
        if np.any(self.clamped < lambda_min) or np.any(self.clamped > lambda_max):
            raise ValueError("clamped weights escape [lambda_min, lambda_max]")
        ratio = self.ratio
        if np.any(ratio <= 0) or np.any(ratio >= 1):
            raise ValueError("blend ratio must lie strictly inside (0, 1)")

    def to_csv(self) -> str:
        lines = ["step,frame,sigma,pose_dist,Q,lambda_raw,lambda_clamped,ratio"]
        ratio = self.ratio
        for step in range(self.n_steps):
            for frame in range(self.n_frames):
                cells = (
                    self.sigmas[step],
                    self.pose_dists[frame],
                    self.q[step, frame],
                    self.raw[step, frame],
                    self.clamped[step, frame],
                    ratio[step, frame],
                )
                joined = ",".join(repr(float(c)) for c in cells)
                lines.append(f"{step},{frame},{joined}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")
