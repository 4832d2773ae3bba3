"""Denoiser contract, analytic Gaussian-mixture denoiser, and the Tweedie score bridge.

A denoiser maps a noisy latent video and a noise level sigma to an estimate of
the clean video. The Gaussian-mixture denoiser here is an exact oracle: for a
prior p(x0) = sum_k w_k N(mu_k, s_k^2 I) and x = x0 + sigma*eps, the posterior
mean E[x0 | x] has a closed form, and so does the vector-Jacobian product of
the map x -> E[x0 | x]. That gives the sampler and the guidance machinery a
ground-truth model to test against without any network inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .geometry.grids import ImageGrid

__all__ = [
    "LatentVideo",
    "CapabilityError",
    "DenoiserCapabilities",
    "Denoiser",
    "GmmPrior",
    "gmm_denoise",
    "gmm_vjp",
    "gmm_log_marginal",
    "tweedie_score",
    "frame_denoiser_from_gmm",
    "GmmFrameDenoiser",
]


class CapabilityError(RuntimeError):
    """A denoiser was asked for an operation its capabilities do not advertise."""


@dataclass(frozen=True)
class LatentVideo:
    """A stack of same-shaped frames, stored as one (N, H, W, C) float64 array."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4:
            raise ValueError(f"latent video must be (N, H, W, C), got {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("latent video needs at least one frame")
        if not np.isfinite(data).all():
            raise ValueError("latent video contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @staticmethod
    def from_frames(frames: Sequence[ImageGrid]) -> "LatentVideo":
        if len(frames) == 0:
            raise ValueError("need at least one frame")
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"frames must share one shape, got {sorted(shapes)}")
        return LatentVideo(data=np.stack([f.data for f in frames]))

    @property
    def frames(self) -> tuple[ImageGrid, ...]:
        return tuple(ImageGrid(data=self.data[i]) for i in range(self.data.shape[0]))

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]


@dataclass(frozen=True)
class DenoiserCapabilities:
    """What a denoiser can do.

    frame_count is the exact number of frames the denoiser accepts; 0 means
    any frame count (frames treated independently, or a server that batches
    arbitrary N). single_flight denoisers must not receive concurrent calls;
    the sampler is sequential, so this is informational for other callers.
    """

    supports_vjp: bool
    frame_count: int
    channels: int
    latent_space_id: str = "pixel"
    single_flight: bool = False


@runtime_checkable
class Denoiser(Protocol):
    """Contract: denoise(video, sigma) -> video of identical shape; optional VJP."""

    @property
    def capabilities(self) -> DenoiserCapabilities: ...

    def denoise(self, video: LatentVideo, sigma: float) -> LatentVideo: ...

    def vjp(self, video: LatentVideo, sigma: float, cotangent: LatentVideo) -> LatentVideo: ...


@dataclass(frozen=True)
class GmmPrior:
    """Isotropic Gaussian mixture prior over D-dimensional vectors.

    Attributes:
        weights: (K,) nonnegative, summing to 1 within 1e-12.
        means: (K, D) component means.
        variances: (K,) positive isotropic variances (s_k^2).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        means = np.array(self.means, dtype=np.float64, copy=True)
        variances = np.array(self.variances, dtype=np.float64, copy=True)
        if means.ndim != 2:
            raise ValueError(f"means must be (K, D), got {means.shape}")
        k = means.shape[0]
        if weights.shape != (k,) or variances.shape != (k,):
            raise ValueError(
                f"weights {weights.shape} and variances {variances.shape} must be ({k},)"
            )
        if not (
            np.isfinite(weights).all() and np.isfinite(means).all() and np.isfinite(variances).all()
        ):
            raise ValueError("prior parameters must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 within 1e-12, got {weights.sum()!r}")
        if np.any(variances <= 0):
            raise ValueError("variances must be positive")
        for arr in (weights, means, variances):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self) -> int:
        return int(self.means.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "variances": self.variances.tolist(),
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "GmmPrior":
        payload = json.loads(text)
        return GmmPrior(
            weights=np.array(payload["weights"], dtype=np.float64),
            means=np.array(payload["means"], dtype=np.float64),
            variances=np.array(payload["variances"], dtype=np.float64),
        )


def _check_points(prior: GmmPrior, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1 or x.shape[-1] != prior.dim:
        raise ValueError(f"last axis must be {prior.dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")
    return x


def _responsibilities(prior: GmmPrior, x: np.ndarray, sigma: float) -> tuple[np.ndarray, ...]:
    """Posterior component responsibilities of x under the sigma-smoothed mixture.

    Returns (r, diff, marginal_var) with r: (..., K), diff = x - mu_k: (..., K, D),
    marginal_var = s_k^2 + sigma^2: (K,).
    """
    marginal_var = prior.variances + sigma * sigma
    diff = x[..., None, :] - prior.means
    sq_dist = np.einsum("...kd,...kd->...k", diff, diff)
    with np.errstate(divide="ignore"):
        log_w = np.log(prior.weights)
    log_like = log_w - 0.5 * sq_dist / marginal_var - 0.5 * prior.dim * np.log(marginal_var)
    r = np.exp(log_like - logsumexp(log_like, axis=-1, keepdims=True))
    return r, diff, marginal_var


def gmm_denoise(prior: GmmPrior, x: np.ndarray, sigma: float) -> np.ndarray:
    """Exact posterior mean E[x0 | x] for x = x0 + sigma*eps, x0 ~ prior.

    Vectorized over leading axes: x has shape (..., D). At sigma = 0 the
    posterior collapses to x itself.

    Args:
        prior: Mixture prior.
        x: (..., D) noisy points.
        sigma: Noise level, >= 0.

    Returns:
        (..., D) posterior means, always finite.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = _check_points(prior, x)
    if sigma == 0.0:
        return x.copy()
    r, diff, marginal_var = _responsibilities(prior, x, sigma)
    shrink = prior.variances / marginal_var
    component_mean = prior.means + shrink[:, None] * diff
    return np.einsum("...k,...kd->...d", r, component_mean)


def gmm_vjp(prior: GmmPrior, x: np.ndarray, sigma: float, cotangent: np.ndarray) -> np.ndarray:
    """Exact J^T c for J = d gmm_denoise(prior, x, sigma) / dx.

    Differentiating mu(x) = sum_k r_k(x) m_k(x) with m_k = mu_k + shrink_k (x - mu_k)
    and softmax responsibilities gives

        J^T c = (sum_k r_k shrink_k) c + sum_k (m_k . c) r_k (grad a_k - gbar)

    where a_k is the log component likelihood, grad a_k = -(x - mu_k)/v_k and
    gbar = sum_j r_j grad a_j. For K = 1 this reduces to shrink * c.

    Args:
        prior: Mixture prior.
        x: (..., D) points.
        sigma: Noise level, >= 0; at 0 the map is the identity so J^T c = c.
        cotangent: (..., D), same shape as x.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = _check_points(prior, x)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != x.shape:
        raise ValueError(f"cotangent shape {cotangent.shape} != x shape {x.shape}")
    if not np.isfinite(cotangent).all():
        raise ValueError("non-finite cotangent")
    if sigma == 0.0:
        return cotangent.copy()
    r, diff, marginal_var = _responsibilities(prior, x, sigma)
    shrink = prior.variances / marginal_var
    component_mean = prior.means + shrink[:, None] * diff
    grad_a = -diff / marginal_var[:, None]
    gbar = np.einsum("...k,...kd->...d", r, grad_a)
    linear_part = np.einsum("...k,k->...", r, shrink)[..., None] * cotangent
    mean_dot_c = np.einsum("...kd,...d->...k", component_mean, cotangent)
    softmax_part = np.einsum("...k,...kd->...d", mean_dot_c * r, grad_a - gbar[..., None, :])
    return linear_part + softmax_part


def gmm_log_marginal(prior: GmmPrior, x: np.ndarray, sigma: float) -> np.ndarray:
    """Log density of x under the prior convolved with N(0, sigma^2 I)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = _check_points(prior, x)
    marginal_var = prior.variances + sigma * sigma
    diff = x[..., None, :] - prior.means
    sq_dist = np.einsum("...kd,...kd->...k", diff, diff)
    with np.errstate(divide="ignore"):
        log_w = np.log(prior.weights)
    log_like = (
        log_w
        - 0.5 * sq_dist / marginal_var
        - 0.5 * prior.dim * (np.log(2.0 * np.pi) + np.log(marginal_var))
    )
    return logsumexp(log_like, axis=-1)


def tweedie_score(mu: np.ndarray, x: np.ndarray, sigma: float) -> np.ndarray:
    """Score of the sigma-smoothed density from the posterior mean: (mu - x) / sigma^2.

    Args:
        mu: Denoised estimate, same shape as x.
        x: Noisy points.
        sigma: Noise level, must be > 0.
    """
    if sigma <= 0:
        raise ValueError(f"tweedie_score needs sigma > 0, got {sigma}")
    mu = np.asarray(mu, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if mu.shape != x.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs x {x.shape}")
    return (mu - x) / (sigma * sigma)


@dataclass(frozen=True)
class GmmFrameDenoiser:
    """Denoiser that flattens each frame to a vector and applies a GMM prior per frame.

    Frames are denoised independently (no temporal coupling), so permuting the
    input frames permutes the outputs identically.
    """

    prior: GmmPrior
    layout: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        layout = tuple(int(v) for v in self.layout)
        if len(layout) != 4 or any(v < 1 for v in layout):
            raise ValueError(f"layout must be positive (N, H, W, C), got {self.layout}")
        n, h, w, c = layout
        if h * w * c != self.prior.dim:
            raise ValueError(
                f"frame size {h}x{w}x{c} = {h * w * c} does not match prior dim {self.prior.dim}"
            )
        object.__setattr__(self, "layout", layout)

    @property
    def capabilities(self) -> DenoiserCapabilities:
        return DenoiserCapabilities(
            supports_vjp=True, frame_count=self.layout[0], channels=self.layout[3]
        )

    def _check(self, video: LatentVideo) -> np.ndarray:
        if video.data.shape != self.layout:
            raise ValueError(f"expected video shape {self.layout}, got {video.data.shape}")
        return video.data.reshape(self.layout[0], -1)

    def denoise(self, video: LatentVideo, sigma: float) -> LatentVideo:
        flat = self._check(video)
        out = gmm_denoise(self.prior, flat, sigma)
        return LatentVideo(data=out.reshape(self.layout))

    def vjp(self, video: LatentVideo, sigma: float, cotangent: LatentVideo) -> LatentVideo:
        flat = self._check(video)
        flat_cot = self._check(cotangent)
        out = gmm_vjp(self.prior, flat, sigma, flat_cot)
        return LatentVideo(data=out.reshape(self.layout))


def frame_denoiser_from_gmm(prior: GmmPrior, layout: Sequence[int]) -> GmmFrameDenoiser:
    """Build a per-frame denoiser contract from a mixture prior.

    Args:
        prior: Mixture over flattened frames (dim must equal H*W*C).
        layout: (N, H, W, C) accepted video shape.
    """
    return GmmFrameDenoiser(prior=prior, layout=tuple(int(v) for v in layout))
