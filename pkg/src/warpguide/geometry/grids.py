"""Raster value types: images, depth maps, and warp results."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ImageGrid", "DepthMap", "WarpResult"]


@dataclass(frozen=True)
class ImageGrid:
    """H x W x C raster of finite reals.

    Serves both as a pixel image (channels in [0, 1] by convention for
    display) and as a per-frame latent state, where values are unbounded.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3 or data.shape[2] < 1:
            raise ValueError(f"image must be H x W x C with C >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("image entries must be finite")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-frame z values with a validity flag.

    ``values`` must be finite everywhere and strictly positive wherever
    ``valid`` is set; invalid pixels mark undefined depth (their value is
    ignored but kept finite).
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        valid = np.array(self.valid, dtype=bool, copy=True)
        if values.ndim != 2:
            raise ValueError(f"depth must be H x W, got shape {values.shape}")
        if valid.shape != values.shape:
            raise ValueError(
                f"validity shape {valid.shape} does not match depth shape {values.shape}"
            )
        if not np.isfinite(values).all():
            raise ValueError("depth values must be finite")
        if np.any(values[valid] <= 0):
            raise ValueError("depth must be strictly positive on valid pixels")
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @staticmethod
    def from_values(values: np.ndarray) -> "DepthMap":
        """Depth map that is valid wherever values are positive."""
        values = np.asarray(values, dtype=np.float64)
        return DepthMap(values, values > 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class WarpResult:
    """Warped image plus its per-pixel validity.

    Invalid pixels (disocclusion holes, or targets no splat reached) carry a
    zero sentinel fill in ``image``; ``coverage`` is the mean of ``validity``.
    """

    image: ImageGrid
    validity: np.ndarray
    coverage: float

    def __post_init__(self) -> None:
        validity = np.array(self.validity, dtype=bool, copy=True)
        if validity.shape != (self.image.height, self.image.width):
            raise ValueError(
                f"validity shape {validity.shape} does not match image "
                f"{self.image.height}x{self.image.width}"
            )
        if np.any(self.image.data[~validity] != 0.0):
            raise ValueError("invalid pixels must carry the zero sentinel fill")
        expected = float(validity.mean())
        if abs(self.coverage - expected) > 1e-12:
            raise ValueError(f"coverage {self.coverage} does not equal mean validity {expected}")
        validity.flags.writeable = False
        object.__setattr__(self, "validity", validity)

    @staticmethod
    def from_mask(image_data: np.ndarray, validity: np.ndarray) -> "WarpResult":
        """Build a result from raw data, zeroing invalid pixels."""
        validity = np.asarray(validity, dtype=bool)
        data = np.array(image_data, dtype=np.float64, copy=True)
        data[~validity] = 0.0
        return WarpResult(ImageGrid(data), validity, float(validity.mean()))
