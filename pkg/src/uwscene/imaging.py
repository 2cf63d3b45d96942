"""Physical underwater image formation and its closed-form inverse.

A captured intensity is modeled per pixel and per color channel as direct
reflection attenuated exponentially over the imaging distance plus a constant
veiling term added by the water column:

    captured = clean * exp(-beta_c(z) * z) + b_c

Restoration inverts that relation. The veiling term is estimated with a dark
patch heuristic: the image patch with the lowest mean RGB value is assumed to
owe its response almost entirely to the water column, so its channel means
serve as the per-channel veiling estimate.

Images are H x W x 3 float arrays with linear intensities in [0, 1]; depth
maps are H x W float arrays of non-negative distances in consistent units.
All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

# Floor on the attenuation factor before division; bounds the amplification
# of far pixels during restoration.
EPS_DIV = 1e-6


def validate_image(pixels: np.ndarray) -> np.ndarray:
    """Validate an RGB raster: H x W x 3, finite, values in [0, 1]."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"image must be HxWx3, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"image must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"image values must lie in [0,1], got range [{arr.min()}, {arr.max()}]"
        )
    return arr


def validate_depth(z: np.ndarray, image_shape=None) -> np.ndarray:
    """Validate a depth map: H x W, finite, non-negative, matching the image."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"depth must be HxW, got shape {arr.shape}")
    if image_shape is not None and arr.shape != tuple(image_shape[:2]):
        raise DimensionError(
            f"depth shape {arr.shape} does not match image shape {tuple(image_shape[:2])}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError("depth contains non-finite values")
    if arr.min() < 0.0:
        raise ValidationError(f"depth must be non-negative, got min {arr.min()}")
    return arr


def validate_backscatter(b) -> np.ndarray:
    """Validate a per-channel veiling term: 3 values in [0, 1]."""
    arr = np.asarray(b, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise DimensionError(f"backscatter must have 3 channels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("backscatter contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(f"backscatter must lie in [0,1], got {arr.tolist()}")
    return arr


@dataclass(frozen=True)
class Attenuation:
    """Per-channel attenuation coefficient beta_c(z).

    Either a constant per channel or a piecewise-linear function of distance
    given as per-channel knot lists. Outside the knot range the end values are
    held constant.
    """

    beta: np.ndarray | None = None
    knots_z: tuple = ()
    knots_beta: tuple = ()

    @classmethod
    def constant(cls, betas) -> "Attenuation":
        arr = np.asarray(betas, dtype=np.float64).reshape(-1)
        if arr.shape != (3,):
            raise DimensionError(f"need 3 per-channel coefficients, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0:
            raise ValidationError(f"coefficients must be finite and >= 0, got {arr.tolist()}")
        return cls(beta=arr)

    @classmethod
    def piecewise_linear(cls, channel_knots) -> "Attenuation":
        """Build from three lists of (z, beta) knots, one per channel."""
        if len(channel_knots) != 3:
            raise DimensionError("need knot lists for exactly 3 channels")
        zs, bs = [], []
        for knots in channel_knots:
            z = np.asarray([k[0] for k in knots], dtype=np.float64)
            b = np.asarray([k[1] for k in knots], dtype=np.float64)
            if z.size == 0:
                raise ValidationError("each channel needs at least one knot")
            if not (np.all(np.isfinite(z)) and np.all(np.isfinite(b))):
                raise ValidationError("knots must be finite")
            if np.any(np.diff(z) <= 0):
                raise ValidationError("knot distances must be strictly increasing")
            if b.min() < 0.0:
                raise ValidationError("attenuation coefficients must be >= 0")
            zs.append(z)
            bs.append(b)
        return cls(knots_z=tuple(zs), knots_beta=tuple(bs))

    def coefficients(self, z: np.ndarray) -> np.ndarray:
        """Evaluate beta_c(z) for every pixel; returns an array of shape z.shape + (3,)."""
        z = np.asarray(z, dtype=np.float64)
        if self.beta is not None:
            return np.broadcast_to(self.beta, z.shape + (3,)).copy()
        out = np.empty(z.shape + (3,), dtype=np.float64)
        for c in range(3):
            out[..., c] = np.interp(z, self.knots_z[c], self.knots_beta[c])
        return out


@dataclass(frozen=True)
class PatchGrid:
    """Square patch tiling of the top-left region of an image.

    Trailing rows/columns that do not fill a whole patch are excluded.
    Patches are indexed row-major.
    """

    patch_size: int
    rows: int
    cols: int

    @classmethod
    def for_image(cls, shape, patch_size: int) -> "PatchGrid":
        if patch_size < 1:
            raise ValidationError(f"patch_size must be >= 1, got {patch_size}")
        rows, cols = shape[0] // patch_size, shape[1] // patch_size
        if rows < 1 or cols < 1:
            raise DimensionError(
                f"image {tuple(shape[:2])} too small for patch_size {patch_size}"
            )
        return cls(patch_size=patch_size, rows=rows, cols=cols)

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


@dataclass
class TransferStats:
    """Diagnostics from a forward or inverse transfer."""

    clamped_low: int = 0
    clamped_high: int = 0
    saturated: int = 0  # attenuation factor hit the EPS_DIV floor


def _attenuation_factor(depth: np.ndarray, atten: Attenuation) -> np.ndarray:
    beta = atten.coefficients(depth)
    return np.exp(-beta * depth[..., None])


def degrade(clean, depth, atten: Attenuation, back, clip: bool = True) -> np.ndarray:
    """Apply the forward model: clean * exp(-beta(z) * z) + b, clamped to [0, 1].

    ``clip=False`` returns the raw (unclamped) result, useful for analyzing
    where information would be lost.
    """
    img, stats = degrade_with_stats(clean, depth, atten, back, clip=clip)
    return img


def degrade_with_stats(clean, depth, atten: Attenuation, back, clip: bool = True):
    clean = validate_image(clean)
    depth = validate_depth(depth, clean.shape)
    back = validate_backscatter(back)
    raw = clean * _attenuation_factor(depth, atten) + back
    stats = TransferStats(
        clamped_low=int(np.count_nonzero(raw < 0.0)),
        clamped_high=int(np.count_nonzero(raw > 1.0)),
    )
    if clip:
        raw = np.clip(raw, 0.0, 1.0)
    return raw, stats


def restore(degraded, depth, atten: Attenuation, back, clip: bool = True) -> np.ndarray:
    """Invert the forward model: (captured - b) / exp(-beta(z) * z), clamped.

    The attenuation factor is floored at EPS_DIV before the division, so far
    pixels saturate instead of blowing up; the count of floored pixels is
    available through :func:`restore_with_stats`.
    """
    img, stats = restore_with_stats(degraded, depth, atten, back, clip=clip)
    return img


def restore_with_stats(degraded, depth, atten: Attenuation, back, clip: bool = True):
    degraded = validate_image(degraded)
    depth = validate_depth(depth, degraded.shape)
    back = validate_backscatter(back)
    factor = _attenuation_factor(depth, atten)
    saturated = int(np.count_nonzero(factor < EPS_DIV))
    factor = np.maximum(factor, EPS_DIV)
    raw = (degraded - back) / factor
    stats = TransferStats(
        clamped_low=int(np.count_nonzero(raw < 0.0)),
        clamped_high=int(np.count_nonzero(raw > 1.0)),
        saturated=saturated,
    )
    if clip:
        raw = np.clip(raw, 0.0, 1.0)
    return raw, stats


def patch_means(image: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Mean RGB value of every patch; shape (rows, cols)."""
    image = validate_image(image)
    ps = grid.patch_size
    if grid.rows * ps > image.shape[0] or grid.cols * ps > image.shape[1]:
        raise DimensionError(f"grid {grid} does not fit image shape {image.shape}")
    core = image[: grid.rows * ps, : grid.cols * ps, :]
    blocks = core.reshape(grid.rows, ps, grid.cols, ps, 3)
    return blocks.mean(axis=(1, 3, 4))


def select_dark_patch(image, grid: PatchGrid) -> int:
    """Row-major index of the patch with the lowest mean RGB value.

    Ties resolve to the lowest index.
    """
    means = patch_means(image, grid)
    return int(np.argmin(means))


def estimate_backscatter(image, grid: PatchGrid) -> np.ndarray:
    """Per-channel veiling estimate: channel means of the darkest patch."""
    image = validate_image(image)
    k = select_dark_patch(image, grid)
    ps = grid.patch_size
    r, c = divmod(k, grid.cols)
    patch = image[r * ps : (r + 1) * ps, c * ps : (c + 1) * ps, :]
    return patch.reshape(-1, 3).mean(axis=0)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for synthetic scene generation.

    Defaults keep the forward model away from clamping: interior image values
    plus the veiling term stay inside (0, 1), so restoration is exact up to
    floating-point error.
    """

    height: int = 32
    width: int = 32
    atten: Attenuation = field(default_factory=lambda: Attenuation.constant((0.2, 0.3, 0.4)))
    back: tuple = (0.05, 0.08, 0.1)
    depth_range: tuple = (0.0, 2.0)
    value_range: tuple = (0.1, 0.8)

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValidationError("scene dimensions must be positive")
        lo, hi = self.value_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValidationError(f"value_range must satisfy 0 <= lo <= hi <= 1, got {self.value_range}")
        zlo, zhi = self.depth_range
        if not (0.0 <= zlo <= zhi) or not np.isfinite(zhi):
            raise ValidationError(f"depth_range must satisfy 0 <= lo <= hi, got {self.depth_range}")
        validate_backscatter(self.back)


def synthesize_pair(seed: int, spec: SceneSpec = SceneSpec()):
    """Deterministically generate (clean, depth, degraded) for a seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    lo, hi = spec.value_range
    clean = rng.uniform(lo, hi, size=(spec.height, spec.width, 3))
    zlo, zhi = spec.depth_range
    depth = rng.uniform(zlo, zhi, size=(spec.height, spec.width))
    degraded = degrade(clean, depth, spec.atten, spec.back)
    return clean, depth, degraded
