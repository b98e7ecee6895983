"""Deterministic fundus-image normalization and stochastic augmentation.

The normalization pipeline runs four steps in order: crop away dark border
rows/columns, resize to a square target, zero out pixels outside a centered
disc, then smooth with a normalized Gaussian window.  Augmentation is random
flips plus a random zoom about the center with constant fill outside the
frame, all driven by an explicit RNG so results are reproducible.

Images are (H, W, C) float arrays with intensities in [0, 1]; C is 1 or 3.
8-bit inputs should be divided by 255 on ingest (see dataset.load_image).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NonSquareInputError


@dataclass(frozen=True)
class GaussianKernelSpec:
    """Square (2k+1)^2 smoothing window with per-axis standard deviations.

    Weights are exp(-i^2 / (2 sigma_x^2) - j^2 / (2 sigma_y^2)) for column
    offset i and row offset j, normalized by their discrete sum so constant
    images pass through unchanged.
    """

    sigma_x: float
    sigma_y: float
    half_size: int

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError(f"sigmas must be > 0, got {self}")
        if self.half_size < 1:
            raise ValueError(f"half_size must be >= 1, got {self.half_size}")

    @property
    def window(self) -> int:
        return 2 * self.half_size + 1

    @classmethod
    def from_sigma(
        cls, sigma_x: float, sigma_y: float | None = None, max_window: int | None = None
    ) -> "GaussianKernelSpec":
        """Half-size ceil(2 * max sigma), optionally capped so the window
        stays below max_window (use target_size - 1 when blurring resized
        images)."""
        sigma_y = sigma_x if sigma_y is None else sigma_y
        half = math.ceil(2.0 * max(sigma_x, sigma_y))
        if max_window is not None:
            half = min(half, max(1, (max_window - 1) // 2))
        return cls(sigma_x, sigma_y, max(half, 1))


def _default_kernel() -> GaussianKernelSpec:
    return GaussianKernelSpec.from_sigma(10.0, max_window=223)


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the four-step normalization pipeline."""

    dark_threshold: float = 0.03
    target_size: int = 224
    circle_margin: float = 0.0
    kernel: GaussianKernelSpec = field(default_factory=_default_kernel)

    def __post_init__(self):
        if not (0.0 <= self.dark_threshold <= 1.0):
            raise ValueError(f"dark_threshold must be in [0, 1], got {self.dark_threshold}")
        if not (0.0 <= self.circle_margin < 1.0):
            raise ValueError(f"circle_margin must be in [0, 1), got {self.circle_margin}")
        if self.target_size < self.kernel.window:
            raise ValueError(
                f"target_size {self.target_size} smaller than blur window {self.kernel.window}"
            )


@dataclass(frozen=True)
class AugmentConfig:
    """Training-time augmentation: coin-flip mirror flips and a uniform
    random zoom in [1 - zoom_range, 1 + zoom_range] about the center."""

    zoom_range: float = 0.15
    horizontal_flip: bool = True
    vertical_flip: bool = True
    fill_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.zoom_range < 1.0):
            raise ValueError(f"zoom_range must be in [0, 1), got {self.zoom_range}")


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, C) float [0, 1] contract; returns the array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) with C in {{1, 3}}, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"expected float intensities in [0, 1], got dtype {img.dtype}")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("intensities must be finite and lie in [0, 1]")
    return img


def crop_dark_border(img: np.ndarray, dark_threshold: float) -> np.ndarray:
    """Minimal bounding sub-image of all rows/columns whose maximum intensity
    exceeds dark_threshold.  An all-dark image passes through unchanged."""
    validate_image(img)
    brightness = img.max(axis=2)
    rows = np.flatnonzero(brightness.max(axis=1) > dark_threshold)
    cols = np.flatnonzero(brightness.max(axis=0) > dark_threshold)
    if rows.size == 0 or cols.size == 0:
        return img.copy()
    return img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].copy()


def apply_circle_mask(img: np.ndarray, circle_margin: float = 0.0) -> np.ndarray:
    """Zero out pixels farther than (size/2) * (1 - margin) from the center.

    The center sits at index (size/2, size/2), so on a 224-square the corner
    pixel lies ~158.4 away and is always masked at margin 0.  Requires a
    square image; see pad_to_square for standalone use on non-square inputs.
    """
    validate_image(img)
    h, w = img.shape[:2]
    if h != w:
        raise NonSquareInputError(f"circle mask needs a square image, got {h}x{w}")
    radius = (h / 2.0) * (1.0 - circle_margin)
    rr, cc = np.ogrid[0:h, 0:w]
    inside = np.hypot(rr - h / 2.0, cc - w / 2.0) <= radius
    return img * inside[:, :, None]


def pad_to_square(img: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Center-pad the shorter axis so the image becomes square."""
    validate_image(img)
    h, w = img.shape[:2]
    if h == w:
        return img.copy()
    size = max(h, w)
    top = (size - h) // 2
    left = (size - w) // 2
    out = np.full((size, size, img.shape[2]), fill, dtype=img.dtype)
    out[top : top + h, left : left + w] = img
    return out


def resize(img: np.ndarray, target_size: int) -> np.ndarray:
    """Bilinear resize to target_size x target_size (half-pixel sample grid,
    edge-clamped).  A same-size resize is an exact identity."""
    validate_image(img)
    if target_size < 1:
        raise ValueError(f"target_size must be >= 1, got {target_size}")
    h, w = img.shape[:2]
    src_r = (np.arange(target_size) + 0.5) * (h / target_size) - 0.5
    src_c = (np.arange(target_size) + 0.5) * (w / target_size) - 0.5
    out = _bilinear_gather(img, src_r[:, None], src_c[None, :], fill=None)
    return np.clip(out, 0.0, 1.0)


def _bilinear_gather(
    img: np.ndarray, src_r: np.ndarray, src_c: np.ndarray, fill: float | None
) -> np.ndarray:
    """Sample img at broadcastable (src_r, src_c) coordinate grids.

    fill=None clamps coordinates to the frame; a float fills samples whose
    coordinates fall outside [0, size-1] with that constant.
    """
    h, w = img.shape[:2]
    src_r, src_c = np.broadcast_arrays(src_r, src_c)
    if fill is not None:
        invalid = (src_r < 0) | (src_r > h - 1) | (src_c < 0) | (src_c > w - 1)
    r = np.clip(src_r, 0, h - 1)
    c = np.clip(src_c, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    wr = (r - r0)[..., None]
    wc = (c - c0)[..., None]
    out = (
        img[r0, c0] * (1 - wr) * (1 - wc)
        + img[r0, c1] * (1 - wr) * wc
        + img[r1, c0] * wr * (1 - wc)
        + img[r1, c1] * wr * wc
    )
    if fill is not None:
        out = np.where(invalid[..., None], fill, out)
    return out


def kernel_weights(kernel: GaussianKernelSpec) -> np.ndarray:
    """The normalized (2k+1, 2k+1) weight matrix; rows follow sigma_y,
    columns follow sigma_x.  Sums to 1."""
    offsets = np.arange(-kernel.half_size, kernel.half_size + 1, dtype=np.float64)
    wx = np.exp(-(offsets**2) / (2.0 * kernel.sigma_x**2))
    wy = np.exp(-(offsets**2) / (2.0 * kernel.sigma_y**2))
    weights = np.outer(wy, wx)
    return weights / weights.sum()


def gaussian_blur(img: np.ndarray, kernel: GaussianKernelSpec) -> np.ndarray:
    """Smooth each channel with the normalized Gaussian window.

    Borders are handled by edge replication, so the retina rim is not
    darkened.  The kernel is separable, which makes two 1-D passes exactly
    equivalent to the full 2-D weighted sum.
    """
    validate_image(img)
    offsets = np.arange(-kernel.half_size, kernel.half_size + 1, dtype=np.float64)
    wx = np.exp(-(offsets**2) / (2.0 * kernel.sigma_x**2))
    wy = np.exp(-(offsets**2) / (2.0 * kernel.sigma_y**2))
    out = ndimage.correlate1d(img, wx / wx.sum(), axis=1, mode="nearest")
    out = ndimage.correlate1d(out, wy / wy.sum(), axis=0, mode="nearest")
    return out


def preprocess_image(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Crop dark border, resize, circle-mask, blur — in that order."""
    out = crop_dark_border(img, cfg.dark_threshold)
    out = resize(out, cfg.target_size)
    out = apply_circle_mask(out, cfg.circle_margin)
    return gaussian_blur(out, cfg.kernel)


def zoom_about_center(img: np.ndarray, factor: float, fill: float = 0.0) -> np.ndarray:
    """Rescale the sampling grid about the image center by the given factor.

    factor > 1 samples a wider source region (content shrinks), factor < 1
    magnifies the center; either way points outside the frame get the
    constant fill.  factor 1 is an exact identity.
    """
    validate_image(img)
    if factor <= 0:
        raise ValueError(f"zoom factor must be > 0, got {factor}")
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_r = cy + (np.arange(h) - cy) * factor
    src_c = cx + (np.arange(w) - cx) * factor
    return _bilinear_gather(img, src_r[:, None], src_c[None, :], fill=fill)


def as_rng(rng_state) -> np.random.Generator:
    """Accept an integer seed or a Generator; ints get their own fresh stream."""
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def augment(img: np.ndarray, cfg: AugmentConfig, rng_state=None) -> np.ndarray:
    """One random training-time transform of img.

    Draws, in fixed order: horizontal-flip coin, vertical-flip coin (each
    only when enabled, probability 0.5), then the zoom factor.  Passing the
    same rng_state (or seed) reproduces the output exactly.
    """
    validate_image(img)
    rng = as_rng(cfg.seed if rng_state is None else rng_state)
    out = img
    if cfg.horizontal_flip and rng.random() < 0.5:
        out = out[:, ::-1]
    if cfg.vertical_flip and rng.random() < 0.5:
        out = out[::-1]
    factor = rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range)
    if factor != 1.0:
        out = zoom_about_center(out, factor, fill=cfg.fill_value)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0))
