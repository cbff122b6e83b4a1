"""Grayscale image handling: pyramid construction, sampling, gradients.

Images are 2D numpy arrays of shape (height, width), float64, intensities
normalized to [0, 1].  Row index is v (down), column index is u (right).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmall, OutOfBounds

PYRAMID_LEVELS = 4

_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class ImagePyramid:
    """Four pyramid levels; level 0 is the input, each level halves per axis."""

    levels: tuple

    def __post_init__(self):
        if len(self.levels) != PYRAMID_LEVELS:
            raise ValueError(f"pyramid must have {PYRAMID_LEVELS} levels")

    @property
    def level_dims(self) -> list:
        """[(width, height)] per level."""
        return [(im.shape[1], im.shape[0]) for im in self.levels]


def to_grayscale(rgb_image: np.ndarray) -> np.ndarray:
    """Convert an RGB buffer to a [0, 1] luminance image.

    Accepts uint8 (0..255) or float (already normalized) arrays of shape
    (height, width, 3).
    """
    rgb = np.asarray(rgb_image)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) RGB buffer")
    rgb = rgb.astype(np.float64)
    if rgb_image.dtype == np.uint8:
        rgb = rgb / 255.0
    return _LUMA_R * rgb[:, :, 0] + _LUMA_G * rgb[:, :, 1] + _LUMA_B * rgb[:, :, 2]


def _halve(image: np.ndarray) -> np.ndarray:
    """Downsample by averaging disjoint 2x2 blocks (odd trailing row/col dropped)."""
    h2, w2 = image.shape[0] // 2, image.shape[1] // 2
    v = image[: 2 * h2, : 2 * w2]
    return 0.25 * (v[0::2, 0::2] + v[0::2, 1::2] + v[1::2, 0::2] + v[1::2, 1::2])


def build_pyramid(image: np.ndarray) -> ImagePyramid:
    """Build the 4-level mean pyramid of a grayscale image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2D grayscale image")
    if img.shape[0] < 16 or img.shape[1] < 16:
        raise ImageTooSmall("pyramid input must be at least 16x16")
    levels = [img]
    for _ in range(PYRAMID_LEVELS - 1):
        levels.append(_halve(levels[-1]))
    return ImagePyramid(tuple(levels))


def _bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear interpolation without bounds checking (caller clips/masks)."""
    h, w = image.shape
    x0 = np.clip(np.floor(u).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(v).astype(np.int64), 0, h - 2)
    fu = u - x0
    fv = v - y0
    top = image[y0, x0] * (1.0 - fu) + image[y0, x0 + 1] * fu
    bot = image[y0 + 1, x0] * (1.0 - fu) + image[y0 + 1, x0 + 1] * fu
    return top * (1.0 - fv) + bot * fv


def sample_bilinear(image: np.ndarray, u, v):
    """Sample intensity at subpixel location(s); exact at integer coordinates.

    Valid domain is 0 <= u <= width-1 and 0 <= v <= height-1; anything
    outside raises :class:`OutOfBounds`.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    ua = np.asarray(u, dtype=np.float64)
    va = np.asarray(v, dtype=np.float64)
    if np.any(ua < 0) or np.any(ua > w - 1) or np.any(va < 0) or np.any(va > h - 1):
        raise OutOfBounds("sample coordinates outside the image")
    out = _bilinear(img, ua, va)
    if np.isscalar(u) or (ua.ndim == 0 and va.ndim == 0):
        return float(out)
    return out


def gradient(image: np.ndarray):
    """Per-pixel intensity gradient (d/du, d/dv).

    Central differences in the interior, one-sided at the borders.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ImageTooSmall("gradient needs at least 3x3")
    dx = np.empty_like(img)
    dy = np.empty_like(img)
    dx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    dx[:, 0] = img[:, 1] - img[:, 0]
    dx[:, -1] = img[:, -1] - img[:, -2]
    dy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    dy[0, :] = img[1, :] - img[0, :]
    dy[-1, :] = img[-1, :] - img[-2, :]
    return dx, dy
