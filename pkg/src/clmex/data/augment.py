"""Stochastic image augmentation: resized crop, flip, colour jitter, grayscale.

Images are (H, W, C) float arrays in [0, 1]. `augment` splits into drawing
parameters (`sample_params`) and applying them (`apply_params`), so tests can
force any combination.

Colour jitter draws brightness, contrast and saturation factors
``1 + s * U(-1, 1)`` and a hue shift of ``s * U(-1, 1) * 0.5`` turns
(so s = 0.4 bounds it to +-72 degrees), applied in that order. Grayscale
uses ITU-R BT.601 luma weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple[float, float] = (0.2, 1.0)
    flip_p: float = 0.5
    grayscale_p: float = 0.5
    jitter_strength: float = 0.4


@dataclass(frozen=True)
class AugmentParams:
    crop: tuple[float, float, float]  # top, left, side as fractions of the image size
    flip: bool = False
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0
    grayscale: bool = False


IDENTITY = AugmentParams(crop=(0.0, 0.0, 1.0))


def sample_params(rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> AugmentParams:
    lo, hi = config.crop_scale
    lo, hi = min(max(lo, 1e-3), 1.0), min(max(hi, 1e-3), 1.0)
    scale = rng.uniform(lo, hi) if hi > lo else hi
    side = math.sqrt(scale)
    top = rng.uniform(0.0, 1.0 - side) if side < 1 else 0.0
    left = rng.uniform(0.0, 1.0 - side) if side < 1 else 0.0
    flip = bool(rng.random() < config.flip_p)
    s = max(config.jitter_strength, 0.0)
    b, c, sat, h = rng.uniform(-1.0, 1.0, size=4) * s
    gray = bool(rng.random() < config.grayscale_p)
    return AugmentParams(
        crop=(top, left, side),
        flip=flip,
        brightness=1.0 + b,
        contrast=1.0 + c,
        saturation=1.0 + sat,
        hue=0.5 * h,
        grayscale=gray,
    )


def resized_crop(image: np.ndarray, top: float, left: float, side: float) -> np.ndarray:
    """Bilinearly resample the square window (fractions of H, W) back to full size."""
    h, w = image.shape[:2]
    if top == 0.0 and left == 0.0 and side == 1.0:
        return image.copy()
    ys = top * h + (np.arange(h) + 0.5) * side - 0.5
    xs = left * w + (np.arange(w) + 0.5) * side - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top_row = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom_row = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top_row * (1 - wy) + bottom_row * wy


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def to_grayscale(image: np.ndarray) -> np.ndarray:
    if image.shape[2] == 1:
        return image.copy()
    luma = image[..., :3] @ LUMA_WEIGHTS
    return np.repeat(luma[..., None], image.shape[2], axis=2)


def _luma(image: np.ndarray) -> np.ndarray:
    return image[..., :3] @ LUMA_WEIGHTS if image.shape[2] >= 3 else image[..., 0]


def color_jitter(image: np.ndarray, brightness=1.0, contrast=1.0, saturation=1.0, hue=0.0) -> np.ndarray:
    out = image
    if brightness != 1.0:
        out = np.clip(out * brightness, 0.0, 1.0)
    if contrast != 1.0:
        mean = _luma(out).mean()
        out = np.clip((out - mean) * contrast + mean, 0.0, 1.0)
    if out.shape[2] == 3:
        if saturation != 1.0:
            gray = _luma(out)[..., None]
            out = np.clip(gray + (out - gray) * saturation, 0.0, 1.0)
        if hue != 0.0:
            hsv = rgb_to_hsv(out)
            hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
            out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out


def apply_params(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    out = resized_crop(image, *p.crop)
    if p.flip:
        out = hflip(out)
    out = color_jitter(out, p.brightness, p.contrast, p.saturation, p.hue)
    if p.grayscale:
        out = to_grayscale(out)
    return out.astype(image.dtype, copy=False)


def augment(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    return apply_params(image, sample_params(rng, config))
