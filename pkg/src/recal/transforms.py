"""Lossy label-invariant image transforms on N x C x H x W tensors."""
from __future__ import annotations

import math

import numpy as np

from .data import ImageTensorSet, TransformationKind, TransformationSpec
from .exceptions import DomainError


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 < value <= 1.0):
        raise DomainError(f"{name} must lie in (0, 1], got {value}")
    return value


def _sample_positions(out_size: int, in_size: int) -> np.ndarray:
    # corner-aligned; a single output sample sits at the input's centre
    if out_size == 1:
        return np.array([(in_size - 1) / 2.0])
    return np.arange(out_size) * (in_size - 1) / (out_size - 1)


def _bilinear_axis(values: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    in_size = values.shape[axis]
    pos = _sample_positions(out_size, in_size)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = pos - lo
    shape = [1] * values.ndim
    shape[axis] = out_size
    frac = frac.reshape(shape)
    return (np.take(values, lo, axis=axis) * (1.0 - frac)
            + np.take(values, hi, axis=axis) * frac)


def resize_bilinear(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of the last two axes."""
    out = _bilinear_axis(np.asarray(values, dtype=np.float64), height, axis=-2)
    return _bilinear_axis(out, width, axis=-1)


def zoom_out(images: ImageTensorSet, scale: float, fill: float = 0.0) -> ImageTensorSet:
    """Shrink every plane by ``scale`` and centre it on a ``fill`` canvas.

    The shrunken plane is ``round(scale*H) x round(scale*W)`` (at least
    1 x 1, halves rounded up) and its top-left corner sits at
    ``((H - h) // 2, (W - w) // 2)``.
    """
    scale = _check_unit("scale", scale)
    if not (0.0 <= fill <= 1.0):
        raise DomainError(f"fill must lie in [0, 1], got {fill}")
    n, c, H, W = images.dims
    h = max(1, math.floor(scale * H + 0.5))
    w = max(1, math.floor(scale * W + 0.5))
    small = resize_bilinear(images.values, h, w)
    canvas = np.full((n, c, H, W), fill, dtype=np.float64)
    top, left = (H - h) // 2, (W - w) // 2
    canvas[:, :, top:top + h, left:left + w] = small
    return ImageTensorSet(np.clip(canvas, 0.0, 1.0).astype(np.float32))


def brightness(images: ImageTensorSet, factor: float) -> ImageTensorSet:
    """Scale every value by ``factor`` (darker for smaller factors)."""
    factor = _check_unit("factor", factor)
    return ImageTensorSet(np.clip(images.values * np.float32(factor), 0.0, 1.0))


def apply_spec(images: ImageTensorSet, spec: TransformationSpec, fill: float = 0.0) -> ImageTensorSet:
    if spec.kind is TransformationKind.ZOOM_OUT:
        return zoom_out(images, spec.parameter, fill)
    if spec.kind is TransformationKind.BRIGHTNESS:
        return brightness(images, spec.parameter)
    raise DomainError(f"{spec.kind.value} is not an image transformation")
