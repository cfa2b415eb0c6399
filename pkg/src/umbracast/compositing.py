"""Masked affine modulation and shadow previews.

masked_affine applies, elementwise,

    out = (1 - m) * x + m * (s * x + b)

so a soft mask m in [0, 1] gates a per-channel affine transform of x.
render_preview uses it to darken a shadow region of an RGB image for
qualitative inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionMismatchError, NumericalError
from .geometry import BinaryMask


@dataclass(frozen=True, eq=False)
class AffineParams:
    """Per-channel scale and bias; scalars broadcast over channels."""

    scale: np.ndarray
    bias: np.ndarray

    def __init__(self, scale, bias):
        s = np.atleast_1d(np.asarray(scale, dtype=np.float64))
        b = np.atleast_1d(np.asarray(bias, dtype=np.float64))
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(b))):
            raise NumericalError("affine parameters must be finite")
        s.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "bias", b)


def masked_affine(x: np.ndarray, m: np.ndarray, params: AffineParams) -> np.ndarray:
    """Gate a per-channel affine transform of x with soft mask m.

    x is (H, W) or (H, W, C); m is (H, W) with values in [0, 1]. A zero
    mask, or identity parameters (s=1, b=0), return the input bit-exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != x.shape[:2]:
        raise DimensionMismatchError(f"mask {m.shape} does not match image {x.shape[:2]}")
    s, b = params.scale, params.bias
    if x.ndim == 3:
        if s.size not in (1, x.shape[2]) or b.size not in (1, x.shape[2]):
            raise DimensionMismatchError("affine params do not match channel count")
        m = m[:, :, None]
    elif s.size != 1 or b.size != 1:
        raise DimensionMismatchError("single-channel image needs scalar params")

    # identity fast paths keep the two exact gating guarantees bit-exact
    if not m.any():
        return x.copy()
    if np.all(s == 1.0) and np.all(b == 0.0):
        return x.copy()
    return (1.0 - m) * x + m * (s * x + b)


DEFAULT_DARKENING = AffineParams(scale=0.55, bias=0.0)
PREVIEW_FEATHER_SIGMA = 2.0


def render_preview(
    image: np.ndarray,
    shadow: BinaryMask,
    darkening: AffineParams = DEFAULT_DARKENING,
    feather_sigma: float = PREVIEW_FEATHER_SIGMA,
) -> np.ndarray:
    """Darken the shadow region of an RGB image, uint8 in and out.

    The mask edge is feathered with a Gaussian so the preview has no hard
    staircase; output is clamped to [0, 255]. Preview scales are limited
    to [0, 4] to keep the composite displayable.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatchError("preview expects an (H, W, 3) RGB image")
    if shadow.bits.shape != img.shape[:2]:
        raise DimensionMismatchError("shadow mask dims differ from image dims")
    if np.any(darkening.scale < 0.0) or np.any(darkening.scale > 4.0):
        raise NumericalError("preview scale must lie in [0, 4]")

    soft = gaussian_filter(shadow.bits.astype(np.float64), feather_sigma,
                           mode="nearest")
    out = masked_affine(img.astype(np.float64), soft, darkening)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
