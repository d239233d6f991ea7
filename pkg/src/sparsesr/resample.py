"""Cubic interpolation onto the HR grid and integer-shift registration."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .imaging import Image

DELTA_MAX = 6
SEARCH_MARGIN = 2


class RegistrationError(RuntimeError):
    """Cross-correlation peak lies outside the trusted shift range."""

    def __init__(self, shift: "Shift", delta_max: int):
        super().__init__(f"registration failed: shift ({shift.d1}, {shift.d2}) "
                         f"exceeds delta_max={delta_max}")
        self.shift = shift
        self.delta_max = delta_max


@dataclass(frozen=True)
class Shift:
    d1: int
    d2: int

    def __neg__(self) -> "Shift":
        return Shift(-self.d1, -self.d2)


def as_zoom(R) -> Fraction:
    """Exact rational form of a zoom ratio (denominator capped at 1000)."""
    frac = Fraction(R).limit_denominator(1000) if not isinstance(R, Fraction) else R
    if frac < 1:
        raise ValueError(f"zoom ratio must be >= 1, got {R}")
    return frac


def cubic_kernel(s):
    """Keys cubic convolution kernel with a = -1/2."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    s2, s3 = s * s, s * s * s
    near = 1.5 * s3 - 2.5 * s2 + 1.0
    far = -0.5 * s3 + 2.5 * s2 - 4.0 * s + 2.0
    out = np.where(s < 1.0, near, np.where(s < 2.0, far, 0.0))
    return out if out.ndim else float(out)


def hr_size(n: int, R) -> int:
    return int(n * as_zoom(R))  # floor for positive values


@lru_cache(maxsize=64)
def _interpolation_matrix(n_in: int, num: int, den: int) -> np.ndarray:
    n_out = (n_in * num) // den
    u = np.arange(n_out, dtype=np.int64)[:, None]
    # HR sample u sits at LR coordinate u * den / num; exact integer offsets
    base = (u * den) // num
    taps = base + np.arange(-1, 3)[None, :]
    weights = cubic_kernel((u * den - taps * num) / num)
    W = np.zeros((n_out, n_in))
    rows = np.broadcast_to(u, taps.shape)
    np.add.at(W, (rows, np.clip(taps, 0, n_in - 1)), weights)
    W.flags.writeable = False
    return W


def interpolation_matrix(n_in: int, R) -> np.ndarray:
    """Row ``u`` holds the weights of LR samples for HR sample ``u``.

    Out-of-range LR indices are clamped to the nearest edge sample.
    """
    R = as_zoom(R)
    return _interpolation_matrix(n_in, R.numerator, R.denominator)


def interpolate_linear(pixels: np.ndarray, R) -> np.ndarray:
    """Separable cubic upsampling without clamping (linear in the input)."""
    Wr = interpolation_matrix(pixels.shape[0], R)
    Wc = Wr if pixels.shape[1] == pixels.shape[0] else interpolation_matrix(pixels.shape[1], R)
    return Wr @ pixels @ Wc.T


def interpolate_to_hr(lr: Image, R) -> Image:
    return Image.clamped(interpolate_linear(lr.pixels, R), lr.pixel_size)


def shift_pixels(pixels: np.ndarray, d1: int, d2: int) -> np.ndarray:
    h, w = pixels.shape
    if abs(d1) >= h or abs(d2) >= w:
        raise ValueError(f"shift ({d1}, {d2}) exceeds image size {w}x{h}")
    padded = np.pad(pixels, ((abs(d1), abs(d1)), (abs(d2), abs(d2))), mode="edge")
    r0, c0 = abs(d1) - d1, abs(d2) - d2
    return padded[r0:r0 + h, c0:c0 + w]


def shift_image(image: Image, shift: Shift) -> Image:
    """Translate by whole pixels so that out[u, v] = in[u - d1, v - d2]; borders replicate."""
    return Image(shift_pixels(image.pixels, shift.d1, shift.d2), image.pixel_size)


def correlation_surface(moving: np.ndarray, reference: np.ndarray, radius: int) -> np.ndarray:
    """Overlap sums of moving[u - d] * reference[u] for |d1|, |d2| <= radius.

    Both images are mean-centred first. Entry ``[d1 + radius, d2 + radius]``
    holds the score of shift ``(d1, d2)``.
    """
    a = moving - moving.mean()
    b = reference - reference.mean()
    h, w = a.shape
    size = 2 * radius + 1
    surf = np.empty((size, size))
    for i, d1 in enumerate(range(-radius, radius + 1)):
        ra, rb = slice(max(0, -d1), h - max(0, d1)), slice(max(0, d1), h - max(0, -d1))
        for j, d2 in enumerate(range(-radius, radius + 1)):
            ca, cb = slice(max(0, -d2), w - max(0, d2)), slice(max(0, d2), w - max(0, -d2))
            surf[i, j] = np.sum(a[ra, ca] * b[rb, cb])
    return surf


def register(moving: Image, reference: Image, delta_max: int = DELTA_MAX) -> Shift:
    """Integer shift that aligns ``moving`` onto ``reference``.

    The result satisfies ``shift_image(moving, s) ~ reference``. The
    search window extends ``SEARCH_MARGIN`` pixels past ``delta_max`` so
    an out-of-range peak is detected rather than clipped; such a peak
    raises :class:`RegistrationError`.
    """
    if moving.shape != reference.shape:
        raise ValueError(f"shape mismatch: {moving.shape} vs {reference.shape}")
    if delta_max < 0:
        raise ValueError("delta_max must be >= 0")
    h, w = moving.shape
    radius = min(delta_max + SEARCH_MARGIN, h - 1, w - 1)
    surf = correlation_surface(moving.pixels, reference.pixels, radius)
    best_score = surf.max()
    d1s, d2s = np.nonzero(surf == best_score)
    candidates = sorted(
        ((abs(int(a) - radius) + abs(int(b) - radius), int(a) - radius, int(b) - radius)
         for a, b in zip(d1s, d2s))
    )
    _, d1, d2 = candidates[0]
    shift = Shift(d1, d2)
    if max(abs(d1), abs(d2)) > delta_max:
        raise RegistrationError(shift, delta_max)
    return shift
