"""Image container, raster I/O and patch extraction / stitching."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or non-grayscale raster files."""


@dataclass(frozen=True)
class Image:
    """A grayscale raster with values in [0, 1].

    ``pixels`` is stored row-major with shape ``(height, width)``.
    """

    pixels: np.ndarray
    pixel_size: float | None = None

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def clamped(cls, pixels, pixel_size=None) -> "Image":
        return cls(np.clip(pixels, 0.0, 1.0), pixel_size)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class PatchSet:
    """Vectorized square patches, one per column of ``data``.

    Each patch is flattened column-major; ``positions[j]`` holds the
    top-left ``(row, col)`` of column ``j``.
    """

    patch_side: int
    data: np.ndarray
    positions: np.ndarray
    stride: int
    image_shape: tuple[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        n = self.patch_side * self.patch_side
        if self.data.ndim != 2 or self.data.shape[0] != n:
            raise ValueError(f"patch data must have {n} rows, got {self.data.shape}")
        if self.positions.shape != (self.data.shape[1], 2):
            raise ValueError("positions and patch columns disagree in count")

    @property
    def count(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PatchSet":
        return PatchSet(self.patch_side, data, self.positions, self.stride, self.image_shape)


# ---------------------------------------------------------------- file I/O

_PGM_HEADER = re.compile(rb"^P5\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def _read_pgm(raw: bytes) -> tuple[np.ndarray, int]:
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise ImageFormatError("malformed PGM header (only binary P5 is supported)")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = raw[m.end():]
    count = width * height
    if len(body) < count * dtype.itemsize:
        raise ImageFormatError("truncated PGM pixel data")
    arr = np.frombuffer(body, dtype=dtype, count=count).reshape(height, width)
    return arr.astype(np.float64), maxval


def _read_png(path: Path) -> tuple[np.ndarray, int]:
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if mode == "L":
        return arr.astype(np.float64), 255
    if mode in ("I;16", "I;16B", "I;16L"):
        return arr.astype(np.float64), 65535
    if mode == "I" and arr.ndim == 2:
        # Pillow opens some 16-bit grayscale PNGs as 32-bit "I"
        return arr.astype(np.float64), 65535
    raise ImageFormatError(f"{path}: mode {mode!r} is not grayscale; convert it first")


def load_image(path) -> Image:
    """Read an 8/16-bit grayscale PGM (P5) or PNG into a normalized Image."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if raw.startswith(b"P5"):
        arr, maxval = _read_pgm(raw)
    elif raw.startswith(b"\x89PNG"):
        arr, maxval = _read_png(path)
    elif raw[:2] in (b"P6", b"P3", b"P2"):
        raise ImageFormatError(f"{path}: only binary grayscale PGM (P5) is supported")
    else:
        raise ImageFormatError(f"{path}: unsupported image format")
    return Image(arr / maxval)


def quantize(pixels: np.ndarray, max_sample: int) -> np.ndarray:
    """Clamp to [0, 1] and round half-up onto ``0..max_sample``."""
    v = np.clip(pixels, 0.0, 1.0) * max_sample
    return np.floor(v + 0.5).astype(np.uint16 if max_sample > 255 else np.uint8)


def save_image(image: Image, path, bit_depth: int = 16) -> None:
    """Write ``image`` as PGM or PNG (picked by suffix) at 8 or 16 bits."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    path = Path(path)
    max_sample = 255 if bit_depth == 8 else 65535
    q = quantize(image.pixels, max_sample)
    suffix = path.suffix.lower()
    try:
        if suffix == ".pgm":
            header = f"P5\n{image.width} {image.height}\n{max_sample}\n".encode("ascii")
            body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
            path.write_bytes(header + body)
        elif suffix == ".png":
            PILImage.fromarray(q).save(path, format="PNG")
        else:
            raise ImageFormatError(f"unsupported output format {suffix!r} (use .png or .pgm)")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# ------------------------------------------------------------------ patches

def _grid(extent: int, side: int, stride: int) -> np.ndarray:
    starts = list(range(0, extent - side + 1, stride))
    if starts[-1] != extent - side:
        starts.append(extent - side)
    return np.asarray(starts, dtype=np.int64)


def patch_positions(shape: tuple[int, int], patch_side: int, stride: int) -> np.ndarray:
    """Raster-ordered top-left corners, with a final flush row/column at the border."""
    h, w = shape
    if patch_side > min(h, w):
        raise ValueError(f"patch side {patch_side} exceeds image size {w}x{h}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows, cols = _grid(h, patch_side, stride), _grid(w, patch_side, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def gather_patches(pixels: np.ndarray, positions: np.ndarray, patch_side: int) -> np.ndarray:
    """Column-major vectorized patches at ``positions`` as an ``(n, N)`` matrix."""
    s = patch_side
    windows = np.lib.stride_tricks.sliding_window_view(pixels, (s, s))
    block = windows[positions[:, 0], positions[:, 1]]  # (N, s, s)
    return np.ascontiguousarray(block.transpose(2, 1, 0).reshape(s * s, -1))


def extract_patches(image: Image, patch_side: int, stride: int) -> PatchSet:
    positions = patch_positions(image.shape, patch_side, stride)
    data = gather_patches(image.pixels, positions, patch_side)
    return PatchSet(patch_side, data, positions, stride, image.shape)


def overlap_average(data: np.ndarray, positions: np.ndarray, patch_side: int,
                    shape: tuple[int, int]) -> np.ndarray:
    """Average overlapping column-major patches onto a canvas (no clamping).

    All contributions are summed by one ``bincount`` pass in a fixed
    order, so the result does not depend on how the patches were produced.
    """
    h, w = shape
    s = patch_side
    if len(positions) and (positions.min() < 0 or positions[:, 0].max() + s > h
                           or positions[:, 1].max() + s > w):
        raise ValueError("patch position falls outside the output image")
    k = np.arange(s * s)
    # row k of a column-major patch sits at in-patch offset (k % s, k // s)
    off = (k % s) * w + k // s
    flat = off[:, None] + (positions[:, 0] * w + positions[:, 1])[None, :]
    acc = np.bincount(flat.ravel(), weights=np.asarray(data, dtype=np.float64).ravel(),
                      minlength=h * w).reshape(shape)
    hits = np.bincount(flat.ravel(), minlength=h * w).reshape(shape).astype(np.float64)
    if np.any(hits == 0):
        raise ValueError("stitching leaves uncovered pixels; extraction parameters are inconsistent")
    return acc / hits


def stitch_patches(patches: PatchSet, width: int, height: int) -> Image:
    pixels = overlap_average(patches.data, patches.positions, patches.patch_side, (height, width))
    return Image.clamped(pixels)


def patch_variance(patch) -> float:
    """Population variance of a patch vector."""
    p = np.asarray(patch, dtype=np.float64).ravel()
    if p.size < 2:
        raise ValueError("variance needs at least two samples")
    return float(np.var(p))
