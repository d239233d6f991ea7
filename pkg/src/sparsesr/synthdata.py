"""Seeded generator of chip-like multi-perspective HR/LR image sets.

All randomness comes from numpy's Philox counter-based generator, keyed
by ``(seed, scene, stream)``. Gaussian noise is drawn by Box-Muller from
pairs of uniforms in a fixed order, so corpora are reproducible across
platforms and numpy versions that keep Philox stable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import Image, load_image, save_image
from .resample import as_zoom

BACKGROUND = 0.2
FEATURE = 0.8
EDGE_WEIGHT = 0.5
PERSPECTIVES = 3
_SUPERSAMPLE = 4


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    image_size: int = 512
    feature_scale: float = 8.0
    line_density: float = 3.0
    zoom_ratio: float = 2.5
    noise_sigma: float = 0.08
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.image_size < 1 or self.feature_scale <= 0:
            raise ValueError("image_size and feature_scale must be positive")
        if self.line_density < 0 or self.blur_sigma < 0:
            raise ValueError("line_density and blur_sigma must be non-negative")
        if not 0 <= self.noise_sigma < 0.5:
            raise ValueError("noise_sigma must lie in [0, 0.5)")
        if as_zoom(self.zoom_ratio) < 1:
            raise ValueError("zoom_ratio must be >= 1")

    @property
    def noise_variance(self) -> float:
        return float(self.noise_sigma) ** 2


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal draws from consecutive uniform pairs."""
    half = (size + 1) // 2
    u = rng.random(2 * half)
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
    return z[:size]


# ------------------------------------------------------------------ layout

def _rounded_rect_cover(yy, xx, y0, x0, y1, x1, radius):
    """Inside-test for an axis-aligned rectangle with rounded corners."""
    cy = np.clip(yy, y0 + radius, y1 - radius)
    cx = np.clip(xx, x0 + radius, x1 - radius)
    return (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1) & \
        ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2)


def _paint(canvas, shape_fn, y0, x0, y1, x1):
    """Accumulate supersampled coverage of one feature inside its bounding box."""
    size = canvas.shape[0]
    r0, r1 = max(int(np.floor(y0)) - 1, 0), min(int(np.ceil(y1)) + 1, size)
    c0, c1 = max(int(np.floor(x0)) - 1, 0), min(int(np.ceil(x1)) + 1, size)
    if r0 >= r1 or c0 >= c1:
        return
    off = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE
    ys = (np.arange(r0, r1)[:, None] + off[None, :]).ravel()
    xs = (np.arange(c0, c1)[:, None] + off[None, :]).ravel()
    inside = shape_fn(ys[:, None], xs[None, :])
    cover = inside.reshape(r1 - r0, _SUPERSAMPLE, c1 - c0, _SUPERSAMPLE).mean(axis=(1, 3))
    np.maximum(canvas[r0:r1, c0:c1], cover, out=canvas[r0:r1, c0:c1])


def generate_layout(params: SynthParams, scene: int = 0) -> Image:
    """Manhattan-style height map: lines, pads and vias at two height levels."""
    size = params.image_size
    fs = float(params.feature_scale)
    radius = fs / 4
    rng = _rng(params.seed, scene, 0)
    cover = np.zeros((size, size))
    n_lines = int(round(params.line_density * size / 100))
    n_blobs = int(round(params.line_density * size / 200))

    for _ in range(n_lines):
        horizontal = rng.random() < 0.5
        width = fs * rng.integers(1, 3)
        length = rng.uniform(size / 8, size / 2)
        a = rng.uniform(-width, size)
        b = rng.uniform(-length / 2, size - length / 2)
        y0, x0, y1, x1 = (a, b, a + width, b + length) if horizontal else (b, a, b + length, a + width)
        _paint(cover, lambda yy, xx, r=(y0, x0, y1, x1): _rounded_rect_cover(yy, xx, *r, radius),
               y0, x0, y1, x1)
    for _ in range(n_blobs):
        side = fs * rng.uniform(2, 4)
        y0, x0 = rng.uniform(-side / 2, size - side / 2, size=2)
        _paint(cover, lambda yy, xx, r=(y0, x0, y0 + side, x0 + side): _rounded_rect_cover(yy, xx, *r, radius),
               y0, x0, y0 + side, x0 + side)
    for _ in range(n_blobs):
        rv = fs * rng.uniform(0.5, 1.0)
        cy, cx = rng.uniform(0, size, size=2)
        _paint(cover, lambda yy, xx, c=(cy, cx, rv): (yy - c[0]) ** 2 + (xx - c[1]) ** 2 <= c[2] ** 2,
               cy - rv, cx - rv, cy + rv, cx + rv)
    return Image(BACKGROUND + (FEATURE - BACKGROUND) * cover)


def render_perspectives(height_map: Image) -> list[Image]:
    """Left, right and top views via directional edge shading."""
    h = height_map.pixels
    gy, gx = np.gradient(h)
    left = h + EDGE_WEIGHT * np.maximum(gx, 0.0)
    right = h + EDGE_WEIGHT * np.maximum(-gx, 0.0)
    top = h + EDGE_WEIGHT * np.hypot(gx, gy)
    return [Image.clamped(v) for v in (left, right, top)]


# ------------------------------------------------------------- degradation

def area_matrix(n_in: int, R) -> np.ndarray:
    """Box-average weights onto ``floor(n_in / R)`` LR samples.

    LR sample ``i`` sits at HR coordinate ``i * R`` (the convention used by
    the cubic interpolator) and averages the HR pixels overlapping
    ``[i*R - R/2, i*R + R/2]``, truncated at the image border.
    """
    R = as_zoom(R)
    n_out = int(n_in / R)
    lo_edges = np.arange(n_in) - 0.5
    hi_edges = lo_edges + 1.0
    W = np.zeros((n_out, n_in))
    r = float(R)
    for i in range(n_out):
        a, b = i * r - r / 2, i * r + r / 2
        W[i] = np.clip(np.minimum(hi_edges, b) - np.maximum(lo_edges, a), 0.0, None)
    W /= W.sum(axis=1, keepdims=True)
    return W


def degrade(hr: Image, params: SynthParams, scene: int = 0, stream: int = 0) -> Image:
    """Blur, area-downsample by the zoom ratio, add Gaussian noise, clamp."""
    px = hr.pixels
    if params.blur_sigma > 0:
        px = gaussian_filter(px, params.blur_sigma, mode="nearest")
    Wr = area_matrix(px.shape[0], params.zoom_ratio)
    Wc = Wr if px.shape[1] == px.shape[0] else area_matrix(px.shape[1], params.zoom_ratio)
    lr = Wr @ px @ Wc.T
    if params.noise_sigma > 0:
        z = box_muller(_rng(params.seed, scene, 1 + stream), lr.size)
        lr = lr + params.noise_sigma * z.reshape(lr.shape)
    return Image.clamped(lr)


@dataclass
class Scene:
    hr: list
    lr: list
    noise_variance: float


def make_scene(params: SynthParams, scene: int = 0) -> Scene:
    views = render_perspectives(generate_layout(params, scene))
    lrs = [degrade(v, params, scene, p) for p, v in enumerate(views)]
    return Scene(views, lrs, params.noise_variance)


# ------------------------------------------------------------------ corpus

def write_scene(directory, scene: Scene, params: SynthParams, index: int) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for p, img in enumerate(scene.hr, start=1):
        save_image(img, d / f"hr_p{p}.png")
    for p, img in enumerate(scene.lr, start=1):
        save_image(img, d / f"lr_p{p}.png")
    meta = dict(asdict(params), scene=index, perspectives=len(scene.hr),
                noise_variance=repr(scene.noise_variance))
    (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return d


def write_corpus(directory, params: SynthParams, count: int) -> list[Path]:
    """Write ``count`` scenes as ``scene_000/``, ``scene_001/``, ..."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    return [write_scene(root / f"scene_{i:03d}", make_scene(params, i), params, i)
            for i in range(count)]


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#") and "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def read_scene(directory) -> Scene:
    d = Path(directory)
    meta = read_meta(d / "meta.txt")
    P = int(meta.get("perspectives", PERSPECTIVES))
    hr = [load_image(d / f"hr_p{p}.png") for p in range(1, P + 1)]
    lr = [load_image(d / f"lr_p{p}.png") for p in range(1, P + 1)]
    return Scene(hr, lr, float(meta["noise_variance"]))
