"""PSNR, line cuts, 1-D spectra, histograms and spectral extrapolation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import Image
from .resample import as_zoom

HIST_BINS = 512


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def psnr(a, b) -> float:
    """Unit-peak PSNR in dB; ``math.inf`` for identical images."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def common_crop(*images) -> list[np.ndarray]:
    """Crop every image to the shared top-left region."""
    arrs = [_pixels(x) for x in images]
    h = min(a.shape[0] for a in arrs)
    w = min(a.shape[1] for a in arrs)
    return [a[:h, :w] for a in arrs]


def line_cut(image, row: int, col_range: tuple[int, int] | None = None) -> np.ndarray:
    """Pixel values of ``row`` over the half-open column range."""
    px = _pixels(image)
    h, w = px.shape
    start, stop = (0, w) if col_range is None else col_range
    if not 0 <= row < h or not 0 <= start < stop <= w:
        raise IndexError(f"cut row={row} cols=[{start}, {stop}) outside {w}x{h} image")
    return px[row, start:stop].copy()


def cut_spectrum(cut, remove_mean: bool = True) -> np.ndarray:
    """DFT magnitudes for frequency bins ``0 .. len // 2``."""
    c = np.asarray(cut, dtype=np.float64)
    if c.size < 2:
        raise ValueError("a spectrum needs at least two samples")
    if remove_mean:
        c = c - c.mean()
    return np.abs(np.fft.rfft(c))


def cutoff_index(length: int, R) -> int:
    """Highest frequency bin an image zoomed by ``R`` can carry."""
    return int((length // 2) / as_zoom(R))


def extrapolation_fraction(sr_spectrum, hr_spectrum, cutoff: int) -> float:
    """Above-cutoff spectral energy of SR relative to HR; NaN when HR has none."""
    sr = np.asarray(sr_spectrum, dtype=np.float64)
    hr = np.asarray(hr_spectrum, dtype=np.float64)
    if sr.shape != hr.shape:
        raise ValueError("spectra must have equal length")
    hr_energy = float(np.sum(hr[cutoff + 1:] ** 2))
    if hr_energy == 0.0:
        return math.nan
    return max(0.0, float(np.sum(sr[cutoff + 1:] ** 2)) / hr_energy)


def row_spectra(image) -> np.ndarray:
    """Mean-removed row spectra of a whole image, one row per image row."""
    px = _pixels(image)
    px = px - px.mean(axis=1, keepdims=True)
    return np.abs(np.fft.rfft(px, axis=1))


def high_band_energy(image, R) -> float:
    """Row-spectrum energy above the LR cutoff, summed over all rows."""
    spec = row_spectra(image)
    c = cutoff_index(_pixels(image).shape[1], R)
    return float(np.sum(spec[:, c + 1:] ** 2))


def image_extrapolation_fraction(sr, hr, R) -> float:
    """Extrapolation fraction pooled over every row of the image pair."""
    sr, hr = common_crop(sr, hr)
    c = cutoff_index(sr.shape[1], R)
    return extrapolation_fraction(
        np.sqrt(np.sum(row_spectra(sr) ** 2, axis=0)),
        np.sqrt(np.sum(row_spectra(hr) ** 2, axis=0)),
        c,
    )


def histogram(image, bins: int = HIST_BINS) -> np.ndarray:
    """Counts over uniform bins on [0, 1]; the last bin is closed on the right."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    px = np.clip(_pixels(image), 0.0, 1.0)
    counts, _ = np.histogram(px, bins=bins, range=(0.0, 1.0))
    return counts


def histogram_distance(a, b, bins: int = HIST_BINS) -> float:
    """Earth mover's distance between gray-level histograms, in gray-level units."""
    ca = np.cumsum(histogram(a, bins)) / _pixels(a).size
    cb = np.cumsum(histogram(b, bins)) / _pixels(b).size
    return float(np.abs(ca - cb).sum()) / bins


@dataclass
class EvalReport:
    psnr_sr_vs_hr: list = field(default_factory=list)
    psnr_lr_vs_hr: list = field(default_factory=list)
    extrapolation_fraction: list = field(default_factory=list)
    histogram_distance: list = field(default_factory=list)

    @property
    def improvement(self) -> list:
        return [s - l for s, l in zip(self.psnr_sr_vs_hr, self.psnr_lr_vs_hr)]

    def as_dict(self) -> dict:
        out = {}
        for p, (s, l, imp, fr, hd) in enumerate(zip(self.psnr_sr_vs_hr, self.psnr_lr_vs_hr, self.improvement,
                                                    self.extrapolation_fraction, self.histogram_distance), 1):
            out[f"p{p}.psnr_sr_vs_hr"] = format_db(s)
            out[f"p{p}.psnr_lr_vs_hr"] = format_db(l)
            out[f"p{p}.improvement"] = format_db(imp) if not math.isnan(imp) else "nan"
            out[f"p{p}.extrapolation_fraction"] = f"{fr:.4f}"
            out[f"p{p}.histogram_distance"] = f"{hd:.4f}"
        return out


def evaluate(sr_images, lr_images, hr_images, R) -> EvalReport:
    """Score SR and interpolated-LR images against HR references.

    ``lr_images`` must already sit on the HR grid. Each triple is cropped
    to its common region before comparison.
    """
    rep = EvalReport()
    for sr, lr, hr in zip(sr_images, lr_images, hr_images):
        sr_c, lr_c, hr_c = common_crop(sr, lr, hr)
        rep.psnr_sr_vs_hr.append(psnr(sr_c, hr_c))
        rep.psnr_lr_vs_hr.append(psnr(lr_c, hr_c))
        rep.extrapolation_fraction.append(image_extrapolation_fraction(sr_c, hr_c, R))
        rep.histogram_distance.append(histogram_distance(sr_c, hr_c))
    return rep


def summarize(reports: list[EvalReport]) -> dict:
    """Per-perspective mean and sample standard deviation over a batch."""
    out = {"images": len(reports)}
    if not reports:
        return out
    P = len(reports[0].psnr_sr_vs_hr)
    for p in range(P):
        for name in ("psnr_sr_vs_hr", "psnr_lr_vs_hr", "improvement", "extrapolation_fraction"):
            vals = np.array([getattr(r, name)[p] for r in reports], dtype=np.float64)
            out[f"p{p + 1}.{name}.mean"] = f"{vals.mean():.4f}"
            out[f"p{p + 1}.{name}.std"] = f"{vals.std(ddof=1) if vals.size > 1 else 0.0:.4f}"
    return out
