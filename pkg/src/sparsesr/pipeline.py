"""Offline dictionary training and online multi-perspective super-resolution."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dictionary import (
    JointDictionary,
    LearnParams,
    TrainingDataError,
    assemble_training_set,
    ksvd,
    save_dictionary,
)
from .imaging import Image, gather_patches, load_image, overlap_average, patch_positions
from .parallel import single_threaded_blas
from .resample import interpolate_linear
from .sparse_coding import Dictionary, OMPResult, PursuitParams, batch_omp_codes, omp

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    """Parameters of the offline stage; defaults follow the desk-scale setup."""

    zoom_ratio: float = 2.5
    patch_side: int = 23
    stride: int = 5
    atom_count: int = 2048
    sample_count: int = 250_000
    k0: int | None = None
    epsilon: float = 0.0
    iterations: int = 40
    seed: int = 0
    noise_variance: tuple | float = 0.0

    @property
    def cardinality(self) -> int:
        return self.k0 if self.k0 is not None else self.patch_side // 2


@dataclass
class TrainReport:
    duos_kept: int = 0
    duos_dropped: int = 0
    samples_accepted: int = 0
    sample_attempts: int = 0
    objective: list = field(default_factory=list)
    replaced_atoms: list = field(default_factory=list)
    monotonicity_violations: int = 0
    seconds: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "duos_kept": self.duos_kept,
            "duos_dropped": self.duos_dropped,
            "samples_accepted": self.samples_accepted,
            "sample_attempts": self.sample_attempts,
            "ksvd_iterations": len(self.objective),
            "monotonicity_violations": self.monotonicity_violations,
        }
        for i, (obj, rep) in enumerate(zip(self.objective, self.replaced_atoms), start=1):
            out[f"objective.{i}"] = repr(obj)
            out[f"replaced_atoms.{i}"] = rep
        for k, v in self.seconds.items():
            out[f"seconds.{k}"] = f"{v:.3f}"
        return out


def train_dictionary(lr_images, hr_images, settings: TrainSettings,
                     threads: int | None = None) -> tuple[JointDictionary, TrainReport]:
    """Register duos, gather gated training samples and run joint K-SVD.

    ``lr_images[p][k]`` / ``hr_images[p][k]`` hold duo ``k`` of perspective ``p``.
    """
    if not lr_images or not len(lr_images[0]):
        raise TrainingDataError("no training duos given")
    P = len(lr_images)
    sigma2 = np.broadcast_to(np.asarray(settings.noise_variance, dtype=np.float64), (P,))
    report = TrainReport()
    t0 = time.perf_counter()
    training = assemble_training_set(lr_images, hr_images, settings.zoom_ratio, settings.patch_side,
                                     settings.sample_count, sigma2, rng_seed=settings.seed)
    t1 = time.perf_counter()
    report.duos_kept = training.duos_kept
    report.duos_dropped = training.duos_dropped
    report.samples_accepted = training.count
    report.sample_attempts = training.attempts
    params = LearnParams(settings.atom_count, settings.cardinality, settings.epsilon,
                         settings.iterations, settings.seed)
    result = ksvd(training.samples, params, threads=threads)
    t2 = time.perf_counter()
    report.objective = result.objective
    report.replaced_atoms = result.replaced_atoms
    report.monotonicity_violations = result.monotonicity_violations
    report.seconds = {"sampling": t1 - t0, "ksvd": t2 - t1}
    dictionary = JointDictionary.from_atoms(result.atoms, P, settings.patch_side, settings.zoom_ratio,
                                            settings.stride, sigma2)
    return dictionary, report


@dataclass
class TrainConfig:
    """File-based training job: ``lr_paths[p][k]`` pairs with ``hr_paths[p][k]``."""

    lr_paths: list
    hr_paths: list
    output: Path
    settings: TrainSettings = field(default_factory=TrainSettings)


def train_pipeline(config: TrainConfig, threads: int | None = None) -> TrainReport:
    """Run the whole offline stage and store the dictionary file."""
    if not config.lr_paths or not config.lr_paths[0]:
        raise TrainingDataError("no training duos given")
    if len(config.lr_paths) != len(config.hr_paths):
        raise TrainingDataError("LR and HR perspective counts differ")
    for lrs, hrs in zip(config.lr_paths, config.hr_paths):
        if len(lrs) != len(hrs):
            raise TrainingDataError("every LR image needs an HR twin")
        for path in list(lrs) + list(hrs):
            if not Path(path).is_file():
                raise FileNotFoundError(f"training image not found: {path}")
    Path(config.output).parent.mkdir(parents=True, exist_ok=True)
    lr = [[load_image(p) for p in seq] for seq in config.lr_paths]
    hr = [[load_image(p) for p in seq] for seq in config.hr_paths]
    dictionary, report = train_dictionary(lr, hr, config.settings, threads=threads)
    save_dictionary(dictionary, config.output)
    return report


# ------------------------------------------------------------------ online

@dataclass
class EnhanceRequest:
    lr_images: list
    dictionary: JointDictionary
    stride: int | None = None
    noise_variance: tuple | float | None = None
    k0: int | None = None
    epsilon: float = 0.3

    def pursuit(self) -> PursuitParams:
        k0 = self.k0 if self.k0 is not None else self.dictionary.patch_side // 2
        return PursuitParams(k0, self.epsilon)


@dataclass
class EnhanceResult:
    sr_images: list
    interpolated: list
    stats: dict
    timing: dict

    def report(self) -> dict:
        out = dict(self.stats)
        out.update({f"seconds.{k}": f"{v:.3f}" for k, v in self.timing.items()})
        return out


def lr_stack_normalized(dictionary: JointDictionary) -> tuple[np.ndarray, np.ndarray]:
    """Stacked LR sub-dictionaries with unit columns, plus the column scales."""
    Dl = dictionary.lr_stack()
    scales = np.linalg.norm(Dl, axis=0)
    if np.any(scales < 1e-12):
        raise ValueError("dictionary has atoms with no LR content")
    return Dl / scales, scales


def code_patch_stack(stack, dictionary: JointDictionary,
                     params: PursuitParams) -> tuple[OMPResult, np.ndarray]:
    """Code one concatenated LR patch stack; coefficients come back in atom scale.

    The returned coefficients apply directly to the HR sub-dictionaries.
    """
    y = np.asarray(stack, dtype=np.float64)
    if y.shape != (dictionary.n * dictionary.perspective_count,):
        raise ValueError("stack length must equal n * P")
    Dn, scales = lr_stack_normalized(dictionary)
    res = omp(Dictionary(Dn), y, params)
    res.coefficients = res.coefficients / scales[res.support]
    return res, scales


def interpolate_all(lr_images, R) -> list[np.ndarray]:
    return [np.clip(interpolate_linear(img.pixels, R), 0.0, 1.0) for img in lr_images]


def enhance(request: EnhanceRequest, threads: int | None = None) -> EnhanceResult:
    d = request.dictionary
    P = d.perspective_count
    lrs = list(request.lr_images)
    if len(lrs) != P:
        raise ValueError(f"dictionary expects {P} perspectives, got {len(lrs)}")
    if any(img.shape != lrs[0].shape for img in lrs):
        raise ValueError("LR perspectives must share dimensions")
    stride = request.stride if request.stride is not None else d.stride
    if stride != d.stride:
        log.warning("enhancing with stride %d while the dictionary was trained with %d",
                    stride, d.stride)
    sigma2 = d.noise_variance if request.noise_variance is None else request.noise_variance
    sigma2 = float(np.max(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (P,))))
    params = request.pursuit()
    s, n = d.patch_side, d.n
    timing = {}

    t = time.perf_counter()
    ups = interpolate_all(lrs, d.zoom_ratio)
    shape = ups[0].shape
    if s > min(shape):
        raise ValueError(f"patch side {s} exceeds the interpolated image size {shape}")
    timing["interpolate"] = time.perf_counter() - t

    t = time.perf_counter()
    positions = patch_positions(shape, s, stride)
    Y = np.concatenate([gather_patches(u, positions, s) for u in ups], axis=0)
    N = Y.shape[1]
    coded = np.flatnonzero(Y.var(axis=0) > sigma2)
    timing["extract"] = time.perf_counter() - t

    t = time.perf_counter()
    Dn, scales = lr_stack_normalized(d)
    codes = batch_omp_codes(Dn, Y[:, coded], params.k0, params.epsilon, threads=threads)
    sup = codes.support
    coefs = np.where(sup >= 0, codes.coefs / scales[np.maximum(sup, 0)], 0.0)
    timing["code"] = time.perf_counter() - t

    t = time.perf_counter()
    out_patches = []
    with single_threaded_blas():
        for p in range(P):
            block = Y[p * n:(p + 1) * n]
            hr = np.repeat(block.mean(axis=0, keepdims=True), n, axis=0)
            if coded.size:
                Dh = d.hr(p)
                acc = np.zeros((n, coded.size))
                for slot in range(sup.shape[1]):
                    acc += Dh[:, np.maximum(sup[:, slot], 0)] * coefs[:, slot]
                hr[:, coded] = acc
            out_patches.append(hr)
    timing["reconstruct"] = time.perf_counter() - t

    t = time.perf_counter()
    srs = [Image.clamped(overlap_average(hp, positions, s, shape)) for hp in out_patches]
    timing["stitch"] = time.perf_counter() - t

    rel = codes.residual_norm / np.where(codes.signal_norm > 0, codes.signal_norm, 1.0)
    stats = {
        "perspectives": P,
        "patches_total": N,
        "patches_coded": int(coded.size),
        "patches_gated": int(N - coded.size),
        "atoms_mean": float(codes.nnz.mean()) if coded.size else 0.0,
        "atoms_max": int(codes.nnz.max()) if coded.size else 0,
        "relative_residual_mean": float(rel.mean()) if coded.size else 0.0,
        "stride": stride,
        "k0": params.k0,
        "epsilon": params.epsilon,
        "gate_variance": sigma2,
        "lr_coefficient_rescaling": "applied",
    }
    return EnhanceResult(srs, [Image(u) for u in ups], stats, timing)


def format_report(items: dict) -> str:
    """Render a flat mapping as ``key=value`` lines."""
    return "".join(f"{k}={v}\n" for k, v in items.items())
