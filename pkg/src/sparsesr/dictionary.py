"""Training-set assembly, joint multi-perspective K-SVD and the dictionary file format."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import crcmod
import numpy as np
from scipy.linalg import eigh

from .imaging import Image, gather_patches
from .parallel import single_threaded_blas
from .resample import DELTA_MAX, RegistrationError, as_zoom, interpolate_to_hr, register, shift_image
from .sparse_coding import BatchCodes, batch_omp_codes

log = logging.getLogger(__name__)

MAGIC = b"SRDICT01"
FORMAT_VERSION = 1
GATE_FACTOR = 3.0
ATTEMPT_FACTOR = 100
DUPLICATE_COHERENCE = 0.999

# CRC-64/XZ (ECMA-182 polynomial, reflected)
_crc64 = crcmod.mkCrcFun(0x142F0E1EBA9EA3693, initCrc=0, rev=True, xorOut=0xFFFFFFFFFFFFFFFF)


class DictionaryFormatError(ValueError):
    """Dictionary file is malformed."""


class ChecksumError(DictionaryFormatError):
    pass


class VersionMismatchError(DictionaryFormatError):
    pass


class TrainingDataError(ValueError):
    """Training inputs cannot produce a usable training set."""


class InsufficientSamplesError(TrainingDataError):
    """Sampling budget ran out before enough patches passed the variance gate."""

    def __init__(self, accepted: int, target: int, attempts: int):
        super().__init__(f"only {accepted} of {target} training samples passed the variance "
                         f"gate after {attempts} attempts (blank or degenerate inputs?)")
        self.accepted = accepted
        self.target = target
        self.attempts = attempts


# ------------------------------------------------------------------- types

@dataclass(frozen=True)
class TrainingSet:
    """Concatenated LR/HR patch columns for all perspectives.

    Rows are ordered perspective 1 LR, perspective 1 HR, perspective 2 LR,
    and so on, each block ``n`` entries long.
    """

    samples: np.ndarray
    n: int
    perspective_count: int
    noise_variance: tuple[float, ...]
    duos_kept: int = 0
    duos_dropped: int = 0
    attempts: int = 0

    def __post_init__(self):
        if self.samples.shape[0] != 2 * self.n * self.perspective_count:
            raise ValueError("sample rows do not match 2 * n * P")

    @property
    def count(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class LearnParams:
    atom_count: int
    k0: int
    epsilon: float = 0.0
    iterations: int = 40
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.atom_count < 1 or self.k0 < 1:
            raise ValueError("atom_count and k0 must be >= 1")


@dataclass(frozen=True)
class JointDictionary:
    """Paired LR/HR sub-dictionaries sharing one coefficient index space.

    ``blocks`` has shape ``(P, 2, n, N_D)`` with index 0 the LR and index 1
    the HR sub-dictionary of each perspective.
    """

    blocks: np.ndarray
    patch_side: int
    zoom_ratio: Fraction
    stride: int
    noise_variance: tuple[float, ...]

    def __post_init__(self):
        b = np.array(self.blocks, dtype=np.float64, copy=True)
        n = self.patch_side ** 2
        if b.ndim != 4 or b.shape[1] != 2 or b.shape[2] != n:
            raise ValueError(f"blocks must have shape (P, 2, {n}, N_D), got {b.shape}")
        if len(self.noise_variance) != b.shape[0]:
            raise ValueError("one noise variance per perspective is required")
        if not np.all(np.isfinite(b)):
            raise ValueError("dictionary contains non-finite entries")
        norms = np.linalg.norm(b.reshape(-1, b.shape[3]), axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise ValueError("concatenated dictionary atoms must have unit norm")
        b.flags.writeable = False
        object.__setattr__(self, "blocks", b)
        object.__setattr__(self, "zoom_ratio", as_zoom(self.zoom_ratio))
        object.__setattr__(self, "noise_variance", tuple(float(v) for v in self.noise_variance))

    @classmethod
    def from_atoms(cls, atoms: np.ndarray, perspective_count: int, patch_side: int,
                   zoom_ratio, stride: int, noise_variance) -> "JointDictionary":
        n = patch_side ** 2
        blocks = atoms.reshape(perspective_count, 2, n, atoms.shape[1])
        return cls(blocks, patch_side, zoom_ratio, stride, tuple(noise_variance))

    @property
    def perspective_count(self) -> int:
        return self.blocks.shape[0]

    @property
    def atom_count(self) -> int:
        return self.blocks.shape[3]

    @property
    def n(self) -> int:
        return self.blocks.shape[2]

    def lr(self, p: int) -> np.ndarray:
        return self.blocks[p, 0]

    def hr(self, p: int) -> np.ndarray:
        return self.blocks[p, 1]

    def concatenated(self) -> np.ndarray:
        return self.blocks.reshape(-1, self.atom_count)

    def lr_stack(self) -> np.ndarray:
        return self.blocks[:, 0].reshape(-1, self.atom_count)

    def hr_stack(self) -> np.ndarray:
        return self.blocks[:, 1].reshape(-1, self.atom_count)

    def __eq__(self, other):
        if not isinstance(other, JointDictionary):
            return NotImplemented
        return (self.patch_side == other.patch_side and self.zoom_ratio == other.zoom_ratio
                and self.stride == other.stride and self.noise_variance == other.noise_variance
                and self.blocks.shape == other.blocks.shape
                and self.blocks.tobytes() == other.blocks.tobytes())

    __hash__ = None


# -------------------------------------------------------- training samples

def _register_duo(lr: Image, hr: Image, R) -> np.ndarray:
    """Interpolate an LR image onto its HR twin's grid and align it."""
    up = interpolate_to_hr(lr, R)
    h = min(up.height, hr.height)
    w = min(up.width, hr.width)
    up = Image(up.pixels[:h, :w])
    ref = Image(hr.pixels[:h, :w])
    shift = register(up, ref, DELTA_MAX)
    return shift_image(up, shift).pixels


def assemble_training_set(lr_images, hr_images, R, patch_side: int, target_count: int,
                          noise_variance, rng_seed: int = 0) -> TrainingSet:
    """Draw variance-gated LR/HR patch pairs from registered image duos.

    ``lr_images[p][k]`` and ``hr_images[p][k]`` are duo ``k`` seen from
    perspective ``p``. A duo whose registration fails in any perspective
    is dropped. Candidate positions are drawn uniformly and shared by every
    perspective and resolution; a candidate is kept when the variance of
    the concatenated column is at least 3x the largest noise variance.
    """
    P = len(lr_images)
    if P == 0 or len(hr_images) != P:
        raise ValueError("need matching per-perspective LR and HR image lists")
    K = len(lr_images[0])
    if K == 0:
        raise ValueError("no training duos given")
    if any(len(seq) != K for seq in list(lr_images) + list(hr_images)):
        raise ValueError("every perspective must list the same number of duos")
    sigma2 = np.broadcast_to(np.asarray(noise_variance, dtype=np.float64), (P,))
    threshold = GATE_FACTOR * float(sigma2.max())
    s = patch_side
    n = s * s

    scenes = []
    dropped = 0
    for k in range(K):
        try:
            pair = []
            for p in range(P):
                lr_up = _register_duo(lr_images[p][k], hr_images[p][k], R)
                hr = hr_images[p][k].pixels[:lr_up.shape[0], :lr_up.shape[1]]
                pair.append((lr_up, hr))
        except RegistrationError as exc:
            log.warning("duo %d omitted: %s", k, exc)
            dropped += 1
            continue
        h = min(a.shape[0] for a, _ in pair)
        w = min(a.shape[1] for a, _ in pair)
        if h < s or w < s:
            raise ValueError(f"duo {k} is smaller than the patch size")
        scenes.append([(a[:h, :w], b[:h, :w]) for a, b in pair])
    if not scenes:
        raise TrainingDataError("no training duo survived registration")

    rng = np.random.Generator(np.random.Philox(rng_seed))
    budget = ATTEMPT_FACTOR * target_count
    accepted: list[np.ndarray] = []
    n_accepted = 0
    attempts = 0
    while n_accepted < target_count and attempts < budget:
        batch = min(budget - attempts, max(1024, 2 * (target_count - n_accepted)))
        scene_idx = rng.integers(0, len(scenes), size=batch)
        cand = np.empty((2 * n * P, batch))
        for si, scene in enumerate(scenes):
            sel = np.flatnonzero(scene_idx == si)
            if sel.size == 0:
                continue
            h, w = scene[0][0].shape
            # positions are drawn per scene so image sizes may differ between duos
            pos = np.stack([rng.integers(0, h - s + 1, size=sel.size),
                            rng.integers(0, w - s + 1, size=sel.size)], axis=1)
            for p, (lr_up, hr) in enumerate(scene):
                cand[2 * p * n:(2 * p + 1) * n, sel] = gather_patches(lr_up, pos, s)
                cand[(2 * p + 1) * n:(2 * p + 2) * n, sel] = gather_patches(hr, pos, s)
        keep = np.flatnonzero(cand.var(axis=0) >= threshold)
        take = keep[:target_count - n_accepted]
        if take.size:
            accepted.append(cand[:, take])
            n_accepted += take.size
        # attempts consumed up to the last accepted candidate in this batch
        attempts += batch if n_accepted < target_count else int(take[-1]) + 1
    if n_accepted < target_count:
        raise InsufficientSamplesError(n_accepted, target_count, attempts)
    samples = np.concatenate(accepted, axis=1)
    return TrainingSet(samples, n, P, tuple(float(v) for v in sigma2),
                       duos_kept=len(scenes), duos_dropped=dropped, attempts=attempts)


# ------------------------------------------------------------------- K-SVD

@dataclass
class KSVDResult:
    atoms: np.ndarray
    codes: BatchCodes
    objective: list = field(default_factory=list)  # after each sweep
    coding_objective: list = field(default_factory=list)  # after each coding stage
    replaced_atoms: list = field(default_factory=list)
    duplicate_atoms: list = field(default_factory=list)
    monotonicity_violations: int = 0


def _code_products(D: np.ndarray, sup: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    """``D @ X`` for padded per-column supports; padded slots carry zero weight."""
    idx = np.where(sup >= 0, sup, 0)
    w = np.where(sup >= 0, coefs, 0.0)
    out = np.zeros((D.shape[0], sup.shape[0]))
    for slot in range(sup.shape[1]):
        out += D[:, idx[:, slot]] * w[:, slot]
    return out


def _column_errors(T, D, sup, coefs) -> np.ndarray:
    R = T - _code_products(D, sup, coefs)
    return np.einsum("ij,ij->j", R, R)


def _dominant_pair(E: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Unit left singular vector of the largest singular value of ``E``."""
    m, k = E.shape
    if k <= m:
        C = E.T @ E
        _, vec = eigh(C, subset_by_index=[k - 1, k - 1])
        u = E @ vec[:, 0]
    else:
        C = E @ E.T
        _, vec = eigh(C, subset_by_index=[m - 1, m - 1])
        u = vec[:, 0]
    norm = np.linalg.norm(u)
    if norm == 0.0:
        return previous
    u = u / norm
    return -u if u @ previous < 0 else u


def ksvd(T: np.ndarray, params: LearnParams, threads: int | None = None) -> KSVDResult:
    """Learn a unit-norm dictionary for the columns of ``T``.

    Each sweep sparse-codes every column with Batch-OMP, keeping a column's
    previous code when the fresh one represents it worse, then refits the
    atoms in ascending order by the dominant singular pair of their
    restricted residual. Atoms without users are re-seeded from the worst
    represented training column. Both stages can only lower
    ``||T - DX||_F^2``.
    """
    T = np.asarray(T, dtype=np.float64)
    if not np.all(np.isfinite(T)):
        raise ValueError("training data contains non-finite values")
    M, N = T.shape
    N_D = params.atom_count
    if N < N_D:
        raise ValueError(f"need at least {N_D} training columns, got {N}")
    rng = np.random.Generator(np.random.Philox(params.rng_seed))
    init = rng.choice(N, size=N_D, replace=False)
    D = T[:, init].copy()
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise ValueError("initial atoms drawn from all-zero training columns")
    D /= norms
    result = KSVDResult(D, None)
    sup = coefs = err = None

    with single_threaded_blas():
        for it in range(params.iterations):
            codes = batch_omp_codes(D, T, params.k0, params.epsilon, gram=D.T @ D, threads=threads)
            if sup is None:
                sup, coefs = codes.support.copy(), codes.coefs.copy()
                err = _column_errors(T, D, sup, coefs)
            else:
                better = _column_errors(T, D, codes.support, codes.coefs) < err
                sup[better] = codes.support[better]
                coefs[better] = codes.coefs[better]
                err = _column_errors(T, D, sup, coefs)
            result.coding_objective.append(float(err.sum()))

            cols_all, slots_all = np.nonzero(sup >= 0)
            atoms_all = sup[cols_all, slots_all]
            order = np.argsort(atoms_all, kind="stable")
            cols_all, slots_all, atoms_all = cols_all[order], slots_all[order], atoms_all[order]
            starts = np.searchsorted(atoms_all, np.arange(N_D + 1))

            replaced = duplicates = 0
            reseeded = np.zeros(N, dtype=bool)
            for j in range(N_D):
                cols = cols_all[starts[j]:starts[j + 1]]
                slots = slots_all[starts[j]:starts[j + 1]]
                x = coefs[cols, slots]
                if cols.size == 0 or not np.any(x):
                    cand = np.where(reseeded, -np.inf, err)
                    worst = int(np.argmax(cand))
                    reseeded[worst] = True
                    col = T[:, worst]
                    cnorm = np.linalg.norm(col)
                    if cnorm > 0:
                        D[:, j] = col / cnorm
                        coefs[cols, slots] = 0.0
                        replaced += 1
                    continue
                E = T[:, cols] - _code_products(D, sup[cols], coefs[cols]) + np.outer(D[:, j], x)
                u = _dominant_pair(E, D[:, j])
                D[:, j] = u
                g = u @ E
                coefs[cols, slots] = g
                resid = E - np.outer(u, g)
                err[cols] = np.einsum("ij,ij->j", resid, resid)
                coh = np.abs(D.T @ u)
                coh[j] = 0.0
                if coh.max() > DUPLICATE_COHERENCE:
                    duplicates += 1

            err = _column_errors(T, D, sup, coefs)
            obj = float(err.sum())
            if result.objective and obj > result.objective[-1] * (1 + 1e-9):
                result.monotonicity_violations += 1
                log.warning("K-SVD objective rose at sweep %d: %.12g -> %.12g",
                            it, result.objective[-1], obj)
            result.objective.append(obj)
            result.replaced_atoms.append(replaced)
            result.duplicate_atoms.append(duplicates)
            log.info("K-SVD sweep %d/%d objective=%.6g replaced=%d", it + 1,
                     params.iterations, obj, replaced)

    nnz = (sup >= 0).sum(axis=1)
    result.atoms = D
    result.codes = BatchCodes(sup, coefs, nnz, np.sqrt(err), np.linalg.norm(T, axis=0))
    return result


def ksvd_train(training: TrainingSet, params: LearnParams, patch_side: int | None = None,
               zoom_ratio=2, stride: int = 5, threads: int | None = None) -> JointDictionary:
    """Learn the joint dictionary and split it into per-perspective LR/HR blocks."""
    side = patch_side or int(round(np.sqrt(training.n)))
    if side * side != training.n:
        raise ValueError("training patch length is not a perfect square")
    result = ksvd(training.samples, params, threads=threads)
    return JointDictionary.from_atoms(result.atoms, training.perspective_count, side,
                                      zoom_ratio, stride, training.noise_variance)


# ---------------------------------------------------------------- file I/O

_HEADER = struct.Struct("<8sIIIIIII")


def dictionary_to_bytes(d: JointDictionary) -> bytes:
    z = d.zoom_ratio
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, d.perspective_count, d.patch_side, d.atom_count,
                        z.numerator, z.denominator, d.stride)
    sig = struct.pack(f"<{d.perspective_count}d", *d.noise_variance)
    body = b"".join(
        np.asarray(d.blocks[p, r], dtype="<f8").tobytes(order="F")
        for p in range(d.perspective_count) for r in (0, 1)
    )
    payload = head + sig + body
    return payload + struct.pack("<Q", _crc64(payload))


def dictionary_from_bytes(raw: bytes) -> JointDictionary:
    if len(raw) < _HEADER.size:
        raise DictionaryFormatError("file too short for a dictionary header")
    magic, version, P, side, N_D, num, den, stride = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DictionaryFormatError("not a dictionary file (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported dictionary version {version} "
                                   f"(expected {FORMAT_VERSION})")
    if len(raw) < 8 + _HEADER.size or _crc64(raw[:-8]) != struct.unpack("<Q", raw[-8:])[0]:
        raise ChecksumError("dictionary checksum mismatch (truncated or corrupt file)")
    n = side * side
    expected = _HEADER.size + 8 * P + 2 * P * n * N_D * 8 + 8
    if len(raw) != expected or P < 1 or den == 0:
        raise DictionaryFormatError("dictionary size fields disagree with file length")
    off = _HEADER.size
    sigma2 = struct.unpack_from(f"<{P}d", raw, off)
    off += 8 * P
    data = np.frombuffer(raw, dtype="<f8", count=2 * P * n * N_D, offset=off)
    blocks = data.reshape(P, 2, N_D, n).transpose(0, 1, 3, 2)
    return JointDictionary(blocks.astype(np.float64), side, Fraction(num, den), stride, sigma2)


def save_dictionary(d: JointDictionary, path) -> None:
    Path(path).write_bytes(dictionary_to_bytes(d))


def load_dictionary(path) -> JointDictionary:
    return dictionary_from_bytes(Path(path).read_bytes())
