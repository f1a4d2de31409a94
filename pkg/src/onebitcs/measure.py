"""Gaussian measurement ensembles, the sign map and the two metrics.

Sign patterns are plain ``int8`` arrays over {-1, +1}.  ``sign(0)`` is taken
to be ``+1`` everywhere in the package; under Gaussian matrices the event has
probability zero, so the convention only matters for hand-built inputs.

Gaussian entries come from :func:`numpy.random.default_rng` (PCG64 bit
generator, ziggurat normal sampler).  A given ``(m, n, seed)`` reproduces the
same matrix bit-for-bit under a fixed numpy release.

Binary matrix file layout (all little-endian)::

    offset  size  field
    0       8     magic  b"OBCSMAT1"
    8       8     m      uint64
    16      8     n      uint64
    24      8     seed   uint64  (0xFFFFFFFFFFFFFFFF when unknown)
    32      8*m*n entries, float64, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "MeasurementEnsemble",
    "NoiseSpec",
    "gaussian_matrix",
    "sign",
    "sign_measure",
    "noisy_sign_measure",
    "hamming_dist",
    "geodesic_dist",
    "geodesic_dist_rows",
    "save_matrix",
    "load_matrix",
    "load_matrix_text",
    "UNIT_TOL",
]

UNIT_TOL = 1e-9
MAGIC = b"OBCSMAT1"
_HEADER = struct.Struct("<8sQQQ")
_NO_SEED = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True, eq=False)
class MeasurementEnsemble:
    """An ``m x n`` measurement matrix together with the seed that produced it."""

    entries: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise InvalidArgumentError(f"measurement matrix must be 2-D and non-empty, got shape {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


MatrixLike = Union[MeasurementEnsemble, np.ndarray]


def as_matrix(A: MatrixLike) -> np.ndarray:
    if isinstance(A, MeasurementEnsemble):
        return A.entries
    a = np.asarray(A, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise.

    ``kind`` is ``"none"``, ``"gaussian"`` (pre-quantization noise with std
    ``sigma``) or ``"sign_flip"`` (each bit negated with probability ``p``).
    """

    kind: str = "none"
    sigma: float = 0.0
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "sign_flip"):
            raise InvalidArgumentError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise InvalidArgumentError("sigma must be >= 0")
        if not 0 <= self.p <= 1:
            raise InvalidArgumentError("p must lie in [0, 1]")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def gaussian(cls, sigma: float, seed: int = 0) -> "NoiseSpec":
        return cls("gaussian", sigma=sigma, seed=seed)

    @classmethod
    def sign_flip(cls, p: float, seed: int = 0) -> "NoiseSpec":
        return cls("sign_flip", p=p, seed=seed)


def gaussian_matrix(m: int, n: int, seed: int) -> MeasurementEnsemble:
    """Draw an ``m x n`` matrix with i.i.d. standard normal entries."""
    if int(m) < 1 or int(n) < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    return MeasurementEnsemble(rng.standard_normal((int(m), int(n))), seed=int(seed))


def sign(v: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sign(0) = +1``, as ``int8``."""
    return np.where(np.asarray(v) >= 0, 1, -1).astype(np.int8)


def _check_signal(A: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (A.shape[1],):
        raise InvalidArgumentError(f"signal length {x.shape[-1:]} does not match matrix with {A.shape[1]} columns")
    return x


def sign_measure(A: MatrixLike, x) -> np.ndarray:
    """Quantized measurements ``sign(A x)``.

    ``x`` may also be a batch of shape ``(N, n)``; the result is then ``(N, m)``.
    """
    a = as_matrix(A)
    x = _check_signal(a, x)
    return sign(x @ a.T)


def noisy_sign_measure(A: MatrixLike, x, noise: NoiseSpec) -> np.ndarray:
    a = as_matrix(A)
    x = _check_signal(a, x)
    if noise.kind == "none":
        return sign_measure(a, x)
    rng = np.random.default_rng(noise.seed)
    ax = x @ a.T
    if noise.kind == "gaussian":
        return sign(ax + noise.sigma * rng.standard_normal(ax.shape))
    b = sign(ax)
    flips = rng.random(b.shape) < noise.p
    return np.where(flips, -b, b).astype(np.int8)


def hamming_dist(b1, b2) -> float:
    """Fraction of disagreeing positions; rowwise for 2-D input."""
    b1 = np.asarray(b1)
    b2 = np.asarray(b2)
    if b1.shape != b2.shape:
        raise InvalidArgumentError(f"sign patterns differ in shape: {b1.shape} vs {b2.shape}")
    diff = np.mean(b1 != b2, axis=-1)
    return float(diff) if np.ndim(diff) == 0 else diff


def _check_unit(v: np.ndarray, name: str):
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise InvalidArgumentError(f"{name} must be unit-norm (tolerance {UNIT_TOL})")


def _half_angle(diff, tot):
    # 2 atan2(|x - s|, |x + s|) equals arccos(<x, s>) for unit vectors but
    # keeps full relative precision near 0 and pi, where arccos loses digits
    return 2.0 * np.arctan2(diff, tot) / np.pi


def geodesic_dist(x, s) -> float:
    """Normalized angle ``arccos(<x, s>) / pi`` between unit vectors."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.shape != s.shape or x.ndim != 1:
        raise InvalidArgumentError(f"expected two vectors of equal length, got {x.shape} and {s.shape}")
    _check_unit(x, "x")
    _check_unit(s, "s")
    return float(_half_angle(np.linalg.norm(x - s), np.linalg.norm(x + s)))


def geodesic_dist_rows(X, S) -> np.ndarray:
    """Rowwise geodesic distance for two ``(N, n)`` batches of unit vectors."""
    X = np.asarray(X, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if X.shape != S.shape:
        raise InvalidArgumentError(f"batches differ in shape: {X.shape} vs {S.shape}")
    _check_unit(X, "x")
    _check_unit(S, "s")
    return _half_angle(np.linalg.norm(X - S, axis=1), np.linalg.norm(X + S, axis=1))


def save_matrix(A: MatrixLike, path) -> None:
    seed = A.seed if isinstance(A, MeasurementEnsemble) and A.seed is not None else _NO_SEED
    a = np.ascontiguousarray(as_matrix(A), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, a.shape[0], a.shape[1], seed & _NO_SEED))
        fh.write(a.tobytes(order="C"))


def load_matrix(path) -> MeasurementEnsemble:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidArgumentError(f"{path}: file too short for a matrix header")
    magic, m, n, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InvalidArgumentError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * m * n
    if len(raw) != expected:
        raise InvalidArgumentError(f"{path}: expected {expected} bytes, found {len(raw)}")
    a = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(m, n)
    return MeasurementEnsemble(a, seed=None if seed == _NO_SEED else int(seed))


def load_matrix_text(path) -> MeasurementEnsemble:
    """Whitespace-separated rows, one matrix row per line; ``#`` comments allowed."""
    return MeasurementEnsemble(np.loadtxt(path, dtype=np.float64, ndmin=2))
