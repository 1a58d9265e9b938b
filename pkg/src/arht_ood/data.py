"""Synthetic benchmarks and a small IDX reader."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BadMagicError, DimensionOverflowError, TruncatedFileError

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803
_MAX_IDX_ELEMENTS = 2**31


@dataclass
class LabeledVectors:
    inputs: np.ndarray
    targets: np.ndarray
    ood_flags: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        m = self.inputs.shape[0]
        self.targets = np.asarray(self.targets)
        self.ood_flags = np.asarray(self.ood_flags, dtype=int)
        if self.targets.shape[0] != m or self.ood_flags.shape[0] != m:
            raise ValueError("inputs, targets and ood_flags must have equal length")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite entries")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class SyntheticSpec:
    """Two-Gaussian regression benchmark: ``N(mu, c I)`` vs ``N(-mu, c I)``.

    ``variance`` is the scalar ``c`` itself (not a standard deviation).
    """

    dim: int = 128
    mu: np.ndarray | float = 0.5
    variance: float = 9.0
    n_train: int = 500
    n_test_in: int = 500
    n_test_ood: int = 500
    seed: int = 0
    mean: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if min(self.n_train, self.n_test_in, self.n_test_ood) < 1:
            raise ValueError("counts must be >= 1")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        mean = np.broadcast_to(np.asarray(self.mu, dtype=float), (self.dim,)).copy()
        self.mean = mean


def norm_target(X) -> np.ndarray:
    return np.linalg.norm(np.asarray(X, dtype=float), axis=1)


def gen_table8(spec: SyntheticSpec) -> tuple[LabeledVectors, LabeledVectors]:
    """Train on ``N(mu, cI)``; test on an in-distribution / mirrored-mean mix.

    Targets are Euclidean norms of the inputs.  Test rows are ordered
    in-distribution first, then OOD.
    """
    train_rng, in_rng, ood_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)
    )
    sd = np.sqrt(spec.variance)
    X_train = spec.mean + sd * train_rng.standard_normal((spec.n_train, spec.dim))
    X_in = spec.mean + sd * in_rng.standard_normal((spec.n_test_in, spec.dim))
    X_ood = -spec.mean + sd * ood_rng.standard_normal((spec.n_test_ood, spec.dim))
    X_test = np.vstack([X_in, X_ood])
    flags = np.r_[np.zeros(spec.n_test_in, dtype=int), np.ones(spec.n_test_ood, dtype=int)]
    train = LabeledVectors(X_train, norm_target(X_train), np.zeros(spec.n_train, dtype=int))
    test = LabeledVectors(X_test, norm_target(X_test), flags)
    return train, test


def gen_null_pair(p: int, n1: int, n2: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Two independent i.i.d. ``N(0, I_p)`` samples of sizes ``n1`` and ``n2``.

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if min(p, n1, n2) < 2:
        raise ValueError("p, n1 and n2 must all be >= 2")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n1, p)), rng.standard_normal((n2, p))


# --------------------------------------------------------------------------
# CSV


def write_csv(data: LabeledVectors, path) -> Path:
    """One row per point: ``x_0 .. x_{d-1}, target, ood_flag``."""
    path = Path(path)
    d = data.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{j}" for j in range(d)] + ["target", "ood_flag"])
        for x, t, f in zip(data.inputs, data.targets, data.ood_flags):
            w.writerow([repr(float(v)) for v in x] + [repr(t.item()), int(f)])
    return path


def read_csv(path) -> LabeledVectors:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-2:] != ["target", "ood_flag"]:
        raise ValueError(f"{path}: last two columns must be target, ood_flag")
    arr = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    targets = arr[:, -2]
    if np.all(targets == np.round(targets)):
        targets = targets.astype(int)
    return LabeledVectors(arr[:, :-2], targets, arr[:, -1].astype(int))


# --------------------------------------------------------------------------
# IDX


def read_idx_array(path) -> np.ndarray:
    """Parse an unsigned-byte IDX tensor (labels ``0x801``, images ``0x803``)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_LABEL_MAGIC, IDX_IMAGE_MAGIC):
        raise BadMagicError(f"{path}: unsupported magic number 0x{magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    total = 1
    for d in dims:
        total *= d
        if total > _MAX_IDX_ELEMENTS:
            raise DimensionOverflowError(f"{path}: dimensions {dims} too large")
    if len(raw) < header_len + total:
        raise TruncatedFileError(
            f"{path}: expected {total} data bytes, found {len(raw) - header_len}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=total, offset=header_len).reshape(dims)


def write_idx(array, path) -> Path:
    """Write a 1-D (labels) or 3-D (images) uint8 array as IDX."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("IDX writer only supports uint8")
    magic = {1: IDX_LABEL_MAGIC, 3: IDX_IMAGE_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("only 1-D label or 3-D image arrays are supported")
    path = Path(path)
    path.write_bytes(
        struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    )
    return path


def read_idx(path, labels_path=None) -> LabeledVectors:
    """Read an IDX file into :class:`LabeledVectors`.

    Image files are flattened per item and scaled to ``[0, 1]``.  When
    ``labels_path`` is given its labels become the targets; a bare label
    file yields one-column inputs equal to the labels.
    """
    arr = read_idx_array(path)
    if arr.ndim == 1:
        labels = arr.astype(int)
        return LabeledVectors(labels[:, None].astype(float), labels, np.zeros(len(labels), dtype=int))
    X = arr.reshape(arr.shape[0], -1).astype(float) / 255.0
    if labels_path is not None:
        targets = read_idx_array(labels_path).astype(int)
        if targets.shape[0] != X.shape[0]:
            raise ValueError("image and label counts differ")
    else:
        targets = np.zeros(X.shape[0], dtype=int)
    return LabeledVectors(X, targets, np.zeros(X.shape[0], dtype=int))
