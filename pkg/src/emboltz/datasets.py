"""Binary data sets: MNIST IDX ingestion, synthetic targets, persistence.

Data vectors are stored as (K, m) uint8 arrays of 0/1; the trainers cast
to float on entry. State-to-index encoding everywhere is little-endian
(bit i of the code is x_i), matching the enumeration oracle.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import init_random
from .exact import state_bits, visible_marginal_exact

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

ARTIFICIAL_VISIBLE = 13
ARTIFICIAL_HIDDEN = 7


@dataclass
class BinaryDataSet:
    """K binary vectors over the visible units, plus a provenance tag."""

    vectors: np.ndarray
    source: str = "file"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValueError("data set must be a nonempty (K, m) array")
        if not np.all((self.vectors == 0) | (self.vectors == 1)):
            raise ValueError("data entries must be 0 or 1")
        self.vectors = self.vectors.astype(np.uint8)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def m(self) -> int:
        return self.vectors.shape[1]

    def as_float(self) -> np.ndarray:
        return self.vectors.astype(np.float64)


# -- MNIST IDX --------------------------------------------------------------

def _read_be32(fh, what: str) -> int:
    data = fh.read(4)
    if len(data) != 4:
        raise ValueError(f"truncated IDX file while reading {what}")
    return struct.unpack(">I", data)[0]


def _open_idx(path):
    # .gz archives are accepted transparently (the usual distribution form)
    with open(path, "rb") as probe:
        gzipped = probe.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gzipped else open(path, "rb")


def load_idx_images(path) -> np.ndarray:
    """Raw (count, rows, cols) uint8 pixels from an IDX image file."""
    with _open_idx(path) as fh:
        magic = _read_be32(fh, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"bad IDX image magic 0x{magic:08x}")
        count = _read_be32(fh, "item count")
        rows = _read_be32(fh, "row count")
        cols = _read_be32(fh, "column count")
        payload = fh.read()
    if len(payload) != count * rows * cols:
        raise ValueError(f"IDX payload holds {len(payload)} bytes, "
                         f"header promises {count * rows * cols}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    with _open_idx(path) as fh:
        magic = _read_be32(fh, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"bad IDX label magic 0x{magic:08x}")
        count = _read_be32(fh, "item count")
        payload = fh.read()
    if len(payload) != count:
        raise ValueError("IDX label payload does not match header count")
    return np.frombuffer(payload, dtype=np.uint8)


def binarize(images: np.ndarray, threshold: int = 128, inclusive: bool = True) -> np.ndarray:
    """Pixel >= threshold maps to 1 (or > threshold when inclusive=False)."""
    if inclusive:
        return (images >= threshold).astype(np.uint8)
    return (images > threshold).astype(np.uint8)


def load_mnist_idx(images_path, labels_path=None, threshold: int = 128,
                   inclusive: bool = True, limit: int | None = None) -> BinaryDataSet:
    """Binarized, flattened MNIST-style images; labels parsed but unused."""
    images = load_idx_images(images_path)
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if labels.shape[0] != images.shape[0]:
            raise ValueError("image and label counts disagree")
    if limit is not None:
        images = images[:limit]
    flat = binarize(images, threshold, inclusive).reshape(images.shape[0], -1)
    return BinaryDataSet(flat, source="mnist")


# -- synthetic target -------------------------------------------------------

@dataclass
class TargetDistribution:
    """Known visible distribution the artificial experiments train against."""

    probs: np.ndarray
    m: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (1 << self.m,):
            raise ValueError(f"probs must have length 2^{self.m}")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("target probabilities must sum to 1 within 1e-12")

    def moments(self):
        from .exact import table_moments
        from .gradients import MomentVector

        first, pair = table_moments(self.probs, self.m, self.m)
        return MomentVector(first=first, pair=pair)


def make_artificial_target(seed: int, m: int = ARTIFICIAL_VISIBLE,
                           mode: str = "teacher") -> TargetDistribution:
    """Deterministic strictly-positive target distribution over 2^m states.

    mode="teacher" (default): the visible marginal of a random machine with
    a hidden layer, so the distribution carries pairwise structure a trained
    machine can actually approach. mode="iid" draws the 2^m probabilities as
    normalized Exponential(1) variates: featureless, useful as a stress case.
    """
    if mode == "teacher":
        teacher = init_random(m + ARTIFICIAL_HIDDEN, m, seed, scale=0.45)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        teacher.b[:] = rng.normal(0.0, 0.25, size=teacher.n)
        probs = visible_marginal_exact(teacher)
        meta = {"mode": "teacher", "seed": seed, "hidden": ARTIFICIAL_HIDDEN,
                "scale": 0.45, "bias_scale": 0.25}
    elif mode == "iid":
        rng = np.random.default_rng(seed)
        raw = rng.exponential(1.0, size=1 << m)
        probs = raw / raw.sum()
        meta = {"mode": "iid", "seed": seed}
    else:
        raise ValueError(f"unknown target mode {mode!r}")
    return TargetDistribution(probs=probs, m=m, meta=meta)


def sample_target(dist: TargetDistribution, count: int,
                  rng: np.random.Generator) -> BinaryDataSet:
    """count i.i.d. draws from the target by inverse CDF over the table."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cdf = np.cumsum(dist.probs)
    cdf[-1] = 1.0
    codes = np.searchsorted(cdf, rng.random(count), side="right")
    return BinaryDataSet(state_bits(codes, dist.m).astype(np.uint8), source="artificial")


# -- persistence ------------------------------------------------------------

def save_dataset(data: BinaryDataSet, path):
    with open(path, "w") as fh:
        fh.write(f"DS {data.count} {data.m}\n")
        for row in data.vectors:
            fh.write("".join("1" if v else "0" for v in row) + "\n")


def load_dataset(path) -> BinaryDataSet:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "DS":
            raise ValueError("bad data set header; expected 'DS <K> <m>'")
        count, m = int(header[1]), int(header[2])
        rows = np.empty((count, m), dtype=np.uint8)
        for k in range(count):
            line = fh.readline().strip()
            if len(line) != m:
                raise ValueError(f"data row {k} has {len(line)} entries, expected {m}")
            if set(line) - {"0", "1"}:
                raise ValueError(f"data row {k} holds non-binary characters")
            rows[k] = np.frombuffer(line.encode(), dtype=np.uint8) - ord("0")
        if fh.readline().strip():
            raise ValueError("trailing content after the promised rows")
    return BinaryDataSet(rows, source="file")


def save_target(dist: TargetDistribution, path):
    with open(path, "w") as fh:
        fh.write(f"TD {dist.m}\n")
        for p in dist.probs:
            fh.write(repr(float(p)) + "\n")


def load_target(path) -> TargetDistribution:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "TD":
            raise ValueError("bad target header; expected 'TD <m>'")
        m = int(header[1])
        probs = np.array([float(fh.readline()) for _ in range(1 << m)])
    return TargetDistribution(probs=probs, m=m, meta={"mode": "file"})


# -- batching ----------------------------------------------------------------

def batch_indices(count: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffled partition of range(count) into contiguous blocks.

    Every index appears in exactly one batch; the last batch may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(count)
    return [order[start:start + batch_size] for start in range(0, count, batch_size)]


def batches(X: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Row batches of an array under a fresh seeded shuffle."""
    X = np.asarray(X)
    return [X[idx] for idx in batch_indices(X.shape[0], batch_size, rng)]
