"""Synthetic benchmark datasets, the Pearson metric, and dataset files.

Two tasks ship with the package: determinants of random square matrices
(4x4 or 5x5 entries as inputs, the determinant as the single output)
and face areas of random tetrahedra (12 vertex coordinates in, the 4
triangular face areas out).  Generation is seeded and reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"KAND"
DATASET_FORMAT_VERSION = 1

#: Face ``i`` of a tetrahedron is the triangle opposite vertex ``i``
#: (its corners listed in ascending vertex order).
TETRA_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

DEFAULT_INPUT_RANGE = (0.0, 1.0)


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""


class UndefinedCorrelationError(ValueError):
    """Pearson correlation is undefined for a constant vector."""


@dataclass
class Dataset:
    """Flat record store: each row is one input vector and one target vector."""

    input_dim: int
    output_dim: int
    records: np.ndarray

    def __post_init__(self):
        self.records = np.ascontiguousarray(self.records, dtype=np.float64)
        if self.records.ndim != 2 or self.records.shape[0] < 1:
            raise ValueError("records must be a non-empty 2-d array")
        if self.records.shape[1] != self.input_dim + self.output_dim:
            raise ValueError(
                f"records have {self.records.shape[1]} columns, expected "
                f"{self.input_dim} inputs + {self.output_dim} outputs"
            )
        if not np.isfinite(self.records).all():
            raise ValueError("records contain non-finite values")

    @property
    def record_count(self) -> int:
        return self.records.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        return self.records[:, :self.input_dim]

    @property
    def targets(self) -> np.ndarray:
        return self.records[:, self.input_dim:]

    def input_range(self) -> tuple[float, float]:
        return float(self.inputs.min()), float(self.inputs.max())

    def target_range(self, margin: float = 0.05) -> tuple[float, float]:
        """Empirical target min/max, widened by ``margin`` of the span."""
        lo, hi = float(self.targets.min()), float(self.targets.max())
        pad = margin * (hi - lo)
        return lo - pad, hi + pad


def determinants(mats: np.ndarray) -> np.ndarray:
    """Determinants of a stack of square matrices.

    Gaussian elimination with partial pivoting, vectorized over the
    batch; pure numpy so results are identical on every platform.
    """
    a = np.array(mats, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ValueError(f"matrices must be square, got {a.shape[-2:]}")
    sign = np.ones(a.shape[0])
    for k in range(n - 1):
        piv = k + np.abs(a[:, k:, k]).argmax(axis=1)
        rows = np.arange(a.shape[0])
        swap = piv != k
        a[rows[swap], k], a[rows[swap], piv[swap]] = (
            a[rows[swap], piv[swap]], a[rows[swap], k].copy())
        sign[swap] = -sign[swap]
        pivot = a[:, k, k]
        nonzero = pivot != 0.0
        factors = np.zeros_like(a[:, k + 1:, k])
        factors[nonzero] = a[nonzero, k + 1:, k] / pivot[nonzero, None]
        a[:, k + 1:, k:] -= factors[:, :, None] * a[:, None, k, k:]
    det = sign * np.prod(np.diagonal(a, axis1=1, axis2=2), axis=1)
    return det[0] if squeeze else det


def tetra_face_areas(vertices: np.ndarray) -> np.ndarray:
    """Areas of the 4 triangular faces, ordered per ``TETRA_FACES``.

    Each area is half the norm of the cross product of two edges.
    """
    v = np.asarray(vertices, dtype=np.float64)
    squeeze = v.ndim == 2
    if squeeze:
        v = v[None]
    if v.shape[-2:] != (4, 3):
        raise ValueError(f"expected (..., 4, 3) vertices, got {v.shape}")
    areas = np.empty(v.shape[:-2] + (4,))
    for face, (a, b, c) in enumerate(TETRA_FACES):
        e1 = v[..., b, :] - v[..., a, :]
        e2 = v[..., c, :] - v[..., a, :]
        areas[..., face] = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=-1)
    return areas[0] if squeeze else areas


def gen_determinant(dim: int, count: int, seed,
                    value_range=DEFAULT_INPUT_RANGE) -> Dataset:
    """Random matrices with their determinants as the single target."""
    if dim not in (4, 5):
        raise ValueError(f"determinant task supports dims 4 and 5, got {dim}")
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError("value range must be non-degenerate")
    rng = np.random.default_rng(seed)
    mats = rng.uniform(lo, hi, size=(count, dim, dim))
    records = np.empty((count, dim * dim + 1))
    records[:, :dim * dim] = mats.reshape(count, dim * dim)
    records[:, -1] = determinants(mats)
    return Dataset(dim * dim, 1, records)


def gen_tetrahedra(count: int, seed, value_range=DEFAULT_INPUT_RANGE) -> Dataset:
    """Random tetrahedra: 12 vertex coordinates in, 4 face areas out."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError("value range must be non-degenerate")
    rng = np.random.default_rng(seed)
    verts = rng.uniform(lo, hi, size=(count, 4, 3))
    records = np.empty((count, 16))
    records[:, :12] = verts.reshape(count, 12)
    records[:, 12:] = tetra_face_areas(verts)
    return Dataset(12, 4, records)


@dataclass(frozen=True)
class TaskSpec:
    """One benchmark data configuration, resolved into train/val sets."""

    kind: str  # det4 | det5 | tetra
    train_count: int
    val_count: int
    seed: int
    value_range: tuple[float, float] = DEFAULT_INPUT_RANGE

    def __post_init__(self):
        if self.kind not in ("det4", "det5", "tetra"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.train_count < 1 or self.val_count < 1:
            raise ValueError("record counts must be >= 1")

    def _gen(self, count, stream):
        seed = [self.seed, stream]
        if self.kind == "det4":
            return gen_determinant(4, count, seed, self.value_range)
        if self.kind == "det5":
            return gen_determinant(5, count, seed, self.value_range)
        return gen_tetrahedra(count, seed, self.value_range)

    def generate(self) -> tuple[Dataset, Dataset]:
        """Training set from seed stream 0, validation from stream 1."""
        return self._gen(self.train_count, 0), self._gen(self.val_count, 1)


def pearson_pct(a, b) -> float:
    """Pearson correlation between two vectors, in percent.

    Two-pass scheme: means first, then centered cross and self products.
    Raises for constant input rather than silently returning 0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 samples")
    ac = a - a.mean()
    bc = b - b.mean()
    va = ac @ ac
    vb = bc @ bc
    if va == 0.0 or vb == 0.0:
        which = "first" if va == 0.0 else "second"
        raise UndefinedCorrelationError(
            f"{which} vector is constant; correlation undefined"
        )
    return 100.0 * float(ac @ bc) / float(np.sqrt(va) * np.sqrt(vb))


def model_pearson(model, data: Dataset) -> np.ndarray:
    """Per-output Pearson (%) of model predictions against targets."""
    pred = model.predict(data.inputs)
    return np.array([pearson_pct(pred[:, i], data.targets[:, i])
                     for i in range(data.output_dim)])


# -- files ----------------------------------------------------------------

def dataset_filename(task: str, split: str, count: int) -> str:
    return f"{task}_{split}_{count}.csv"


def _header(p: int, q: int) -> list[str]:
    return [f"x{i + 1}" for i in range(p)] + [f"z{i + 1}" for i in range(q)]


def save_dataset(data: Dataset, path) -> None:
    """Write a dataset file; `.csv` is text, anything else the binary format.

    CSV values carry 17 significant digits, enough for an exact float64
    round trip.
    """
    path = str(path)
    if path.endswith(".csv"):
        with open(path, "w") as fh:
            fh.write(",".join(_header(data.input_dim, data.output_dim)) + "\n")
            for row in data.records:
                fh.write(",".join("%.17g" % v for v in row) + "\n")
    else:
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<III", DATASET_FORMAT_VERSION,
                                 data.input_dim, data.output_dim))
            fh.write(struct.pack("<Q", data.record_count))
            fh.write(np.ascontiguousarray(data.records, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    path = str(path)
    if path.endswith(".csv"):
        return _load_csv(path)
    return _load_binary(path)


def _parse_header(line: str, path: str) -> tuple[int, int]:
    names = [c.strip() for c in line.strip().split(",")]
    p = 0
    while p < len(names) and names[p] == f"x{p + 1}":
        p += 1
    q = 0
    while p + q < len(names) and names[p + q] == f"z{q + 1}":
        q += 1
    if p == 0 or q == 0 or p + q != len(names):
        raise DatasetFormatError(
            f"{path}: line 1: malformed header {line.strip()!r}; "
            "expected columns x1..xp,z1..zq"
        )
    return p, q


def _load_csv(path: str) -> Dataset:
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DatasetFormatError(f"{path}: empty file")
        p, q = _parse_header(header, path)
        width = p + q
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split(",")
            if len(fields) != width:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(fields)}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: non-numeric field ({exc})"
                ) from None
    if not rows:
        raise DatasetFormatError(f"{path}: no records")
    return Dataset(p, q, np.array(rows))


def _load_binary(path: str) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) < 24 or head[:4] != DATASET_MAGIC:
            raise DatasetFormatError(f"{path}: not a binary dataset file")
        version, p, q = struct.unpack_from("<III", head, 4)
        if version != DATASET_FORMAT_VERSION:
            raise DatasetFormatError(f"{path}: unsupported format version {version}")
        (count,) = struct.unpack_from("<Q", head, 16)
        payload = fh.read()
    expected = count * (p + q) * 8
    if len(payload) != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    records = np.frombuffer(payload, dtype="<f8").reshape(count, p + q).copy()
    return Dataset(p, q, records)
