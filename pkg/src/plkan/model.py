"""Piecewise-linear KAN models.

A model is a chain of layers; each layer turns an n-vector into an
m-vector by summing per-input piecewise-linear functions (one function
per (output, input) pair).  Function values are stored at uniformly
spaced grid nodes and evaluated by linear interpolation between the two
bracketing nodes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

MODEL_MAGIC = b"KANM"
MODEL_FORMAT_VERSION = 1


class StructuralMismatchError(ValueError):
    """Models cannot be merged because their structures differ."""


class ModelFormatError(ValueError):
    """A model file is corrupt or has an unsupported format."""


@dataclass(frozen=True)
class Grid:
    """Uniform node placement for one function family.

    Nodes sit at ``y_min + k * delta`` for ``k = 0 .. node_count - 1``.
    """

    y_min: float
    y_max: float
    node_count: int

    def __post_init__(self):
        if not (np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise ValueError("grid bounds must be finite")
        if not self.y_max > self.y_min:
            raise ValueError(f"grid requires y_max > y_min, got [{self.y_min}, {self.y_max}]")
        if self.node_count < 2:
            raise ValueError(f"grid requires at least 2 nodes, got {self.node_count}")

    @property
    def delta(self) -> float:
        return (self.y_max - self.y_min) / (self.node_count - 1)

    def positions(self) -> np.ndarray:
        return self.y_min + self.delta * np.arange(self.node_count)


class Located(NamedTuple):
    """Per-column interpolation state: left-node index and offset fraction."""

    k: np.ndarray  # int64, 0-based left node index, in [0, node_count - 2]
    f: np.ndarray  # float64 fraction in [0, 1]


def locate(grid: Grid, y: float) -> tuple[int, float]:
    """Find the active segment for argument ``y``.

    ``y`` is clamped into ``[y_min, y_max]`` first.  Returns the 0-based
    index ``k`` of the segment's left node and the fraction ``f`` of the
    way toward node ``k + 1``.  At ``y_max`` the last segment is used
    with ``f = 1`` so ``k + 1`` always stays a valid node index.
    """
    if not np.isfinite(y):
        raise ValueError(f"argument must be finite, got {y!r}")
    y = min(max(y, grid.y_min), grid.y_max)
    s = (y - grid.y_min) / grid.delta
    k = int(np.floor(s))
    if k > grid.node_count - 2:
        k = grid.node_count - 2
    f = min(max(s - k, 0.0), 1.0)
    return k, f


def eval_plf(values: np.ndarray, grid: Grid, y: float) -> float:
    """Evaluate one piecewise-linear function given its node values."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.node_count,):
        raise ValueError(
            f"expected {grid.node_count} node values, got shape {values.shape}"
        )
    k, f = locate(grid, y)
    return (1.0 - f) * values[k] + f * values[k + 1]


class PlfTable:
    """Node values of all piecewise-linear functions of one layer.

    ``values`` has shape ``(out_dim, row_stride)`` where a row holds the
    node values of all functions of one output, concatenated column by
    column; column ``j`` occupies ``node_count(j)`` consecutive slots.
    All rows of column ``j`` share one grid.  An array of the exact
    shape, dtype and layout is adopted without copying, which lets a
    model expose its layers as views into one flat parameter buffer.
    """

    def __init__(self, grids: Sequence[Grid], out_dim: int,
                 values: np.ndarray | None = None):
        if len(grids) == 0:
            raise ValueError("layer needs at least one input column")
        if out_dim < 1:
            raise ValueError("layer needs at least one output")
        self.grids = list(grids)
        self.out_dim = int(out_dim)
        node_counts = np.array([g.node_count for g in self.grids], dtype=np.int64)
        self.col_offsets = np.concatenate(([0], np.cumsum(node_counts[:-1])))
        self.row_stride = int(node_counts.sum())
        if values is None:
            values = np.zeros((self.out_dim, self.row_stride))
        else:
            values = np.ascontiguousarray(values, dtype=np.float64)
            if values.shape != (self.out_dim, self.row_stride):
                raise ValueError(
                    f"values shape {values.shape} does not match "
                    f"(out_dim, row_stride) = ({self.out_dim}, {self.row_stride})"
                )
        self.values = values

    @property
    def in_dim(self) -> int:
        return len(self.grids)

    @property
    def node_counts(self) -> np.ndarray:
        return np.array([g.node_count for g in self.grids], dtype=np.int64)

    @property
    def parameter_count(self) -> int:
        return self.values.size

    def column_values(self, j: int) -> np.ndarray:
        """View of shape (out_dim, node_count(j)) for input column j."""
        off = self.col_offsets[j]
        return self.values[:, off:off + self.grids[j].node_count]

    def node_values(self, i: int, j: int) -> np.ndarray:
        """View of the node values of function (i, j)."""
        return self.column_values(j)[i]

    def evaluate(self, y: np.ndarray) -> tuple[np.ndarray, Located]:
        """Layer forward pass: z_i = sum_j g_ij(y_j).

        Segment lookup happens once per input column and is shared by
        all rows; the returned ``Located`` can be reused for the
        Jacobian and the parameter update of the same record.
        """
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.in_dim,):
            raise ValueError(f"expected input of length {self.in_dim}, got shape {y.shape}")
        n = self.in_dim
        ks = np.empty(n, dtype=np.int64)
        fs = np.empty(n)
        z = np.zeros(self.out_dim)
        for j in range(n):
            k, f = locate(self.grids[j], y[j])
            ks[j] = k
            fs[j] = f
            col = self.column_values(j)
            z += (1.0 - f) * col[:, k] + f * col[:, k + 1]
        return z, Located(ks, fs)

    def jacobian(self, located: Located) -> np.ndarray:
        """Slopes of the active segments: J[i, j] = dg_ij/dy_j."""
        J = np.empty((self.out_dim, self.in_dim))
        for j in range(self.in_dim):
            col = self.column_values(j)
            k = located.k[j]
            J[:, j] = (col[:, k + 1] - col[:, k]) / self.grids[j].delta
        return J

    def same_structure(self, other: "PlfTable") -> bool:
        if self.out_dim != other.out_dim or self.in_dim != other.in_dim:
            return False
        return all(a == b for a, b in zip(self.grids, other.grids))


@dataclass
class ForwardTrace:
    """Intermediates of one forward pass, cached for the update step."""

    layer_inputs: list[np.ndarray]
    layer_outputs: list[np.ndarray]
    located: list[Located]

    @property
    def layer_count(self) -> int:
        return len(self.layer_inputs)

    @property
    def output(self) -> np.ndarray:
        return self.layer_outputs[-1]


class _PackedLayout(NamedTuple):
    """Flat model description consumed by the numba kernels."""

    layer_m: np.ndarray
    layer_n: np.ndarray
    layer_val_off: np.ndarray
    layer_row_stride: np.ndarray
    layer_col_off: np.ndarray
    col_nc: np.ndarray
    col_ymin: np.ndarray
    col_delta: np.ndarray
    col_row_off: np.ndarray


class KanModel:
    """Chain of piecewise-linear layers.

    Owns one flat float64 parameter buffer; ``layers[l].values`` are
    views into it, so layers stay cheap to hand to the update kernels
    and the whole model is cloned with a single array copy.
    """

    def __init__(self, layers: Sequence[PlfTable]):
        if len(layers) == 0:
            raise ValueError("model needs at least one layer")
        for l in range(len(layers) - 1):
            if layers[l].out_dim != layers[l + 1].in_dim:
                raise ValueError(
                    f"dimension chain broken between layers {l} and {l + 1}: "
                    f"{layers[l].out_dim} outputs feed {layers[l + 1].in_dim} inputs"
                )
        self._flat = np.concatenate([t.values.ravel() for t in layers])
        self.layers: list[PlfTable] = []
        off = 0
        for t in layers:
            view = self._flat[off:off + t.values.size].reshape(t.values.shape)
            self.layers.append(PlfTable(t.grids, t.out_dim, view))
            off += t.values.size
        self._layout = self._build_layout()

    def _build_layout(self) -> _PackedLayout:
        layer_m = np.array([t.out_dim for t in self.layers], dtype=np.int64)
        layer_n = np.array([t.in_dim for t in self.layers], dtype=np.int64)
        sizes = np.array([t.values.size for t in self.layers], dtype=np.int64)
        layer_val_off = np.concatenate(([0], np.cumsum(sizes[:-1])))
        layer_row_stride = np.array([t.row_stride for t in self.layers], dtype=np.int64)
        cols = np.concatenate(([0], np.cumsum(layer_n[:-1])))
        col_nc, col_ymin, col_delta, col_row_off = [], [], [], []
        for t in self.layers:
            for j, g in enumerate(t.grids):
                col_nc.append(g.node_count)
                col_ymin.append(g.y_min)
                col_delta.append(g.delta)
                col_row_off.append(t.col_offsets[j])
        return _PackedLayout(
            layer_m, layer_n, layer_val_off, layer_row_stride, cols,
            np.array(col_nc, dtype=np.int64), np.array(col_ymin),
            np.array(col_delta), np.array(col_row_off, dtype=np.int64),
        )

    def _kernel_args(self):
        return (self._flat,) + tuple(self._layout)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def total_parameter_count(self) -> int:
        return self._flat.size

    @property
    def flat_values(self) -> np.ndarray:
        """The live flat parameter buffer (mutating it mutates the model)."""
        return self._flat

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
        """Chain all layers over one record, recording every intermediate."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        inputs, outputs, located = [], [], []
        y = x
        for layer in self.layers:
            inputs.append(y.copy())
            z, loc = layer.evaluate(y)
            outputs.append(z)
            located.append(loc)
            y = z
        return outputs[-1].copy(), ForwardTrace(inputs, outputs, located)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Batch forward pass, returns an (n_records, output_dim) array."""
        from . import _kernels

        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"expected (n, {self.input_dim}) inputs, got shape {X.shape}"
            )
        if not np.isfinite(X).all():
            raise ValueError("inputs contain non-finite values")
        out = np.empty((X.shape[0], self.output_dim))
        _kernels.forward_batch(*self._kernel_args(), X, out)
        return out

    def copy(self) -> "KanModel":
        return KanModel(self.layers)

    def same_structure(self, other: "KanModel") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.same_structure(b) for a, b in zip(self.layers, other.layers)
        )

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        """Write the versioned flat binary model layout (little-endian)."""
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<I", MODEL_FORMAT_VERSION))
            fh.write(struct.pack("<I", len(self.layers)))
            for t in self.layers:
                fh.write(struct.pack("<II", t.out_dim, t.in_dim))
                for g in t.grids:
                    fh.write(struct.pack("<Idd", g.node_count, g.y_min, g.y_max))
                fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "KanModel":
        with open(path, "rb") as fh:
            data = fh.read()
        view = memoryview(data)
        if data[:4] != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: bad magic bytes, not a model file")
        (version,) = struct.unpack_from("<I", view, 4)
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        (n_layers,) = struct.unpack_from("<I", view, 8)
        pos = 12
        layers = []
        try:
            for _ in range(n_layers):
                m, n = struct.unpack_from("<II", view, pos)
                pos += 8
                grids = []
                for _ in range(n):
                    nc, ymin, ymax = struct.unpack_from("<Idd", view, pos)
                    pos += 20
                    grids.append(Grid(ymin, ymax, nc))
                count = m * int(sum(g.node_count for g in grids))
                vals = np.frombuffer(view, dtype="<f8", count=count, offset=pos)
                pos += count * 8
                layers.append(PlfTable(grids, m, vals.reshape(m, -1).copy()))
        except (struct.error, ValueError) as exc:
            raise ModelFormatError(f"{path}: truncated or corrupt model file") from exc
        if pos != len(data):
            raise ModelFormatError(f"{path}: {len(data) - pos} trailing bytes")
        return cls(layers)


def average_models(models: Sequence[KanModel]) -> KanModel:
    """Merge models by taking the per-parameter arithmetic mean.

    Each parameter's values are summed exactly (``math.fsum``) before
    the single division, so the result is within one rounding unit of
    the true mean, independent of the input ordering, and parameters
    that agree across all models pass through bit-unchanged.
    """
    if len(models) == 0:
        raise ValueError("need at least one model to merge")
    first = models[0]
    for idx, other in enumerate(models[1:], start=1):
        _check_merge_compatible(first, other, idx)
    count = len(models)
    merged = first.copy()
    if count > 1:
        stacked = np.stack([m.flat_values for m in models])
        differs = ~(stacked == stacked[0]).all(axis=0)
        mean = merged.flat_values
        mean[differs] = [math.fsum(col) / count for col in stacked[:, differs].T]
    return merged


def _check_merge_compatible(a: KanModel, b: KanModel, idx: int) -> None:
    if len(a.layers) != len(b.layers):
        raise StructuralMismatchError(
            f"model {idx}: layer count {len(b.layers)} != {len(a.layers)}"
        )
    for l, (ta, tb) in enumerate(zip(a.layers, b.layers)):
        if ta.out_dim != tb.out_dim or ta.in_dim != tb.in_dim:
            raise StructuralMismatchError(
                f"model {idx}, layer {l}: dims ({tb.out_dim}, {tb.in_dim}) "
                f"!= ({ta.out_dim}, {ta.in_dim})"
            )
        for j, (ga, gb) in enumerate(zip(ta.grids, tb.grids)):
            if ga != gb:
                raise StructuralMismatchError(
                    f"model {idx}, layer {l}, column {j}: grid {gb} != {ga}"
                )
