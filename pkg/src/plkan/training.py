"""Sequential per-record training.

Every record triggers one damped correction of every layer: the output
residual is propagated backward through the segment slopes (transposed
Jacobians) of the current parameters, then each function moves its two
active node values toward absorbing its layer's residual share.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import Grid, KanModel, Located, PlfTable

DEFAULT_MU = 0.5
# Empirical initialization knobs, see init_model.
DEFAULT_INNER_SCALE = 4.2
DEFAULT_GRID_HEADROOM = 3.0


@dataclass(frozen=True)
class Architecture:
    """Layer widths and per-layer node counts (input dimension first)."""

    input_dim: int
    layer_widths: tuple[int, ...]
    node_counts: tuple[int, ...]

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.layer_widths):
            raise ValueError("dimensions must be positive")
        if len(self.layer_widths) != len(self.node_counts):
            raise ValueError(
                f"{len(self.layer_widths)} layers but {len(self.node_counts)} node counts"
            )
        if any(nc < 2 for nc in self.node_counts):
            raise ValueError("every function needs at least 2 nodes")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.layer_widths

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def parameter_count(self) -> int:
        dims = self.dims
        return sum(dims[l] * dims[l + 1] * self.node_counts[l]
                   for l in range(len(self.layer_widths)))


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the sequential trainer."""

    mu: float = DEFAULT_MU
    epochs: int = 1
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must be in (0, 1], got {self.mu}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class EpochStats:
    mean_prior_residual: float
    wall_time_s: float


def record_permutation(seed, index: int, n: int) -> np.ndarray:
    """Seeded record order shared by epoch shuffling and batch sampling.

    PCG64 via ``numpy.random.default_rng`` seeded with ``[seed, index]``;
    the stream is documented and platform-independent, which is what
    makes training runs reproducible across machines.
    """
    rng = np.random.default_rng([seed, index])
    return rng.permutation(n).astype(np.int64)


def init_model(arch: Architecture, input_range, target_range, seed,
               inner_scale: float = DEFAULT_INNER_SCALE,
               grid_headroom: float = DEFAULT_GRID_HEADROOM) -> KanModel:
    """Build a model with random node values and data-derived grids.

    First-layer grids span ``input_range``.  The base value bound is
    ``r = target_span / (2 * sum of layer input dims)``; the final layer
    draws node values from ``[-r, r]`` while earlier layers use the
    wider bound ``inner_scale * r`` — without that widening the initial
    hidden activations fall inside a single segment of the next layer's
    grid and purely multiplicative target structure is never picked up.
    Layer ``l + 1``'s grids span ``grid_headroom`` times layer ``l``'s
    worst-case output magnitude, so nothing is clamped at
    initialization and activations keep room to grow during training.
    """
    lo_in, hi_in = float(input_range[0]), float(input_range[1])
    lo_t, hi_t = float(target_range[0]), float(target_range[1])
    if not (hi_in > lo_in and hi_t > lo_t):
        raise ValueError("input and target ranges must be non-degenerate")
    if inner_scale <= 0 or grid_headroom < 1.0:
        raise ValueError("inner_scale must be > 0 and grid_headroom >= 1")
    dims = arch.dims
    n_layers = len(arch.layer_widths)
    r = (hi_t - lo_t) / (2.0 * sum(dims[:-1]))
    bounds = [r * inner_scale if l < n_layers - 1 else r for l in range(n_layers)]
    rng = np.random.default_rng(seed)
    layers = []
    for l in range(n_layers):
        n, m = dims[l], dims[l + 1]
        nc = arch.node_counts[l]
        if l == 0:
            grid = Grid(lo_in, hi_in, nc)
        else:
            half = grid_headroom * dims[l - 1] * bounds[l - 1]
            grid = Grid(-half, half, nc)
        values = rng.uniform(-bounds[l], bounds[l], size=(m, n * nc))
        layers.append(PlfTable([grid] * n, m, values))
    return KanModel(layers)


def update_layer(layer: PlfTable, located: Located, residual: np.ndarray,
                 mu: float) -> None:
    """One damped correction of a layer toward absorbing ``residual``.

    Moves, for every function, only the two active node values:
    ``G[i,j,k] += mu_eff * dz_i * (1 - f_j)`` and
    ``G[i,j,k+1] += mu_eff * dz_i * f_j`` with ``mu_eff = mu / in_dim``,
    so the residual is split evenly across the layer's addends.
    """
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != (layer.out_dim,):
        raise ValueError(
            f"expected residual of length {layer.out_dim}, got shape {residual.shape}"
        )
    d = (mu / layer.in_dim) * residual
    for j in range(layer.in_dim):
        col = layer.column_values(j)
        k = located.k[j]
        f = located.f[j]
        col[:, k] += d * (1.0 - f)
        col[:, k + 1] += d * f


def backprop_targets(layer: PlfTable, located: Located,
                     residual: np.ndarray) -> np.ndarray:
    """Residual a preceding layer should absorb: ``J^T @ residual``.

    Must be called before ``update_layer`` touches this layer so the
    slopes reflect the parameters the forward pass used.
    """
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != (layer.out_dim,):
        raise ValueError(
            f"expected residual of length {layer.out_dim}, got shape {residual.shape}"
        )
    return layer.jacobian(located).T @ residual


def propagate_residuals(model: KanModel, trace, z) -> list[np.ndarray]:
    """Per-layer residual vectors for one record, all from pre-update
    parameters.

    Entry ``l`` is what layer ``l``'s output should absorb: the last
    entry is ``z`` minus the model output, earlier ones come from
    chaining ``backprop_targets`` backward through the trace.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.output_dim,):
        raise ValueError(f"expected target of length {model.output_dim}, "
                         f"got shape {z.shape}")
    residuals = [np.empty(0)] * len(model.layers)
    residuals[-1] = z - trace.output
    for l in range(len(model.layers) - 1, 0, -1):
        residuals[l - 1] = backprop_targets(model.layers[l], trace.located[l],
                                            residuals[l])
    return residuals


def train_record(model: KanModel, x, z, mu: float) -> float:
    """Train on one record; returns the pre-update residual norm."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if x.shape != (1, model.input_dim) or z.shape != (1, model.output_dim):
        raise ValueError(
            f"record dims {x.shape[-1]}->{z.shape[-1]} do not match model "
            f"{model.input_dim}->{model.output_dim}"
        )
    if not (np.isfinite(x).all() and np.isfinite(z).all()):
        raise ValueError("record contains non-finite values")
    prior = np.empty(1)
    _kernels.train_batch(*model._kernel_args(), x, z,
                         np.zeros(1, dtype=np.int64), float(mu), prior)
    return float(prior[0])


def train_epoch(model: KanModel, data, cfg: TrainConfig,
                epoch_index: int = 0) -> EpochStats:
    """One pass over the dataset, record by record.

    The record order is the seeded permutation for ``(cfg.seed,
    epoch_index)`` when shuffling, dataset order otherwise; together
    with the data this fully determines the resulting parameters.
    """
    n = data.record_count
    if n == 0:
        raise ValueError("dataset is empty")
    _check_dims(model, data)
    if cfg.shuffle_each_epoch:
        order = record_permutation(cfg.seed, epoch_index, n)
    else:
        order = np.arange(n, dtype=np.int64)
    prior = np.empty(n)
    t0 = time.perf_counter()
    _kernels.train_batch(*model._kernel_args(), data.inputs, data.targets,
                         order, cfg.mu, prior)
    return EpochStats(float(prior.mean()), time.perf_counter() - t0)


def train(model: KanModel, data, cfg: TrainConfig) -> list[EpochStats]:
    """Run ``cfg.epochs`` sequential epochs, mutating ``model``."""
    return [train_epoch(model, data, cfg, epoch_index=e)
            for e in range(cfg.epochs)]


def _check_dims(model: KanModel, data) -> None:
    if data.input_dim != model.input_dim or data.output_dim != model.output_dim:
        raise ValueError(
            f"dataset dims {data.input_dim}->{data.output_dim} do not match "
            f"model {model.input_dim}->{model.output_dim}"
        )
