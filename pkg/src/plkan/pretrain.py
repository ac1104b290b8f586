"""Addend-group pretraining for two-layer scalar-output models.

Such a model is a sum of addends, each a small tree: an outer function
applied to a sum of per-input inner functions.  Pretraining carves the
addends into groups and trains every group as an independent sub-model
toward its proportional share of the target, which yields a warm start
whose parameter slices drop straight back into the full model.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import KanModel, PlfTable
from .training import TrainConfig, train_epoch


@dataclass(frozen=True)
class AddendGroup:
    """A contiguous slice of the addend set."""

    index: int
    members: tuple[int, ...]
    share: float

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("group must have at least one addend")


def split_addends(n: int, groups: int) -> list[AddendGroup]:
    """Contiguous near-equal partition; sizes differ by at most one."""
    if not 1 <= groups <= n:
        raise ValueError(f"need 1 <= groups <= {n}, got {groups}")
    base, extra = divmod(n, groups)
    out = []
    start = 0
    for g in range(groups):
        size = base + (1 if g < extra else 0)
        out.append(AddendGroup(g, tuple(range(start, start + size)), size / n))
        start += size
    return out


def _check_addend_structure(model: KanModel) -> int:
    if len(model.layers) != 2 or model.output_dim != 1:
        raise ValueError(
            "pretraining needs a two-layer model with a single output; "
            f"got {len(model.layers)} layers with output dim {model.output_dim}"
        )
    return model.layers[0].out_dim


def extract_group_model(model: KanModel, group: AddendGroup) -> KanModel:
    """Detached sub-model holding only the group's addends."""
    inner, outer = model.layers
    rows = list(group.members)
    sub_inner = PlfTable(inner.grids, len(rows), inner.values[rows].copy())
    outer_cols = np.concatenate(
        [outer.column_values(j) for j in rows], axis=1)
    sub_outer = PlfTable([outer.grids[j] for j in rows], 1, outer_cols.copy())
    return KanModel([sub_inner, sub_outer])


def reinsert_group_model(model: KanModel, group: AddendGroup,
                         sub: KanModel) -> None:
    """Write a trained group's parameter slices back into the full model."""
    inner, outer = model.layers
    for local, j in enumerate(group.members):
        inner.values[j] = sub.layers[0].values[local]
        outer.column_values(j)[:] = sub.layers[1].column_values(local)


def pretrain(model: KanModel, data: Dataset, groups, cfg: TrainConfig,
             max_workers: int | None = None) -> KanModel:
    """Warm-start a two-layer model by training addend groups independently.

    ``groups`` is a group count or a prebuilt partition.  Each group
    trains on the full dataset against ``share * z`` for ``cfg.epochs``
    passes; groups are independent sub-models over disjoint parameter
    slices, so they run concurrently on the worker pool.  Returns a new
    model; structure (dims, grids, node counts) is never changed.
    """
    n_addends = _check_addend_structure(model)
    if isinstance(groups, int):
        groups = split_addends(n_addends, groups)
    covered = sorted(j for g in groups for j in g.members)
    if covered != list(range(n_addends)):
        raise ValueError("groups must partition the addend set")
    if data.input_dim != model.input_dim or data.output_dim != 1:
        raise ValueError(
            f"dataset dims {data.input_dim}->{data.output_dim} do not match "
            f"model {model.input_dim}->1"
        )
    result = model.copy()

    def work(group: AddendGroup) -> tuple[AddendGroup, KanModel]:
        sub = extract_group_model(result, group)
        share_data = Dataset(
            data.input_dim, 1,
            np.hstack([data.inputs, group.share * data.targets]),
        )
        for epoch in range(cfg.epochs):
            train_epoch(sub, share_data, cfg, epoch_index=epoch)
        return group, sub

    if len(groups) == 1:
        done = [work(groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            done = list(pool.map(work, groups))
    for group, sub in done:
        reinsert_group_model(result, group, sub)
    return result
