"""Reference architectures for the three benchmark tasks.

Each preset pins the layer layout (and hence the exact parameter count)
plus the tuned training knobs used by the benchmark CLI: the damping
factor and the two initialization scales.  Deeper models need more grid
headroom; the values below were calibrated on the shipped tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

from .training import Architecture


@dataclass(frozen=True)
class ArchPreset:
    name: str
    task: str
    architecture: Architecture
    expected_parameters: int
    mu: float
    inner_scale: float
    grid_headroom: float

    def __post_init__(self):
        actual = self.architecture.parameter_count
        if actual != self.expected_parameters:
            raise AssertionError(
                f"preset {self.name}: parameter count {actual} != "
                f"expected {self.expected_parameters}"
            )


PRESETS: dict[str, ArchPreset] = {
    "det4": ArchPreset(
        name="det4", task="det4",
        architecture=Architecture(16, (70, 1), (3, 25)),
        expected_parameters=5_110,
        mu=0.35, inner_scale=4.2, grid_headroom=2.0,
    ),
    "det5": ArchPreset(
        name="det5", task="det5",
        architecture=Architecture(25, (160, 1), (3, 30)),
        expected_parameters=16_800,
        mu=0.35, inner_scale=4.2, grid_headroom=2.0,
    ),
    "tetra": ArchPreset(
        name="tetra", task="tetra",
        architecture=Architecture(12, (70, 30, 4), (3, 18, 22)),
        expected_parameters=42_960,
        mu=0.35, inner_scale=4.2, grid_headroom=3.0,
    ),
}


def parse_architecture(spec: str, input_dim: int) -> Architecture:
    """Parse a custom layer spec like ``70x3,1x25`` (width x node count)."""
    widths, nodes = [], []
    for part in spec.split(","):
        try:
            w, nc = part.strip().split("x")
            widths.append(int(w))
            nodes.append(int(nc))
        except ValueError:
            raise ValueError(
                f"bad architecture spec {spec!r}; expected "
                "comma-separated widthXnodes pairs like '70x3,1x25'"
            ) from None
    return Architecture(input_dim, tuple(widths), tuple(nodes))
