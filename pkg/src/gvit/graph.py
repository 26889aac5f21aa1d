"""Chain topology over time points and graph convolutions on it.

A sensor recording segment becomes a path graph: node i is time point i,
with a single edge to node i+1. The adjacency is never materialized dense
for real sizes; propagation works on the three bands of the renormalized
matrix, which is tridiagonal (symmetric mode) or upper-bidiagonal (row
mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, DomainError
from .tensor import Tensor, from_op, relu, matmul, concat_cols

COMPOSITIONS = ("A", "B", "A+B")
GROUPS = ("co_ethylene", "methane_ethylene")
GROUP_GASES = {
    "co_ethylene": ("CO", "ethylene"),
    "methane_ethylene": ("methane", "ethylene"),
}
N_SENSORS = 16


@dataclass
class SensorGraph:
    """One segmented sample: node features plus labels and provenance.

    ``features`` is N x 16 (baseline-corrected responses), ``targets`` the
    two normalized concentrations in [0, 1], ``targets_ppm`` the raw
    setpoints they came from.
    """

    features: np.ndarray
    targets: np.ndarray
    targets_ppm: np.ndarray
    composition: str
    group: str
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    def validate(self):
        if self.features.ndim != 2 or self.features.shape[1] != N_SENSORS:
            raise DimensionError(
                f"node features must be N x {N_SENSORS}, got {self.features.shape}"
            )
        if self.n_nodes < 1:
            raise DomainError("graph needs at least one node")
        if self.targets.shape != (2,):
            raise DimensionError(f"targets must have shape (2,), got {self.targets.shape}")
        if np.any(self.targets < 0) or np.any(self.targets > 1):
            raise DomainError(f"targets must lie in [0,1], got {self.targets}")
        if self.composition not in COMPOSITIONS:
            raise DomainError(f"unknown composition {self.composition!r}")
        if self.group not in GROUPS:
            raise DomainError(f"unknown group {self.group!r}")
        present = self.targets_ppm > 0
        expect = {"A": (True, False), "B": (False, True), "A+B": (True, True)}
        if tuple(present) != expect[self.composition]:
            raise DomainError(
                f"composition {self.composition} inconsistent with targets "
                f"{self.targets_ppm}"
            )
        return self


def composition_of(conc_a: float, conc_b: float) -> str:
    """Composition label from a raw setpoint pair (at least one nonzero)."""
    if conc_a > 0 and conc_b > 0:
        return "A+B"
    if conc_a > 0:
        return "A"
    if conc_b > 0:
        return "B"
    raise DomainError("air setpoints carry no composition")


@dataclass(frozen=True)
class ChainAdjacency:
    """The one-way chain over N nodes: edge i -> i+1, nothing else."""

    n_nodes: int

    @property
    def n_edges(self) -> int:
        return self.n_nodes - 1

    def edges(self):
        return [(i, i + 1) for i in range(self.n_nodes - 1)]

    def dense(self) -> np.ndarray:
        """Materialize the N x N pattern (ones on the first superdiagonal)."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        idx = np.arange(self.n_nodes - 1)
        a[idx, idx + 1] = 1.0
        return a


def build_chain_adjacency(n_nodes: int) -> ChainAdjacency:
    if n_nodes < 1:
        raise DomainError(f"chain needs at least one node, got {n_nodes}")
    return ChainAdjacency(int(n_nodes))


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Renormalized propagation matrix stored as bands.

    symmetric mode is tridiagonal with ``sub == sup``; row mode is
    upper-bidiagonal (``sub`` all zero).
    """

    n_nodes: int
    mode: str
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def dense(self) -> np.ndarray:
        a = np.diag(self.diag)
        idx = np.arange(self.n_nodes - 1)
        a[idx, idx + 1] = self.sup
        a[idx + 1, idx] = self.sub
        return a


def normalize_adjacency(adj: ChainAdjacency, mode: str = "symmetric") -> NormalizedAdjacency:
    """Degree-renormalized propagation matrix for the chain.

    symmetric: D^{-1/2} (A_sym + I) D^{-1/2} on the symmetrized chain.
    row: D^{-1} (A + I) on the directed chain.
    """
    n = adj.n_nodes
    if mode == "symmetric":
        deg = np.full(n, 3.0)
        deg[0] = 2.0
        deg[-1] = 2.0
        if n == 1:
            deg[0] = 1.0
        inv_sqrt = 1.0 / np.sqrt(deg)
        diag = inv_sqrt * inv_sqrt
        off = inv_sqrt[:-1] * inv_sqrt[1:]
        return NormalizedAdjacency(n, mode, off.copy(), diag, off.copy())
    if mode == "row":
        deg = np.full(n, 2.0)
        deg[-1] = 1.0
        diag = 1.0 / deg
        sup = 1.0 / deg[:-1]
        return NormalizedAdjacency(n, mode, np.zeros(n - 1), diag, sup)
    raise ConfigError(f"unknown adjacency mode {mode!r}")


def chain_propagate(x: Tensor, a_hat: NormalizedAdjacency) -> Tensor:
    """Differentiable banded product a_hat @ x; O(N*C), never dense."""
    if x.data.ndim != 2 or x.shape[0] != a_hat.n_nodes:
        raise DimensionError(
            f"chain_propagate: x shape {x.shape} vs {a_hat.n_nodes} nodes"
        )
    out_data = kernels.tridiag_matmul(a_hat.sub, a_hat.diag, a_hat.sup, x.data)

    def bwd(out):
        # transpose of a banded matrix swaps the sub/super bands
        x.grad += kernels.tridiag_matmul(a_hat.sup, a_hat.diag, a_hat.sub, out.grad)

    return from_op(out_data, (x,), bwd)


def gcn_layer(x: Tensor, a_hat: NormalizedAdjacency, w: Tensor) -> Tensor:
    """One graph convolution: relu(a_hat @ x @ w)."""
    if x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"gcn_layer: feature width {x.shape} incompatible with weight {w.shape}"
        )
    return relu(matmul(chain_propagate(x, a_hat), w))


def gcn_stack(x: Tensor, a_hat: NormalizedAdjacency, weights: list[Tensor]) -> Tensor:
    """Run the layer sequence and concatenate every layer's output.

    With L layers of F filters each, the result is N x (L*F): the model
    width is the product of layer count and filter count.
    """
    if not weights:
        raise ConfigError("gcn_stack needs at least one layer")
    outs = []
    h = x
    for w in weights:
        h = gcn_layer(h, a_hat, w)
        outs.append(h)
    if len(outs) == 1:
        return outs[0]
    return concat_cols(outs)
