"""
Network graphs and consensus weight matrices.

A :class:`Topology` holds the neighbor sets of a connected symmetric graph and
a :class:`WeightMatrix` holds symmetric row-stochastic mixing weights on it.
The extended matrix ``W kron I_p`` is never formed: everything downstream acts
on stacked iterates of shape ``(n, p)`` through ``W`` directly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

ROW_SUM_TOL = 1e-12


class TopologyError(ValueError):
    """Raised for malformed graphs or weight matrices."""


@dataclass(frozen=True)
class Topology:
    """Connected, symmetric, loop-free graph on ``n`` nodes.

    Parameters
    ----------
    n : int
        Number of nodes (at least 2).
    neighbors : tuple of tuple of int
        ``neighbors[i]`` lists the nodes adjacent to ``i``, sorted, without
        ``i`` itself.
    """

    n: int
    neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 2:
            raise TopologyError(f"need at least 2 nodes, got {self.n}")
        if len(self.neighbors) != self.n:
            raise TopologyError("one neighbor set per node required")
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                if not 0 <= j < self.n:
                    raise TopologyError(f"node {i} has out-of-range neighbor {j}")
                if j == i:
                    raise TopologyError(f"self-loop at node {i}")
                if i not in self.neighbors[j]:
                    raise TopologyError(f"edge ({i}, {j}) is not symmetric")
        if not self.is_connected():
            raise TopologyError("graph is not connected")

    @classmethod
    def from_edges(cls, n, edges, *, check_connected=True):
        nbrs = [set() for _ in range(n)]
        for i, j in edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        neighbors = tuple(tuple(sorted(s)) for s in nbrs)
        if check_connected:
            return cls(n, neighbors)
        # bypass the connectivity check, used to exercise the validator
        obj = object.__new__(cls)
        object.__setattr__(obj, "n", n)
        object.__setattr__(obj, "neighbors", neighbors)
        return obj

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(s) for s in self.neighbors], dtype=int)

    @property
    def num_directed_edges(self) -> int:
        """``sum_i |N_i|``, the number of vector sends in one exchange round."""
        return int(self.degrees.sum())

    def is_regular(self, d: int) -> bool:
        return all(len(s) == d for s in self.neighbors)

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in self.neighbors[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, nbrs in enumerate(self.neighbors):
            a[i, list(nbrs)] = 1.0
        return a


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric row-stochastic consensus weights supported on a topology.

    ``offdiag`` is a CSR copy of ``w`` with the diagonal removed; it is what
    the solvers use to mix neighbor blocks.
    """

    w: np.ndarray
    offdiag: sparse.csr_matrix = field(repr=False, compare=False)

    @classmethod
    def from_dense(cls, w):
        w = np.asarray(w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise TopologyError(f"weight matrix must be square, got {w.shape}")
        off = w.copy()
        np.fill_diagonal(off, 0.0)
        return cls(w=w, offdiag=sparse.csr_matrix(off))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.w).copy()

    @property
    def delta(self) -> float:
        return float(self.diag.min())

    @property
    def Delta(self) -> float:
        return float(self.diag.max())

    def mix_neighbors(self, y: np.ndarray) -> np.ndarray:
        """Return ``sum_{j in N_i} w_ij y_j`` for every node, shape ``(n, p)``."""
        return np.asarray(self.offdiag @ y)

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Blockwise product ``Z y`` with ``Z = W kron I``."""
        return self.diag[:, None] * y + self.mix_neighbors(y)

    def laplacian_apply(self, y: np.ndarray) -> np.ndarray:
        """Blockwise product ``(I - Z) y``."""
        return (1.0 - self.diag)[:, None] * y - self.mix_neighbors(y)


def build_d_regular_cycle(n: int, d: int) -> Topology:
    """Ring lattice: node ``i`` joined to ``i +- 1, ..., i +- d/2 (mod n)``."""
    if n < 3:
        raise TopologyError(f"need n >= 3 for a cycle, got {n}")
    if d % 2 != 0:
        raise TopologyError(f"degree must be even, got {d}")
    if not 2 <= d <= n - 1:
        raise TopologyError(f"degree must satisfy 2 <= d <= n - 1, got d={d}, n={n}")
    half = d // 2
    neighbors = tuple(
        tuple(sorted({(i + s) % n for s in range(-half, half + 1) if s != 0}))
        for i in range(n)
    )
    return Topology(n, neighbors)


def build_cycle_weights(topo: Topology, d: int) -> WeightMatrix:
    """Weights ``w_ii = 1/2 + 1/(2(d+1))`` and ``w_ij = 1/(2(d+1))`` on a d-regular graph."""
    if not topo.is_regular(d):
        raise TopologyError(f"topology is not {d}-regular")
    off = 1.0 / (2 * (d + 1))
    w = off * topo.adjacency()
    np.fill_diagonal(w, 0.5 + off)
    return WeightMatrix.from_dense(w)


@dataclass
class WeightReport:
    """Outcome of :func:`validate_weights`; ``checks`` maps name to pass flag."""

    checks: dict[str, bool]
    row_sum_deviation: float
    asymmetry: float
    support_violation: float
    delta: float
    Delta: float
    second_eigenvalue_modulus: float
    unit_eigenvalue_multiplicity: int

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]


def validate_weights(w: WeightMatrix, topo: Topology, *, tol: float = ROW_SUM_TOL) -> WeightReport:
    """Check every weight-matrix invariant and report measured residuals.

    Uses a dense symmetric eigendecomposition, so it is meant for validation
    runs rather than the solver hot path. Never raises on a failed invariant.
    """
    if w.n != topo.n:
        raise TopologyError(f"weight matrix is {w.n}x{w.n} but topology has {topo.n} nodes")
    mat = w.w
    row_dev = float(np.max(np.abs(mat.sum(axis=1) - 1.0)))
    asym = float(np.max(np.abs(mat - mat.T)))
    allowed = topo.adjacency() + np.eye(topo.n)
    support = float(np.max(np.abs(mat[allowed == 0]), initial=0.0))
    diag = np.diag(mat)

    eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    unit_mult = int(np.sum(np.abs(eig - 1.0) < 1e-9))
    order = np.argsort(-np.abs(eig))
    # second-largest modulus, after removing one copy of the unit eigenvalue
    slem = float(np.abs(eig[order[1]])) if len(eig) > 1 else 0.0

    checks = {
        "symmetric": asym <= tol,
        "row_stochastic": row_dev <= tol,
        "sparsity": support == 0.0,
        "diagonal_bounds": bool(diag.min() >= 0.0 and diag.max() < 1.0),
        "null_space": unit_mult == 1 and slem < 1.0 - 1e-12,
    }
    return WeightReport(
        checks=checks,
        row_sum_deviation=row_dev,
        asymmetry=asym,
        support_violation=support,
        delta=float(diag.min()),
        Delta=float(diag.max()),
        second_eigenvalue_modulus=slem,
        unit_eigenvalue_multiplicity=unit_mult,
    )
