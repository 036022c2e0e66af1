"""
Penalized consensus problem and the network Newton direction.

Stacked iterates are arrays of shape ``(n, p)``; row ``i`` is owned by node
``i``.  The penalized objective is

    F(y) = 0.5 y^T (I - Z) y + alpha * sum_i f_i(x_i)

and its Hessian is split as ``H = D - B`` with ``D`` block diagonal
(``D_ii = alpha * hess f_i(x_i) + 2 (1 - w_ii) I``) and ``B`` carrying
``(1 - w_ii) I`` on the diagonal and ``w_ij I`` on graph edges.  Nothing of
size ``np x np`` is ever built here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import ObjectiveEnsemble, as_ensemble
from .topology import Topology, WeightMatrix


@dataclass(frozen=True)
class PenalizedProblem:
    topo: Topology
    w: WeightMatrix
    objectives: ObjectiveEnsemble
    alpha: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "objectives", as_ensemble(self.objectives))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.topo.n == self.w.n == len(self.objectives)):
            raise ValueError(
                f"size mismatch: topology {self.topo.n}, weights {self.w.n}, "
                f"objectives {len(self.objectives)}"
            )

    @property
    def n(self) -> int:
        return self.topo.n

    @property
    def p(self) -> int:
        return self.objectives.dim

    def with_alpha(self, alpha: float) -> PenalizedProblem:
        return replace(self, alpha=alpha, _cache={})

    def check_shape(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n, self.p):
            raise ValueError(f"expected stacked iterate of shape {(self.n, self.p)}, got {y.shape}")
        return y


def penalized_value(prob: PenalizedProblem, y) -> float:
    y = prob.check_shape(y)
    consensus = 0.5 * float(np.sum(y * prob.w.laplacian_apply(y)))
    return consensus + prob.alpha * float(prob.objectives.values(y).sum())


def gradient(prob: PenalizedProblem, y) -> np.ndarray:
    """Stacked gradient ``(I - Z) y + alpha h(y)``, shape ``(n, p)``."""
    y = prob.check_shape(y)
    return prob.w.laplacian_apply(y) + prob.alpha * prob.objectives.gradients(y)


def local_gradient(prob: PenalizedProblem, y, i: int) -> np.ndarray:
    """Gradient component held by node ``i``, using only its neighbors' blocks."""
    y = prob.check_shape(y)
    wii = prob.w.w[i, i]
    nbrs = list(prob.topo.neighbors[i])
    mixed = prob.w.w[i, nbrs] @ y[nbrs] if nbrs else 0.0
    return (1.0 - wii) * y[i] - mixed + prob.alpha * prob.objectives[i].gradient(y[i])


@dataclass(frozen=True)
class SplitBlocks:
    """Blocks of ``H = D - B``.

    ``D_blocks`` has shape ``(n, p, p)``; ``B_diag`` holds the scalars
    ``1 - w_ii`` and ``B_off`` the per-edge scalars ``w_ij`` as a sparse
    ``n x n`` matrix (it is the off-diagonal part of ``W``).
    """

    D_blocks: np.ndarray
    B_diag: np.ndarray
    B_off: object
    D_inv: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.D_blocks.shape[0]

    def solve_D(self, r):
        return np.einsum("ipq,iq->ip", self.D_inv, r)

    def apply_B(self, d):
        return self.B_diag[:, None] * d + np.asarray(self.B_off @ d)

    def edge_weight(self, i, j) -> float:
        return float(self.B_off[i, j])


def split_blocks(prob: PenalizedProblem, y) -> SplitBlocks:
    """Assemble ``D`` and ``B`` at ``y``; cached when every ``f_i`` is quadratic."""
    if prob.objectives.is_quadratic and "split" in prob._cache:
        return prob._cache["split"]
    y = prob.check_shape(y)
    b_diag = 1.0 - prob.w.diag
    hess = prob.objectives.hessians(y)
    eye = np.eye(prob.p)
    d_blocks = prob.alpha * hess + 2.0 * b_diag[:, None, None] * eye
    try:
        chol = np.linalg.cholesky(d_blocks)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("a diagonal block of D is not positive definite") from exc
    # D_ii^{-1} = L^{-T} L^{-1}
    linv = np.linalg.inv(chol)
    d_inv = np.einsum("iqp,iqr->ipr", linv, linv)
    split = SplitBlocks(D_blocks=d_blocks, B_diag=b_diag, B_off=prob.w.offdiag, D_inv=d_inv)
    if prob.objectives.is_quadratic:
        prob._cache["split"] = split
    return split


@dataclass
class NNDirection:
    """Result of the K-hop recursion.

    ``steps[k]`` is ``d^(k)``; ``direction`` is ``steps[-1]``.
    ``exchange_rounds`` counts neighbor exchanges of ``d^(k)`` vectors that
    the recursion actually performed (``K`` of them).
    """

    direction: np.ndarray
    steps: list
    exchange_rounds: int


def nn_direction(prob: PenalizedProblem, y, K: int, *, g=None, split=None) -> NNDirection:
    """Network Newton direction of order ``K`` at ``y``.

    ``d^(0) = -D^-1 g`` and ``d^(k+1) = D^-1 (B d^(k) - g)``, evaluated
    block by block; node ``i`` only reads ``d_j^(k)`` for ``j`` in its closed
    neighborhood.
    """
    if K < 0:
        raise ValueError(f"K must be nonnegative, got {K}")
    y = prob.check_shape(y)
    if g is None:
        g = gradient(prob, y)
    if split is None:
        split = split_blocks(prob, y)
    d = -split.solve_D(g)
    steps = [d]
    rounds = 0
    for _ in range(K):
        d = split.solve_D(split.apply_B(d) - g)
        rounds += 1
        steps.append(d)
    return NNDirection(direction=d, steps=steps, exchange_rounds=rounds)


def weighted_gradient_norm(split: SplitBlocks, g) -> float:
    """``||D^{-1/2} g|| = sqrt(sum_i g_i^T D_ii^{-1} g_i)``."""
    g = np.asarray(g, dtype=float)
    if g.shape[0] != split.n:
        raise ValueError("gradient and split blocks disagree on node count")
    return float(np.sqrt(max(np.sum(g * split.solve_D(g)), 0.0)))
