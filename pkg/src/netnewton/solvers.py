"""
Outer iterations: DGD, network Newton (NN-K), and the tolerance loop.

All solvers are bulk-synchronous: one outer iteration is one round in which
every node updates from the previous round's values.  Vectorizing over nodes
is the same computation a per-node schedule would produce.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .metrics import CommLedger, relative_error
from .penalty import (
    PenalizedProblem,
    gradient,
    nn_direction,
    penalized_value,
    split_blocks,
    weighted_gradient_norm,
)

log = logging.getLogger(__name__)

DIVERGENCE_WINDOW = 50


class DivergenceError(RuntimeError):
    """F increased for ``DIVERGENCE_WINDOW`` consecutive iterations."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    method: str = "nn"
    K: int = 0
    epsilon: float = 1.0
    tol: float = 1e-8
    max_iters: int = 1000

    def __post_init__(self):
        method = self.method.lower()
        if method not in ("dgd", "nn"):
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "method", method)
        if method == "nn" and self.K < 0:
            raise ValueError("K must be nonnegative")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    @property
    def label(self) -> str:
        return "DGD" if self.method == "dgd" else f"NN-{self.K}"

    @property
    def rounds_per_iteration(self) -> int:
        return 1 if self.method == "dgd" else self.K + 1


def parse_method(name: str) -> tuple[str, int]:
    """``"DGD"`` -> ``("dgd", 0)``; ``"NN-2"`` -> ``("nn", 2)``."""
    if name.strip().lower() == "dgd":
        return "dgd", 0
    match = re.fullmatch(r"(?:a?nn)-?(\d+)", name.strip().lower())
    if not match:
        raise ValueError(f"cannot parse method {name!r}")
    return "nn", int(match.group(1))


@dataclass
class IterationRecord:
    t: int
    F_value: float
    grad_norm: float
    weighted_grad_norm: float
    rel_error: float
    comm_exchanges_cumulative: int
    alpha_current: float
    stage: int = 0
    max_local_grad_norm: float = float("nan")


@dataclass
class SolverResult:
    trace: list[IterationRecord]
    y_final: np.ndarray
    converged: bool
    ledger: CommLedger
    iterates: list | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return self.trace[-1].t


def dgd_step(prob: PenalizedProblem, y, g=None):
    """Unit-step gradient descent on F: ``x_i <- w_ii x_i + sum_j w_ij x_j - alpha grad f_i(x_i)``."""
    if g is None:
        g = gradient(prob, y)
    return y - g


def nn_step(prob: PenalizedProblem, y, K: int, epsilon: float = 1.0, g=None, split=None):
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    res = nn_direction(prob, y, K, g=g, split=split)
    return y + epsilon * res.direction


def stepsize_rule(m, L, lam, Lam, F0_minus_Fstar) -> float:
    """``min(1, sqrt(3 m lam^(5/2) / (L Lam^3 sqrt(F0 - F*))))``; 1 when L or the gap is 0."""
    if m <= 0 or lam <= 0 or Lam <= 0:
        raise ValueError("m, lambda and Lambda must be positive")
    if L < 0 or F0_minus_Fstar < 0:
        raise ValueError("L and F(y0) - F(y*) must be nonnegative")
    denom = L * Lam**3 * math.sqrt(F0_minus_Fstar)
    if denom == 0:
        return 1.0
    return min(1.0, math.sqrt(3.0 * m * lam**2.5 / denom))


def _local_norms(g):
    return np.sqrt(np.einsum("ip,ip->i", g, g))


def run_solver(
    prob: PenalizedProblem,
    y0,
    cfg: SolverConfig,
    *,
    x_star=None,
    stop_error: float | None = None,
    keep_iterates: bool = False,
    stage: int = 0,
    t_offset: int = 0,
    comm_offset: int = 0,
) -> SolverResult:
    """Iterate until every node's ``||g_i|| < tol`` or ``max_iters``.

    At least one iteration always runs.  ``stop_error`` additionally stops as
    soon as the relative error to ``x_star`` drops below it.  The trace holds
    the entry state and one record per iteration; ``weighted_grad_norm`` at
    iteration ``t`` is ``||D_{t-1}^{-1/2} g_t||`` (``D_0`` is used at entry).
    ``t_offset``/``comm_offset``/``stage`` let the adaptive driver chain runs.
    """
    y = prob.check_shape(y0).copy()
    ledger = CommLedger(prob.topo)
    ledger.total = comm_offset
    g = gradient(prob, y)
    split = split_blocks(prob, y)
    F = penalized_value(prob, y)

    def record(t, F, g, split_prev):
        local = _local_norms(g)
        return IterationRecord(
            t=t_offset + t,
            F_value=F,
            grad_norm=float(np.linalg.norm(g)),
            weighted_grad_norm=weighted_gradient_norm(split_prev, g),
            rel_error=relative_error(y, x_star) if x_star is not None else float("nan"),
            comm_exchanges_cumulative=ledger.total,
            alpha_current=prob.alpha,
            stage=stage,
            max_local_grad_norm=float(local.max()),
        )

    trace = [record(0, F, g, split)]
    iterates = [y.copy()] if keep_iterates else None
    converged = False
    rising = 0
    for t in range(1, cfg.max_iters + 1):
        if cfg.method == "dgd":
            y = dgd_step(prob, y, g)
            rounds = 1
        else:
            res = nn_direction(prob, y, cfg.K, g=g, split=split)
            y = y + cfg.epsilon * res.direction
            # one exchange of x_i for the gradient, then K of d^(k)
            rounds = 1 + res.exchange_rounds
        ledger.record_rounds(rounds)
        split_prev = split
        g = gradient(prob, y)
        split = split_blocks(prob, y)
        F_new = penalized_value(prob, y)
        rising = rising + 1 if F_new > F else 0
        F = F_new
        trace.append(record(t, F, g, split_prev))
        if keep_iterates:
            iterates.append(y.copy())
        if not np.isfinite(F):
            raise DivergenceError(f"{cfg.label}: non-finite objective at t={t}", trace)
        if rising >= DIVERGENCE_WINDOW:
            raise DivergenceError(
                f"{cfg.label}: F increased for {DIVERGENCE_WINDOW} consecutive iterations (t={t})", trace
            )
        if trace[-1].max_local_grad_norm < cfg.tol:
            converged = True
            break
        if stop_error is not None and trace[-1].rel_error < stop_error:
            break
    return SolverResult(trace=trace, y_final=y, converged=converged, ledger=ledger, iterates=iterates)


def hessian_operator(prob: PenalizedProblem, y) -> LinearOperator:
    """``H(y)`` as a blockwise linear operator on flattened stacked vectors."""
    hess = prob.objectives.hessians(y)
    n, p = prob.n, prob.p

    def matvec(v):
        v = v.reshape(n, p)
        out = prob.w.laplacian_apply(v) + prob.alpha * np.einsum("ipq,iq->ip", hess, v)
        return out.ravel()

    return LinearOperator((n * p, n * p), matvec=matvec, dtype=float)


def reference_solve(prob: PenalizedProblem, y0=None, tol: float = 1e-12, max_iters: int = 200):
    """High-accuracy minimizer of F by damped Newton with conjugate-gradient inner solves.

    Only used for retrospective diagnostics (``F(y*)`` and distances to the
    penalized optimum).  Stops when ``||g|| <= tol * max(1, ||g_0||)``.
    """
    y = np.zeros((prob.n, prob.p)) if y0 is None else prob.check_shape(y0).copy()
    g = gradient(prob, y)
    g0 = max(1.0, float(np.linalg.norm(g)))
    F = penalized_value(prob, y)
    for _ in range(max_iters):
        if np.linalg.norm(g) <= tol * g0:
            break
        split = split_blocks(prob, y)
        n, p = prob.n, prob.p
        precond = LinearOperator((n * p, n * p), matvec=lambda v: split.solve_D(v.reshape(n, p)).ravel())
        step, _ = cg(hessian_operator(prob, y), -g.ravel(), rtol=1e-14, atol=0.0, maxiter=20 * n * p, M=precond)
        step = step.reshape(n, p)
        slope = float(np.sum(g * step))
        s = 1.0
        while True:
            y_new = y + s * step
            F_new = penalized_value(prob, y_new)
            if F_new <= F + 1e-4 * s * slope or s < 1e-10:
                break
            s *= 0.5
        y, F = y_new, F_new
        g = gradient(prob, y)
    return y
