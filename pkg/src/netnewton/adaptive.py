"""
Adaptive penalty schedule (ANN-K, and adaptive DGD through the same driver).

Each stage runs the fixed-alpha solver to the gradient tolerance, then the
nodes agree through completion flags that every one of them is done, and
alpha shrinks by ``eta``.  Flags are broadcast instantaneously at round
boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .penalty import PenalizedProblem, gradient
from .solvers import IterationRecord, SolverConfig, run_solver

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnConfig:
    alpha0: float = 1e-1
    eta: float = 0.1
    tol: float = 1e-3
    K: int = 0
    epsilon: float = 1.0
    outer_rounds: int = 3
    max_iters_per_stage: int = 5000
    method: str = "nn"

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.outer_rounds < 1:
            raise ValueError("outer_rounds must be at least 1")

    def alphas(self) -> list[float]:
        return [self.alpha0 * self.eta**s for s in range(self.outer_rounds)]

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.method, self.K, self.epsilon, self.tol, self.max_iters_per_stage)


@dataclass(frozen=True)
class SignalState:
    """``flags[i, j] == 1`` once node ``i`` has heard that node ``j`` finished."""

    flags: np.ndarray

    @classmethod
    def fresh(cls, n: int) -> SignalState:
        return cls(np.zeros((n, n), dtype=np.int8))

    @property
    def n(self) -> int:
        return self.flags.shape[0]

    def all_set(self) -> bool:
        return bool(self.flags.all())


def signal_round(state: SignalState, completed) -> tuple[SignalState, bool]:
    """Nodes in ``completed`` set their own flag and broadcast it to everyone.

    Returns the new state and whether every node now holds every flag, which
    is the condition for shrinking alpha.  The caller resets the flags.
    """
    flags = state.flags.copy()
    done = sorted(set(completed))
    if any(not 0 <= j < state.n for j in done):
        raise ValueError("completed nodes out of range")
    flags[done, done] = 1
    # broadcast: every node learns s_jj = 1 for each j that has signaled
    signaled = np.diag(flags).astype(bool)
    flags[:, signaled] = 1
    new = SignalState(flags)
    return new, new.all_set()


@dataclass
class StageInfo:
    stage: int
    alpha: float
    start_t: int
    end_t: int
    converged: bool
    final_rel_error: float


@dataclass
class AnnResult:
    trace: list[IterationRecord]
    y_final: np.ndarray
    stages: list[StageInfo] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.trace[-1].t


def ann_run(prob_template: PenalizedProblem, y0, cfg: AnnConfig, *, x_star=None) -> AnnResult:
    """Run ``cfg.outer_rounds`` penalty stages with alpha ``alpha0 * eta**s``.

    Every stage warm-starts from the previous stage's final iterate.  The
    combined trace keeps the entry record of stage 0 only, so ``t`` and the
    communication count run on continuously.  A stage that hits its
    iteration cap is logged and the schedule moves on anyway.
    """
    scfg = cfg.solver_config()
    y = prob_template.check_shape(y0).copy()
    trace: list[IterationRecord] = []
    stages = []
    state = SignalState.fresh(prob_template.n)
    t_offset = 0
    comm = 0
    alpha = cfg.alpha0
    for s in range(cfg.outer_rounds):
        prob = prob_template.with_alpha(alpha)
        res = run_solver(prob, y, scfg, x_star=x_star, stage=s, t_offset=t_offset, comm_offset=comm)
        trace.extend(res.trace if s == 0 else res.trace[1:])
        y = res.y_final
        t_offset = res.trace[-1].t
        comm = res.trace[-1].comm_exchanges_cumulative
        stages.append(StageInfo(s, alpha, res.trace[0].t, t_offset, res.converged, res.trace[-1].rel_error))

        finished = [i for i, gn in enumerate(_local_grad_norms(prob, y)) if gn < scfg.tol]
        state, reduce = signal_round(state, finished)
        if not reduce:
            log.warning("stage %d (alpha=%g) hit the iteration cap before all nodes signaled", s, alpha)
        state = SignalState.fresh(prob_template.n)
        alpha *= cfg.eta
    return AnnResult(trace=trace, y_final=y, stages=stages)


def _local_grad_norms(prob, y):
    g = gradient(prob, y)
    return np.sqrt(np.einsum("ip,ip->i", g, g))
