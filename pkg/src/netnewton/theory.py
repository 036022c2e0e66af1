"""
Convergence constants and retrospective checks of the rate bounds.

Nothing here gates a solver: every check reads a finished trace and reports
per-iteration margins.  Bounds are tested with ``SLACK`` absolute slack.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .penalty import PenalizedProblem, gradient
from .solvers import IterationRecord

SLACK = 1e-9


@dataclass(frozen=True)
class TheoryConstants:
    rho: float
    lam: float
    Lam: float
    zeta: float
    Gamma1: float
    Gamma2: float
    epsilon: float
    K: int
    t0: int | None
    notes: tuple[str, ...] = field(default=())

    @property
    def zeta_valid(self) -> bool:
        return 0.0 < self.zeta < 1.0

    @property
    def linear_factor(self) -> float:
        """``1 - eps + eps rho^(K+1)``, the limit of ``eta_t``."""
        return 1.0 - self.epsilon + self.epsilon * self.rho ** (self.K + 1)

    def eta(self, t) -> float:
        decay = (1.0 - self.zeta) ** ((t - 1) / 4.0) if self.Gamma1 else 0.0
        return self.linear_factor * (1.0 + self.Gamma1 * decay)


def _first_eta_below_one(c, gamma1, zeta, cap=10**9):
    if c >= 1.0:
        return None
    if gamma1 == 0.0:
        return 1
    if not 0.0 < zeta < 1.0:
        return None
    # c (1 + G (1-zeta)^((t-1)/4)) < 1  <=>  (t-1)/4 * ln(1-zeta) < ln((1/c - 1)/G)
    r = (1.0 / c - 1.0) / gamma1
    t = 1 if r > 1.0 else int(math.floor(4.0 * math.log(r) / math.log1p(-zeta))) + 1
    t = max(t, 1)
    eta = lambda s: c * (1.0 + gamma1 * (1.0 - zeta) ** ((s - 1) / 4.0))
    while t > 1 and eta(t - 1) < 1.0:
        t -= 1
    while eta(t) >= 1.0:
        t += 1
        if t > cap:
            return None
    return t


def compute_constants(delta, Delta, alpha, m, M, L, epsilon=1.0, K=0, F0_minus_Fstar=0.0) -> TheoryConstants:
    """Every constant of the rate analysis from the problem bounds.

    A ``zeta`` outside ``(0, 1)`` is reported in ``notes`` rather than raised.
    """
    if not 0.0 <= delta <= Delta < 1.0:
        raise ValueError(f"need 0 <= delta <= Delta < 1, got {delta}, {Delta}")
    if not 0.0 < m <= M:
        raise ValueError(f"need 0 < m <= M, got {m}, {M}")
    if L < 0:
        raise ValueError("L must be nonnegative")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    if K < 0:
        raise ValueError("K must be nonnegative")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    gap = max(F0_minus_Fstar, 0.0)

    rho = 2 * (1 - delta) / (2 * (1 - delta) + alpha * m)
    lam = 1.0 / (2 * (1 - delta) + alpha * M)
    floor_D = 2 * (1 - Delta) + alpha * m
    Lam = (1 - rho ** (K + 1)) / ((1 - rho) * floor_D)
    zeta = (2 - epsilon) * epsilon * alpha * m * lam - alpha * epsilon**3 * L * Lam**3 * math.sqrt(gap) / (
        6 * lam**1.5
    )
    Gamma1 = math.sqrt(alpha * epsilon * L * Lam) * gap**0.25 / (lam**0.75 * floor_D)
    Gamma2 = alpha * L * Lam**2 / (2 * lam * math.sqrt(floor_D))

    notes = []
    if not 0.0 < zeta < 1.0:
        notes.append(f"zeta={zeta:.6g} outside (0, 1); linear-rate and recursion bounds not evaluated")
    c = 1.0 - epsilon + epsilon * rho ** (K + 1)
    t0 = _first_eta_below_one(c, Gamma1, zeta)
    return TheoryConstants(
        rho=rho, lam=lam, Lam=Lam, zeta=zeta, Gamma1=Gamma1, Gamma2=Gamma2,
        epsilon=epsilon, K=K, t0=t0, notes=tuple(notes),
    )


def constants_for(prob: PenalizedProblem, epsilon=1.0, K=0, F0_minus_Fstar=0.0) -> TheoryConstants:
    ens = prob.objectives
    return compute_constants(
        prob.w.delta, prob.w.Delta, prob.alpha, ens.m, ens.M, ens.L, epsilon, K, F0_minus_Fstar
    )


@dataclass(frozen=True)
class PhaseInterval:
    """Range of ``||D_{t-1}^{-1/2} g_t||`` with quadratic progress.

    ``status`` is ``"bounded"``, ``"empty"`` (``eta_t >= 1``) or
    ``"unbounded"`` (``Gamma2 = 0``, no quadratic term).
    """

    lower: float
    upper: float
    status: str

    def contains(self, x) -> bool:
        if self.status == "empty":
            return False
        if self.status == "unbounded":
            return True
        return self.lower <= x < self.upper


def quadratic_phase_interval(constants: TheoryConstants, t) -> PhaseInterval:
    eta = constants.eta(t)
    before_t0 = constants.t0 is None or t < constants.t0
    if not 0.0 < eta < 1.0 or before_t0:
        return PhaseInterval(math.nan, math.nan, "empty")
    if constants.Gamma2 == 0.0:
        return PhaseInterval(0.0, math.inf, "unbounded")
    s = math.sqrt(eta)
    scale = constants.epsilon**2 * constants.Gamma2
    return PhaseInterval(s * (1 - s) / scale, (1 - s) / scale, "bounded")


@dataclass
class RateRow:
    t: int
    lhs: float
    rhs_linear: float
    rhs_quadratic: float
    in_quadratic_interval: bool
    violated: bool
    quadratic_claim_violated: bool = False


@dataclass
class RateReport:
    rows: list[RateRow]
    evaluated: bool
    notes: tuple[str, ...] = ()

    @property
    def violations(self) -> list[RateRow]:
        return [r for r in self.rows if r.violated]

    @property
    def quadratic_claim_violations(self) -> list[RateRow]:
        return [r for r in self.rows if r.quadratic_claim_violated]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "lhs", "rhs_linear", "rhs_quadratic", "in_quadratic_interval", "violated"])
            for r in self.rows:
                writer.writerow([r.t, repr(r.lhs), repr(r.rhs_linear), repr(r.rhs_quadratic),
                                 int(r.in_quadratic_interval), int(r.violated)])


def check_rate_bound(trace: list[IterationRecord], constants: TheoryConstants, *, start: int = 1) -> RateReport:
    """Test the weighted-gradient recursion along a trace.

    Row ``t`` compares ``||D_t^{-1/2} g_{t+1}||`` with
    ``eta_t ||D_{t-1}^{-1/2} g_t|| + eps^2 Gamma2 ||D_{t-1}^{-1/2} g_t||^2``.
    Rows inside the quadratic-phase interval are also tested against the
    quadratic-rate claim.  Use ``start=0`` when ``D`` is constant so the
    entry record is a genuine weighted norm.
    """
    if constants.Gamma1 and not constants.zeta_valid:
        return RateReport(rows=[], evaluated=False, notes=constants.notes)
    eps2g2 = constants.epsilon**2 * constants.Gamma2
    rows = []
    for rec, nxt in zip(trace[start:], trace[start + 1:]):
        t = rec.t - trace[0].t
        prev = rec.weighted_grad_norm
        lin = constants.eta(t) * prev
        quad = eps2g2 * prev**2
        lhs = nxt.weighted_grad_norm
        interval = quadratic_phase_interval(constants, t)
        inside = interval.status == "bounded" and interval.contains(prev)
        quad_bad = False
        if inside:
            quad_bad = lhs > eps2g2 / (1 - math.sqrt(constants.eta(t))) * prev**2 + SLACK
        rows.append(RateRow(t, lhs, lin, quad, inside, lhs > lin + quad + SLACK, quad_bad))
    return RateReport(rows=rows, evaluated=True, notes=constants.notes)


@dataclass
class LinearRateReport:
    margins: np.ndarray
    evaluated: bool

    @property
    def violations(self) -> int:
        return int(np.sum(self.margins < -SLACK)) if self.evaluated else 0


def check_linear_rate(trace: list[IterationRecord], constants: TheoryConstants, F_star: float) -> LinearRateReport:
    """``F(y_t) - F* <= (1 - zeta)^t (F(y_0) - F*)`` at every recorded ``t``."""
    if not constants.zeta_valid:
        return LinearRateReport(np.array([]), False)
    gap0 = trace[0].F_value - F_star
    margins = np.array(
        [(1 - constants.zeta) ** (r.t - trace[0].t) * gap0 - (r.F_value - F_star) for r in trace]
    )
    return LinearRateReport(margins, True)


class TaylorRemainderViolation(AssertionError):
    pass


def check_taylor_remainder(prob: PenalizedProblem, y_t, y_t1, *, strict: bool = True) -> tuple[float, float]:
    """``(||g_{t+1} - g_t - H_t (y_{t+1} - y_t)||, (alpha L / 2) ||y_{t+1} - y_t||^2)``.

    Raises :class:`TaylorRemainderViolation` when the first exceeds the second
    by more than ``SLACK`` and ``strict`` is set.
    """
    y_t = prob.check_shape(y_t)
    y_t1 = prob.check_shape(y_t1)
    step = y_t1 - y_t
    hess = prob.objectives.hessians(y_t)
    h_step = prob.w.laplacian_apply(step) + prob.alpha * np.einsum("ipq,iq->ip", hess, step)
    residual = float(np.linalg.norm(gradient(prob, y_t1) - gradient(prob, y_t) - h_step))
    bound = 0.5 * prob.alpha * prob.objectives.L * float(np.sum(step * step))
    if strict and residual > bound + SLACK:
        raise TaylorRemainderViolation(f"remainder {residual:.3e} exceeds bound {bound:.3e}")
    return residual, bound
