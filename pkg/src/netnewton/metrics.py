"""Error and communication-cost accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import Topology


def relative_error(y, x_star) -> float:
    """Mean over nodes of ``||x_i - x*||^2 / ||x*||^2``."""
    x_star = np.asarray(x_star, dtype=float)
    denom = float(np.dot(x_star, x_star))
    if denom == 0.0:
        raise ValueError("relative error is undefined for x* = 0")
    y = np.asarray(y, dtype=float)
    return float(np.mean(np.sum((y - x_star) ** 2, axis=1)) / denom)


def sends_per_round(topo: Topology) -> int:
    return topo.num_directed_edges


def comm_cost(method: str, K: int | None, t: int, topo: Topology) -> int:
    """Closed-form cumulative directed vector sends after ``t`` iterations.

    DGD sends ``|N_i|`` vectors per node per iteration, NN-K sends
    ``(K + 1) |N_i|``.  Divide by 2 for the per-pair count.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    rounds = 1 if method.lower() == "dgd" else K + 1
    return rounds * t * sends_per_round(topo)


@dataclass
class CommLedger:
    """Running tally of directed vector sends, one entry per iteration."""

    topo: Topology
    per_iteration: list[int] = field(default_factory=list)
    total: int = 0

    def record_rounds(self, rounds: int) -> int:
        """Log one iteration that did ``rounds`` neighbor exchanges; return the new total."""
        sends = rounds * sends_per_round(self.topo)
        self.per_iteration.append(sends)
        self.total += sends
        return self.total
