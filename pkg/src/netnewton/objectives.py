"""
Local objective functions and the two experiment families.

Every local objective exposes ``value``, ``gradient`` and ``hessian`` plus the
curvature constants ``m`` (Hessian eigenvalue floor), ``M`` (ceiling) and ``L``
(Hessian Lipschitz constant).  Ensembles bundle one objective per node and
add batched evaluation over a stacked iterate of shape ``(n, p)``; the
solvers only ever talk to ensembles.

Random draws use ``numpy.random.Generator(PCG64(seed))`` and consume the
stream in the order written in each generator's docstring, so a seed pins an
ensemble bit for bit.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

# sup_z |d/dz sigma(z)(1 - sigma(z))|
LOGISTIC_THIRD_DERIV_BOUND = 1.0 / (6.0 * math.sqrt(3.0))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class LocalObjective:
    """Contract for a single node's smooth strongly convex cost."""

    m: float
    M: float
    L: float
    dim: int

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError


class QuadraticObjective(LocalObjective):
    """``f(x) = 0.5 x^T diag(a) x + b^T x``."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be vectors of equal length")
        if np.any(self.a <= 0):
            raise ValueError("diagonal entries must be positive")
        self.dim = self.a.size
        self.m = float(self.a.min())
        self.M = float(self.a.max())
        self.L = 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * np.dot(self.a * x, x) + np.dot(self.b, x))

    def gradient(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b

    def hessian(self, x=None):
        return np.diag(self.a)


class LogisticObjective(LocalObjective):
    """Regularized logistic loss on one node's samples.

    ``f(x) = (lam / (2 n)) ||x||^2 + sum_l log(1 + exp(-v_l u_l^T x))``
    where ``n`` is the network size the regularizer is split over.
    """

    def __init__(self, u, v, lam, n_nodes):
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        if self.u.ndim != 2 or self.v.shape != (self.u.shape[0],):
            raise ValueError("u must be (q, p) and v must be (q,)")
        if lam <= 0:
            raise ValueError("lam must be positive")
        self.lam = float(lam)
        self.n_nodes = int(n_nodes)
        self.reg = self.lam / self.n_nodes
        self.dim = self.u.shape[1]
        sq = np.einsum("lp,lp->l", self.u, self.u)
        self.m = self.reg
        self.M = self.reg + 0.25 * float(sq.sum())
        self.L = LOGISTIC_THIRD_DERIV_BOUND * float(np.sum(sq**1.5))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        z = self.v * (self.u @ x)
        return float(0.5 * self.reg * np.dot(x, x) + np.sum(np.logaddexp(0.0, -z)))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        z = self.v * (self.u @ x)
        return self.reg * x - self.u.T @ (self.v * expit(-z))

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        z = self.v * (self.u @ x)
        s = expit(z) * expit(-z)
        return self.reg * np.eye(self.dim) + (self.u * s[:, None]).T @ self.u


class ObjectiveEnsemble(Sequence):
    """One local objective per node with batched evaluation.

    The generic implementation loops over nodes; the quadratic and logistic
    families override the batched methods with vectorized versions.
    """

    is_quadratic = False

    def __init__(self, objectives):
        self._objs = list(objectives)
        if not self._objs:
            raise ValueError("empty ensemble")
        dims = {o.dim for o in self._objs}
        if len(dims) != 1:
            raise ValueError(f"mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()

    def __len__(self):
        return len(self._objs)

    def __getitem__(self, i):
        return self._objs[i]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def m(self) -> float:
        return min(o.m for o in self._objs)

    @property
    def M(self) -> float:
        return max(o.M for o in self._objs)

    @property
    def L(self) -> float:
        return max(o.L for o in self._objs)

    def values(self, y):
        return np.array([o.value(x) for o, x in zip(self._objs, y)])

    def gradients(self, y):
        return np.stack([o.gradient(x) for o, x in zip(self._objs, y)])

    def hessians(self, y):
        return np.stack([o.hessian(x) for o, x in zip(self._objs, y)])


def as_ensemble(objectives) -> ObjectiveEnsemble:
    if isinstance(objectives, ObjectiveEnsemble):
        return objectives
    return ObjectiveEnsemble(objectives)


class QuadraticEnsemble(ObjectiveEnsemble):
    """Diagonal quadratics, ``a`` and ``b`` both of shape ``(n, p)``."""

    is_quadratic = True

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        super().__init__(QuadraticObjective(ai, bi) for ai, bi in zip(self.a, self.b))

    @property
    def m(self):
        return float(self.a.min())

    @property
    def M(self):
        return float(self.a.max())

    @property
    def L(self):
        return 0.0

    def values(self, y):
        return 0.5 * np.einsum("ip,ip->i", self.a * y, y) + np.einsum("ip,ip->i", self.b, y)

    def gradients(self, y):
        return self.a * y + self.b

    def hessians(self, y=None):
        n, p = self.a.shape
        h = np.zeros((n, p, p))
        idx = np.arange(p)
        h[:, idx, idx] = self.a
        return h


class LogisticEnsemble(ObjectiveEnsemble):
    """Logistic losses with ``u`` of shape ``(n, q, p)`` and labels ``v`` of shape ``(n, q)``."""

    def __init__(self, u, v, lam):
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.lam = float(lam)
        n = self.u.shape[0]
        self.reg = self.lam / n
        super().__init__(LogisticObjective(ui, vi, lam, n) for ui, vi in zip(self.u, self.v))

    def _margins(self, y):
        return self.v * np.einsum("iqp,ip->iq", self.u, y)

    def values(self, y):
        z = self._margins(y)
        return 0.5 * self.reg * np.einsum("ip,ip->i", y, y) + np.logaddexp(0.0, -z).sum(axis=1)

    def gradients(self, y):
        z = self._margins(y)
        return self.reg * y - np.einsum("iqp,iq->ip", self.u, self.v * expit(-z))

    def hessians(self, y):
        z = self._margins(y)
        s = expit(z) * expit(-z)
        h = np.einsum("iqp,iq,iqr->ipr", self.u, s, self.u)
        idx = np.arange(self.dim)
        h[:, idx, idx] += self.reg
        return h

    def to_csv(self, path):
        """Write one row per sample: ``node, label, f0, ..., f{p-1}``."""
        n, q, p = self.u.shape
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "label"] + [f"f{k}" for k in range(p)])
            for i in range(n):
                for l in range(q):
                    writer.writerow([i, int(self.v[i, l])] + [repr(float(x)) for x in self.u[i, l]])

    @classmethod
    def from_csv(cls, path, lam):
        rows: dict[int, list] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            p = len(header) - 2
            for row in reader:
                rows.setdefault(int(row[0]), []).append((float(row[1]), [float(x) for x in row[2:]]))
        n = len(rows)
        if sorted(rows) != list(range(n)):
            raise ValueError("node indices in CSV must be 0..n-1")
        counts = {len(r) for r in rows.values()}
        if len(counts) != 1:
            raise ValueError("every node must hold the same number of samples")
        q = counts.pop()
        u = np.empty((n, q, p))
        v = np.empty((n, q))
        for i in range(n):
            for l, (label, feats) in enumerate(rows[i]):
                v[i, l] = label
                u[i, l] = feats
        return cls(u, v, lam)


@dataclass(frozen=True)
class QuadraticEnsembleConfig:
    p: int = 4
    xi: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.p % 2:
            raise ValueError(f"p must be a positive even integer, got {self.p}")
        if self.xi < 0:
            raise ValueError(f"xi must be nonnegative, got {self.xi}")


@dataclass(frozen=True)
class LogisticDataConfig:
    p: int = 10
    q_i: int = 50
    mu: float = 3.0
    sigma_plus: float = 1.0
    sigma_minus: float = 1.0
    lam: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.q_i < 1:
            raise ValueError("q_i must be at least 1")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.sigma_plus <= 0 or self.sigma_minus <= 0:
            raise ValueError("class standard deviations must be positive")
        if self.p < 1:
            raise ValueError("p must be positive")


def generate_quadratic(n, cfg: QuadraticEnsembleConfig, rng=None) -> QuadraticEnsemble:
    """Random diagonal quadratics with condition exponent ``cfg.xi``.

    Draw order from the generator: exponents for the first ``p/2`` diagonal
    entries, shape ``(n, p/2)``, integers in ``[0, xi]``; exponents for the
    last ``p/2``, same shape; then linear terms ``b``, shape ``(n, p)``,
    uniform on ``[0, 1)``.  The first half of the diagonal is ``10**-k``, the
    second half ``10**k``.  Pass ``rng`` to continue an existing stream
    instead of seeding from ``cfg.seed``.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    half = cfg.p // 2
    lo = rng.integers(0, cfg.xi + 1, size=(n, half))
    hi = rng.integers(0, cfg.xi + 1, size=(n, half))
    b = rng.uniform(0.0, 1.0, size=(n, cfg.p))
    a = np.concatenate([10.0 ** (-lo), 10.0**hi], axis=1)
    return QuadraticEnsemble(a, b)


def quadratic_optimum(objectives) -> np.ndarray:
    """Minimizer of ``sum_i f_i`` for quadratic objectives, in closed form."""
    ens = as_ensemble(objectives)
    if not ens.is_quadratic and not all(isinstance(o, QuadraticObjective) for o in ens):
        raise TypeError("closed-form optimum needs quadratic objectives")
    a_sum = np.sum([o.a for o in ens], axis=0)
    b_sum = np.sum([o.b for o in ens], axis=0)
    if np.any(a_sum <= 0):
        raise np.linalg.LinAlgError("sum of quadratic terms is singular")
    return -b_sum / a_sum


def generate_logistic(n, cfg: LogisticDataConfig) -> LogisticEnsemble:
    """Synthetic two-class logistic regression data split over ``n`` nodes.

    Draw order: labels for all samples, shape ``(n, q_i)``, as integers in
    ``{0, 1}`` mapped to ``{-1, +1}``; then standard normals of shape
    ``(n, q_i, p)``, scaled to ``N(+mu, sigma_plus)`` or ``N(-mu,
    sigma_minus)`` according to the label.
    """
    rng = make_rng(cfg.seed)
    v = 2.0 * rng.integers(0, 2, size=(n, cfg.q_i)) - 1.0
    z = rng.standard_normal(size=(n, cfg.q_i, cfg.p))
    pos = (v > 0)[..., None]
    u = np.where(pos, cfg.mu + cfg.sigma_plus * z, -cfg.mu + cfg.sigma_minus * z)
    return LogisticEnsemble(u, v, cfg.lam)


def check_derivatives(obj: LocalObjective, x, h: float = 1e-5) -> float:
    """Worst normwise relative error of central differences against the analytic derivatives.

    Compares the finite-difference gradient of ``value`` with ``gradient``
    and the finite-difference Jacobian of ``gradient`` with ``hessian``.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    p = x.size
    eye = np.eye(p)
    fd_grad = np.array([(obj.value(x + h * e) - obj.value(x - h * e)) / (2 * h) for e in eye])
    fd_hess = np.stack([(obj.gradient(x + h * e) - obj.gradient(x - h * e)) / (2 * h) for e in eye], axis=1)
    grad = obj.gradient(x)
    hess = obj.hessian(x)

    def rel(approx, exact):
        scale = max(np.max(np.abs(exact)), 1e-300)
        return float(np.max(np.abs(approx - exact)) / scale)

    return max(rel(fd_grad, grad), rel(fd_hess, hess))
