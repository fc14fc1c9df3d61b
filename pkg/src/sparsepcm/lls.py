"""Log-least-squares completion on the comparison-graph Laplacian."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .core import (
    DEFAULT_MAX_DENSE_N,
    ComparisonSet,
    ConvergenceError,
    DisconnectedGraphWarning,
    Gauge,
    PcmError,
    ScoreVector,
    complete_from_scores,
)


@dataclass(eq=False)
class LaplacianSystem:
    """Normal equations ``L x = b`` stored as COO triplets plus the right-hand side."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: np.ndarray
    component_labels: np.ndarray

    def matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, self.n))

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1 if self.n else 0


def undirected_targets(obs: ComparisonSet):
    """Collapse ordered pairs to unordered ones ``(i < j, log-target)``.

    Pairs observed in both directions get the mean of log a_ij and -log a_ji,
    i.e. the log of the geometric mean of a_ij and 1/a_ji.
    """
    t = obs.log_ratios()
    flip = obs.src > obs.dst
    lo = np.where(flip, obs.dst, obs.src)
    hi = np.where(flip, obs.src, obs.dst)
    y = np.where(flip, -t, t)
    key = lo * obs.n + hi
    uniq, inv = np.unique(key, return_inverse=True)
    if len(uniq) == len(key):
        order = np.argsort(key, kind="stable")
        return lo[order], hi[order], y[order]
    y_mean = np.bincount(inv, weights=y) / np.bincount(inv)
    return uniq // obs.n, uniq % obs.n, y_mean


def assemble(obs: ComparisonSet) -> LaplacianSystem:
    if obs.mode != "cardinal":
        raise PcmError("LLS needs cardinal ratios; use btl.fit for win counts")
    n = obs.n
    i, j, y = undirected_targets(obs)
    deg = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    has = np.flatnonzero(deg)
    rows = np.concatenate([has, i, j])
    cols = np.concatenate([has, j, i])
    vals = np.concatenate([deg[has].astype(float), -np.ones(len(i)), -np.ones(len(i))])
    rhs = np.bincount(i, weights=y, minlength=n) - np.bincount(j, weights=y, minlength=n)
    adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return LaplacianSystem(n, rows, cols, vals, rhs, labels.astype(np.int64))


def conjugate_gradient(A, b, tol: float, max_iter: int, precond: np.ndarray | None = None):
    """Preconditioned CG for a symmetric positive semidefinite system with consistent ``b``.

    ``precond`` is the inverse diagonal (Jacobi). Returns ``(x, iterations)``.
    """
    x = np.zeros_like(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x, 0
    m = np.ones_like(b) if precond is None else precond
    r = b.copy()
    z = m * r
    p = z.copy()
    rz = r @ z
    for k in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        if res <= tol * b_norm:
            return x, k
        z = m * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not converge in {max_iter} iterations", float(np.linalg.norm(b - A @ x)))


def _center(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    means = np.bincount(labels, weights=x) / np.bincount(labels)
    return x - means[labels]


def solve(
    sys: LaplacianSystem,
    gauge: Gauge = "component",
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> ScoreVector:
    """Gauge-fixed least-squares scores: zero mean on every connected component.

    The zero-mean-per-component solution also has zero global mean, so both
    gauges share one solution; ``gauge`` records which invariant is promised.
    Isolated nodes get score 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = sys.n
    labels = sys.component_labels
    sizes = np.bincount(labels, minlength=sys.n_components) if n else np.zeros(0, int)
    if len(sizes) > 1:
        shown = sorted(sizes.tolist(), reverse=True)
        listing = ", ".join(map(str, shown[:20])) + (" ..." if len(shown) > 20 else "")
        warnings.warn(
            f"comparison graph has {len(sizes)} components (sizes {listing}); "
            "scores are gauge-fixed per component",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    L = sys.matrix()
    diag = L.diagonal()
    precond = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x, _ = conjugate_gradient(L, sys.rhs, tol, max_iter or 20 * max(n, 1), precond)
    return ScoreVector(_center(x, labels), gauge=gauge, components=labels.copy())


def lls_scores(obs: ComparisonSet, gauge: Gauge = "component", **kw) -> ScoreVector:
    return solve(assemble(obs), gauge=gauge, **kw)


def lls_complete(obs: ComparisonSet, max_dense_n: int | None = DEFAULT_MAX_DENSE_N):
    x = lls_scores(obs)
    return x, complete_from_scores(x, max_dense_n=max_dense_n)


def objective(x: np.ndarray, obs: ComparisonSet) -> float:
    """LLS objective sum (x_i - x_j - y_ij)^2 over merged unordered pairs."""
    i, j, y = undirected_targets(obs)
    r = x[i] - x[j] - y
    return float(r @ r)
