"""Bradley-Terry-Luce maximum likelihood from win counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.special import expit, log_expit

from .core import ComparisonSet, ConvergenceError, PcmError, ScoreVector

PROB_CLAMP = 1e-12


class MleDoesNotExist(PcmError):
    def __init__(self, item: int):
        super().__init__(
            f"MLE does not exist: item {item} is never beaten by the rest of its component "
            "(pass a positive l2_strength to regularize)"
        )
        self.item = item


class BtlDivergenceError(RuntimeError):
    pass


@dataclass
class BtlFitConfig:
    max_iter: int = 5000
    grad_tol: float = 1e-8
    step_rule: Literal["fixed", "backtracking"] = "backtracking"
    step_size: float = 1.0
    l2_strength: float = 0.0
    armijo_c: float = 1e-4
    shrink: float = 0.5

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be nonnegative")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


def _require_counts(obs: ComparisonSet):
    if obs.mode != "counts":
        raise PcmError("BTL needs win counts; use lls for cardinal ratios")


def _scores(x) -> np.ndarray:
    return x.scores if isinstance(x, ScoreVector) else np.asarray(x, dtype=float)


def win_probability(u):
    """sigma(u) clamped to [1e-12, 1 - 1e-12]."""
    return np.clip(expit(u), PROB_CLAMP, 1.0 - PROB_CLAMP)


def log_likelihood(x, obs: ComparisonSet) -> float:
    """Sum of c_ij log sigma(x_i - x_j) over stored pairs with c_ij > 0."""
    _require_counts(obs)
    s = _scores(x)
    keep = obs.values > 0
    u = s[obs.src[keep]] - s[obs.dst[keep]]
    return float(obs.values[keep] @ log_expit(u))


def gradient(x, obs: ComparisonSet) -> np.ndarray:
    _require_counts(obs)
    s = _scores(x)
    u = s[obs.src] - s[obs.dst]
    flow = obs.values * expit(-u)  # c_ij (1 - sigma(x_i - x_j))
    return np.bincount(obs.src, weights=flow, minlength=obs.n) - np.bincount(
        obs.dst, weights=flow, minlength=obs.n
    )


def comparison_components(obs: ComparisonSet) -> np.ndarray:
    keep = obs.values > 0
    adj = sparse.coo_matrix(
        (np.ones(keep.sum()), (obs.src[keep], obs.dst[keep])), shape=(obs.n, obs.n)
    )
    _, labels = connected_components(adj, directed=False)
    return labels


def check_mle_exists(obs: ComparisonSet) -> None:
    """Raise :class:`MleDoesNotExist` unless the win digraph is strongly connected per component.

    The named item belongs to a group that nobody else in its component beats.
    """
    _require_counts(obs)
    keep = obs.values > 0
    src, dst = obs.src[keep], obs.dst[keep]
    weak = comparison_components(obs)
    # edge loser -> winner: a source group in this orientation is never beaten from outside
    beaten_by = sparse.coo_matrix((np.ones(len(src)), (dst, src)), shape=(obs.n, obs.n))
    n_strong, strong = connected_components(beaten_by, directed=True, connection="strong")
    if n_strong == weak.max() + 1:
        return
    has_outside_winner = np.zeros(n_strong, dtype=bool)
    cross = strong[src] != strong[dst]
    has_outside_winner[strong[dst[cross]]] = True
    weak_sizes = np.bincount(weak)
    strong_sizes = np.bincount(strong)
    for item in range(obs.n):
        g = strong[item]
        if not has_outside_winner[g] and strong_sizes[g] < weak_sizes[weak[item]]:
            raise MleDoesNotExist(item)
    raise MleDoesNotExist(int(np.argmax(strong_sizes[strong] < weak_sizes[weak])))


def _objective(s, obs, l2):
    return log_likelihood(s, obs) - l2 * float(s @ s)


def _grad(s, obs, l2):
    return gradient(s, obs) - 2.0 * l2 * s


def curvature_bound(obs: ComparisonSet, l2: float) -> np.ndarray:
    """Diagonal D with -Hessian <= D everywhere: sum_j (c_ij + c_ji) / 2 + 2 l2.

    The likelihood Hessian is a weighted Laplacian with weights at most c / 4,
    and a Laplacian is dominated by twice its diagonal, so a unit step along
    D^-1 g never overshoots.
    """
    tot = np.bincount(obs.src, weights=obs.values, minlength=obs.n) + np.bincount(
        obs.dst, weights=obs.values, minlength=obs.n
    )
    return np.maximum(0.5 * tot + 2.0 * l2, 1e-12)


def fit(obs: ComparisonSet, cfg: BtlFitConfig | None = None) -> ScoreVector:
    """Diagonally scaled gradient ascent on the (optionally ridge-penalized) log-likelihood.

    The ascent direction is the gradient divided by a per-item curvature bound,
    which makes unit steps sensible whatever the count scale. Backtracking
    accepts a step when the Armijo condition holds, or when the directional
    derivative at the trial point is still nonnegative; for a concave
    objective the latter also guarantees ascent and stays decidable once
    likelihood differences fall below rounding.
    """
    cfg = cfg or BtlFitConfig()
    _require_counts(obs)
    if cfg.l2_strength == 0.0:
        check_mle_exists(obs)
    labels = comparison_components(obs)
    l2 = cfg.l2_strength
    scale = 1.0 / curvature_bound(obs, l2)
    s = np.zeros(obs.n)
    f = _objective(s, obs, l2)
    g = _grad(s, obs, l2)
    for _ in range(cfg.max_iter):
        gnorm = np.max(np.abs(g)) if len(g) else 0.0
        if gnorm <= cfg.grad_tol:
            break
        if not np.isfinite(gnorm) or gnorm > 1e15:
            raise BtlDivergenceError(f"gradient norm {gnorm:.3e}; reduce the step size")
        direction = scale * g
        slope = float(g @ direction)
        step = cfg.step_size
        while True:
            trial = s + step * direction
            f_trial = _objective(trial, obs, l2)
            g_trial = _grad(trial, obs, l2)
            if cfg.step_rule == "fixed":
                break
            if f_trial >= f + cfg.armijo_c * step * slope or float(g_trial @ direction) >= 0.0:
                break
            step *= cfg.shrink
            if step < 1e-300:
                raise ConvergenceError("line search failed", gnorm)
        if not np.isfinite(f_trial):
            raise BtlDivergenceError("log-likelihood became non-finite")
        s, f, g = trial, f_trial, g_trial
    else:
        gnorm = np.max(np.abs(g))
        if gnorm > cfg.grad_tol:
            raise ConvergenceError(f"BTL fit did not converge in {cfg.max_iter} iterations", gnorm)
    means = np.bincount(labels, weights=s) / np.bincount(labels)
    return ScoreVector(s - means[labels], gauge="component", components=labels)
