"""Pairwise comparison matrices, comparison graphs and consistency diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

Mode = Literal["cardinal", "counts"]
Gauge = Literal["global", "component"]

# Saaty's random index, n = 1..15.
RANDOM_INDEX = {
    1: 0.0, 2: 0.0, 3: 0.58, 4: 0.90, 5: 1.12, 6: 1.24, 7: 1.32, 8: 1.41,
    9: 1.45, 10: 1.49, 11: 1.51, 12: 1.48, 13: 1.56, 14: 1.57, 15: 1.59,
}

# Largest exponent that exp() maps to a finite double.
_MAX_LOG = math.log(np.finfo(np.float64).max)

DEFAULT_MAX_DENSE_N = 20_000


class PcmError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class ResourceGuardError(MemoryError):
    """Raised instead of allocating a dense n x n matrix above the configured size."""


class DisconnectedGraphWarning(UserWarning):
    pass


@dataclass(eq=False)
class ComparisonSet:
    """Observed sparse comparisons.

    Stored as parallel arrays ``src``, ``dst``, ``values``. In ``cardinal``
    mode ``values[k]`` is the ratio a_ij > 0; in ``counts`` mode it is the
    number of times ``src`` beat ``dst``.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    values: np.ndarray
    mode: Mode = "cardinal"

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.mode not in ("cardinal", "counts"):
            raise PcmError(f"unknown mode {self.mode!r}")
        if not (len(self.src) == len(self.dst) == len(self.values)):
            raise PcmError("src, dst and values must have equal length")
        if self.n < 0:
            raise PcmError("n must be nonnegative")
        if len(self.src):
            lo = min(self.src.min(), self.dst.min())
            hi = max(self.src.max(), self.dst.max())
            if lo < 0 or hi >= self.n:
                raise PcmError(f"node ids must lie in [0, {self.n})")
            loops = np.flatnonzero(self.src == self.dst)
            if len(loops):
                raise PcmError(f"self-comparison at node {self.src[loops[0]]}")
            keys = self.src * self.n + self.dst
            uniq, counts = np.unique(keys, return_counts=True)
            if np.any(counts > 1):
                k = uniq[np.argmax(counts > 1)]
                raise PcmError(f"duplicate ordered pair ({k // self.n}, {k % self.n})")
        if self.mode == "cardinal":
            bad = ~(np.isfinite(self.values) & (self.values > 0))
        else:
            bad = ~np.isfinite(self.values) | (self.values < 0) | (self.values != np.round(self.values))
        if np.any(bad):
            k = int(np.argmax(bad))
            raise PcmError(
                f"invalid {self.mode} value {self.values[k]!r} on ({self.src[k]}, {self.dst[k]})"
            )

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]], mode: Mode = "cardinal"):
        rows = list(edges)
        if not rows:
            return cls(n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), mode)
        i, j, v = zip(*rows)
        return cls(n, np.array(i), np.array(j), np.array(v, dtype=float), mode)

    @classmethod
    def from_counts(cls, n: int, rows: Iterable[tuple[int, int, float, float]]):
        """Build a counts set from ``(i, j, wins_i, wins_j)`` rows; repeated pairs are summed."""
        wins: dict[tuple[int, int], float] = {}
        for i, j, wi, wj in rows:
            wins[(i, j)] = wins.get((i, j), 0) + wi
            wins[(j, i)] = wins.get((j, i), 0) + wj
        edges = [(i, j, c) for (i, j), c in sorted(wins.items()) if c > 0]
        return cls.from_edges(n, edges, mode="counts")

    def __len__(self) -> int:
        return len(self.src)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.values.tolist()))

    def log_ratios(self) -> np.ndarray:
        if self.mode != "cardinal":
            raise PcmError("log-ratios are only defined for cardinal comparisons")
        return np.log(self.values)

    def subset(self, index) -> "ComparisonSet":
        return ComparisonSet(self.n, self.src[index], self.dst[index], self.values[index], self.mode)

    def relabel(self, perm: Sequence[int]) -> "ComparisonSet":
        """Rename node ``i`` to ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return ComparisonSet(self.n, perm[self.src], perm[self.dst], self.values, self.mode)


@dataclass(eq=False)
class DensePcm:
    """An n x n positive matrix; the diagonal is forced to 1 on construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise PcmError(f"PCM must be square, got shape {a.shape}")
        np.fill_diagonal(a, 1.0)
        self.entries = a

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, idx):
        return self.entries[idx]


@dataclass(eq=False)
class ScoreVector:
    scores: np.ndarray
    gauge: Gauge = "global"
    components: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.components is None:
            self.components = np.zeros(len(self.scores), dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.scores)

    def group_means(self) -> np.ndarray:
        groups = np.zeros(self.n, np.int64) if self.gauge == "global" else self.components
        sums = np.bincount(groups, weights=self.scores)
        sizes = np.bincount(groups)
        return sums[sizes > 0] / sizes[sizes > 0]

    def log_ratio(self, i, j):
        return self.scores[i] - self.scores[j]


@dataclass
class Violation:
    kind: Literal["positivity", "diagonal", "reciprocity", "shape"]
    i: int
    j: int
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.valid:
            return "valid PCM"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  {v.kind} at ({v.i}, {v.j}): {v.detail}" for v in self.violations]
        return "\n".join(lines)


@dataclass
class ConsistencyReport:
    n: int
    lambda_max: float
    ci: float
    cr: float | None
    ri_used: float | None
    max_triangle_residual: float

    def __str__(self) -> str:
        cr = "unavailable (n > 15)" if self.cr is None else f"{self.cr:.6g}"
        return (
            f"n = {self.n}\nlambda_max = {self.lambda_max:.10g}\nCI = {self.ci:.6g}\n"
            f"CR = {cr}\nmax triangle residual = {self.max_triangle_residual:.6g}"
        )


def validate(pcm: DensePcm, tol: float = 1e-9) -> ValidationReport:
    """Check positivity, unit diagonal and reciprocity (relative tolerance ``tol``)."""
    a = pcm.entries
    report = ValidationReport()
    for i, j in zip(*np.nonzero(~(np.isfinite(a) & (a > 0)))):
        report.violations.append(Violation("positivity", int(i), int(j), f"a = {a[i, j]!r}"))
    for i in np.flatnonzero(np.diag(a) != 1.0):
        report.violations.append(Violation("diagonal", int(i), int(i), f"a = {a[i, i]!r}"))
    with np.errstate(invalid="ignore", over="ignore"):
        prod = a * a.T
    iu, ju = np.triu_indices(pcm.n, k=1)
    off = np.abs(prod[iu, ju] - 1.0) > tol
    for i, j in zip(iu[off], ju[off]):
        report.violations.append(
            Violation("reciprocity", int(i), int(j), f"a_ij * a_ji = {prod[i, j]!r}")
        )
    return report


def validate_comparisons(obs: ComparisonSet, tol: float = 1e-9) -> ValidationReport:
    """Reciprocity check on pairs observed in both directions of a cardinal set."""
    report = ValidationReport()
    value = {(i, j): v for i, j, v in obs.edges}
    for (i, j), v in value.items():
        if i < j and (j, i) in value:
            prod = v * value[(j, i)]
            if abs(prod - 1.0) > tol:
                report.violations.append(
                    Violation("reciprocity", i, j, f"a_ij * a_ji = {prod!r}")
                )
    return report


def principal_eigen(pcm: DensePcm, max_iter: int = 10_000, tol: float = 1e-10):
    """Perron eigenpair of a positive matrix by power iteration from the uniform vector.

    Returns ``(lambda_max, w)`` with ``w`` summing to one.
    """
    a = pcm.entries
    n = pcm.n
    w = np.full(n, 1.0 / n)
    residual = np.inf
    for _ in range(max_iter):
        y = a @ w
        lam = y.sum()  # w sums to 1
        residual = np.max(np.abs(y - lam * w))
        if residual <= tol * lam:
            return float(lam), w
        w = y / lam
    raise ConvergenceError("power iteration did not converge", residual)


def consistency_report(pcm: DensePcm) -> ConsistencyReport:
    n = pcm.n
    lam, _ = principal_eigen(pcm)
    ci = (lam - n) / (n - 1) if n > 2 else 0.0
    ri = RANDOM_INDEX.get(n)
    if ri is None:
        cr = None
    elif ri == 0.0:
        cr = 0.0
    else:
        cr = ci / ri
    return ConsistencyReport(n, lam, ci, cr, ri, max_triangle_residual(pcm))


def max_triangle_residual(pcm: DensePcm) -> float:
    t = np.log(pcm.entries)
    worst = 0.0
    for j in range(pcm.n):
        defect = np.abs(t[:, j, None] + t[None, j, :] - t)
        worst = max(worst, float(defect.max()))
    return worst


def _check_dense_size(n: int, max_dense_n: int | None):
    if max_dense_n is not None and n > max_dense_n:
        raise ResourceGuardError(
            f"refusing to allocate a dense {n} x {n} PCM (limit {max_dense_n}); "
            "use score-only output instead"
        )


def complete_from_scores(x: ScoreVector, max_dense_n: int | None = DEFAULT_MAX_DENSE_N) -> DensePcm:
    """Dense consistent PCM with a_ij = exp(x_i - x_j)."""
    s = x.scores
    _check_dense_size(len(s), max_dense_n)
    if not np.all(np.isfinite(s)):
        raise PcmError("scores must be finite")
    if len(s) and s.max() - s.min() > _MAX_LOG:
        i, j = int(np.argmax(s)), int(np.argmin(s))
        raise OverflowError(f"exp(x_{i} - x_{j}) overflows: spread {s[i] - s[j]:.6g}")
    return DensePcm(_exp_antisymmetric(s[:, None] - s[None, :]))


def _exp_antisymmetric(t: np.ndarray) -> np.ndarray:
    # upper triangle from exp, lower triangle as its reciprocal
    a = np.exp(np.triu(t, 1))
    lower = np.tril_indices(len(t), -1)
    a[lower] = 1.0 / a.T[lower]
    return a


def reciprocal_projection(pcm: DensePcm) -> DensePcm:
    """Geometric-mean projection onto exactly reciprocal matrices."""
    a = pcm.entries
    if not np.all(a > 0):
        i, j = np.argwhere(~(a > 0))[0]
        raise PcmError(f"nonpositive entry {a[i, j]!r} at ({i}, {j})")
    log_a = np.log(a)
    return DensePcm(_exp_antisymmetric(0.5 * (log_a - log_a.T)))


def triangle_residuals(pcm: DensePcm, triples) -> np.ndarray:
    """|log a_ij + log a_jk - log a_ik| for each triple ``(i, j, k)``."""
    tr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    i, j, k = tr.T
    a = pcm.entries
    return np.abs(np.log(a[i, j]) + np.log(a[j, k]) - np.log(a[i, k]))
