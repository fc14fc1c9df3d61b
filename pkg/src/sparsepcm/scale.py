"""Sparse message passing and mini-batch training with subgraph induction and wedge sampling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import ComparisonSet
from .model import (
    Adam,
    EmbeddingModel,
    LossBreakdown,
    ModelConfig,
    OptimizerConfig,
    TrainingError,
    _data_arrays,
    init_model,
    objective,
)


class SamplingWarning(UserWarning):
    pass


@dataclass(eq=False)
class EdgeIndex:
    """Directed edges sorted by (source, target) with CSR row offsets."""

    n: int
    sources: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    csr_offsets: np.ndarray

    @classmethod
    def from_arrays(cls, n, sources, targets, values=None) -> "EdgeIndex":
        sources = np.asarray(sources, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        values = np.ones(len(sources)) if values is None else np.asarray(values, dtype=float)
        order = np.lexsort((targets, sources))
        sources, targets, values = sources[order], targets[order], values[order]
        keys = sources * n + targets
        if len(keys) > 1 and np.any(keys[1:] == keys[:-1]):
            raise ValueError("duplicate ordered pair in edge index")
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(sources, minlength=n), out=offsets[1:])
        return cls(n, sources, targets, values, offsets)

    @classmethod
    def from_comparisons(cls, obs: ComparisonSet) -> "EdgeIndex":
        return cls.from_arrays(obs.n, obs.src, obs.dst, obs.values)

    def __len__(self) -> int:
        return len(self.sources)

    def out_degree(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.targets[self.csr_offsets[i]:self.csr_offsets[i + 1]]

    def keys(self) -> np.ndarray:
        return self.sources * self.n + self.targets

    def symmetrized(self) -> "EdgeIndex":
        """Both directions of every edge; mirrored values are reciprocals."""
        s = np.concatenate([self.sources, self.targets])
        t = np.concatenate([self.targets, self.sources])
        v = np.concatenate([self.values, 1.0 / np.where(self.values == 0, 1.0, self.values)])
        _, first = np.unique(s * self.n + t, return_index=True)
        return EdgeIndex.from_arrays(self.n, s[first], t[first], v[first])

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (np.ones(len(self)), self.targets, self.csr_offsets), shape=(self.n, self.n)
        )


@dataclass
class ScaleConfig:
    batch_edges: int = 256
    batch_triples: int = 256
    walk_hops: int | None = None  # None means ceil(log2 n)
    walks_per_node: int = 2
    max_subgraph_nodes: int | None = None  # None means 50 * batch_edges
    seed: int = 0

    def __post_init__(self):
        if self.batch_edges < 1:
            raise ValueError("batch_edges must be >= 1")
        if self.walk_hops is not None and self.walk_hops < 0:
            raise ValueError("walk_hops must be >= 0")

    def hops(self, n: int) -> int:
        if self.walk_hops is not None:
            return self.walk_hops
        return max(1, math.ceil(math.log2(max(n, 2))))

    def node_cap(self) -> int:
        return self.max_subgraph_nodes or 50 * self.batch_edges


def sparse_aggregate(edges: EdgeIndex, X: np.ndarray) -> np.ndarray:
    """Row i of the result is the sum of X[j] over edges (i, j)."""
    return edges.to_csr() @ X


def sample_edge_batch(edges: EdgeIndex, batch_edges: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``batch_edges`` edges drawn uniformly without replacement."""
    m = len(edges)
    if batch_edges > m:
        warnings.warn(f"batch of {batch_edges} edges clamped to |Omega| = {m}", SamplingWarning, stacklevel=2)
        batch_edges = m
    return rng.choice(m, size=batch_edges, replace=False)


def _gather_rows(offsets: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat positions of all CSR entries in ``rows`` and the row-local owner of each."""
    starts = offsets[rows]
    counts = offsets[rows + 1] - starts
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(rows)), counts)
    shift = np.repeat(starts - (np.cumsum(counts) - counts), counts)
    return shift + np.arange(total), owner


@dataclass(eq=False)
class Subgraph:
    nodes: np.ndarray  # global ids, insertion order
    edge_ids: np.ndarray  # indices into the directed edge index, both endpoints inside
    local_src: np.ndarray
    local_dst: np.ndarray
    adjacency: sparse.csr_matrix  # local symmetric 0/1 adjacency

    def local(self, global_ids: np.ndarray, lookup: np.ndarray) -> np.ndarray:
        return lookup[global_ids]


def random_walk_nodes(sym: EdgeIndex, starts: np.ndarray, hops: int, walks: int, rng) -> np.ndarray:
    """Node visit sequence: ``starts`` then every walk position hop by hop (with repeats)."""
    seq = [starts]
    cur = np.repeat(starts, walks)
    deg = sym.out_degree()
    for _ in range(hops):
        if not len(cur):
            break
        dc = deg[cur]
        r = np.minimum((rng.random(len(cur)) * dc).astype(np.int64), np.maximum(dc - 1, 0))
        pos = sym.csr_offsets[cur] + r
        cur = np.where(dc > 0, sym.targets[np.minimum(pos, len(sym) - 1)], cur)
        seq.append(cur)
    return np.concatenate(seq)


def induce_subgraph(
    edges: EdgeIndex,
    batch: np.ndarray,
    cfg: ScaleConfig,
    rng: np.random.Generator,
    sym: EdgeIndex | None = None,
    lookup: np.ndarray | None = None,
) -> Subgraph:
    """Batch endpoints expanded by random walks on the symmetrized graph, plus induced edges.

    ``sym`` and ``lookup`` (an int array of -1s, length n) may be passed in to
    avoid per-call O(n) work; ``lookup`` is restored before returning.
    """
    sym = edges.symmetrized() if sym is None else sym
    own_lookup = lookup is None
    if own_lookup:
        lookup = np.full(edges.n, -1, dtype=np.int64)
    endpoints = np.stack([edges.sources[batch], edges.targets[batch]], axis=1).ravel()
    seq = random_walk_nodes(sym, endpoints, cfg.hops(edges.n), cfg.walks_per_node, rng)
    _, first = np.unique(seq, return_index=True)
    nodes = seq[np.sort(first)][: cfg.node_cap()]
    lookup[nodes] = np.arange(len(nodes))
    try:
        pos, owner = _gather_rows(edges.csr_offsets, nodes)
        inside = lookup[edges.targets[pos]] >= 0
        edge_ids = pos[inside]
        local_src = owner[inside]
        local_dst = lookup[edges.targets[edge_ids]]

        spos, sowner = _gather_rows(sym.csr_offsets, nodes)
        cols = lookup[sym.targets[spos]]
        keep = cols >= 0
        indptr = np.zeros(len(nodes) + 1, dtype=np.int64)
        np.cumsum(np.bincount(sowner[keep], minlength=len(nodes)), out=indptr[1:])
        adj = sparse.csr_matrix(
            (np.ones(int(keep.sum())), cols[keep], indptr), shape=(len(nodes), len(nodes))
        )
    finally:
        if not own_lookup:
            lookup[nodes] = -1
    return Subgraph(nodes, edge_ids, local_src, local_dst, adj)


def sample_wedges(
    edges: EdgeIndex, batch_triples: int, rng: np.random.Generator, retry_factor: int = 10
) -> np.ndarray:
    """Triples (i, j, k) with (i, j) uniform over edges and k uniform over N_out(j) minus i.

    Draws without a valid k are redrawn within a budget of ``retry_factor *
    batch_triples`` draws; fewer triples than requested may be returned.
    """
    m = len(edges)
    found: list[np.ndarray] = []
    have = 0
    budget = retry_factor * batch_triples
    if m and batch_triples > 0:
        keys = edges.keys()
        outdeg = edges.out_degree()
        while have < batch_triples and budget > 0:
            draw = min(budget, batch_triples - have)
            budget -= draw
            e = rng.integers(0, m, size=draw)
            i, j = edges.sources[e], edges.targets[e]
            back_key = j * edges.n + i
            back_pos = np.searchsorted(keys, back_key)
            present = (back_pos < m) & (keys[np.minimum(back_pos, m - 1)] == back_key)
            eff = outdeg[j] - present
            ok = eff > 0
            r = (rng.random(draw) * np.maximum(eff, 1)).astype(np.int64)
            pos = edges.csr_offsets[j] + r
            pos = pos + (present & (pos >= back_pos))
            k = edges.targets[np.minimum(pos, m - 1)]
            tri = np.stack([i, j, k], axis=1)[ok]
            found.append(tri)
            have += len(tri)
    out = np.concatenate(found) if found else np.empty((0, 3), np.int64)
    if batch_triples > 0 and len(out) == 0:
        warnings.warn("graph has no wedges; triangle loss skipped", SamplingWarning, stacklevel=2)
    return out[:batch_triples]


@dataclass
class EpochWork:
    steps: int = 0
    subgraph_nodes: int = 0
    subgraph_edges: int = 0
    wedges: int = 0


@dataclass(eq=False)
class BatchStep:
    """One mini-batch evaluation: the subgraph, its wedges (local ids), losses and gradients.

    ``grads["H0"]`` holds rows for ``subgraph.nodes`` only.
    """

    subgraph: Subgraph
    wedges: np.ndarray | None
    losses: LossBreakdown
    grads: dict[str, np.ndarray] | None


def batch_objective(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    edges: EdgeIndex,
    batch: np.ndarray,
    scfg: ScaleConfig,
    rng: np.random.Generator,
    sym: EdgeIndex | None = None,
    lookup: np.ndarray | None = None,
    need_grad: bool = True,
) -> BatchStep:
    """Loss on batch edges (scaled by |Omega| / |batch|) plus wedge triangle loss, on the induced subgraph."""
    if lookup is None:
        lookup = np.full(edges.n, -1, dtype=np.int64)
    sub = induce_subgraph(edges, batch, scfg, rng, sym=sym, lookup=lookup)
    lookup[sub.nodes] = np.arange(len(sub.nodes))
    ls, ld = lookup[edges.sources[batch]], lookup[edges.targets[batch]]
    lookup[sub.nodes] = -1
    wedges = None
    if cfg.lambda_triangle > 0 and scfg.batch_triples > 0 and len(sub.local_src):
        local_edges = EdgeIndex.from_arrays(len(sub.nodes), sub.local_src, sub.local_dst)
        wedges = sample_wedges(local_edges, scfg.batch_triples, rng)
    losses, grads = objective(
        params, cfg, sub.adjacency, params["H0"][sub.nodes],
        ls, ld, edges.values[batch], wedges,
        data_scale=len(edges) / len(batch), need_grad=need_grad,
    )
    return BatchStep(sub, wedges, losses, grads)


def train_minibatch(
    obs: ComparisonSet,
    cfg: ModelConfig | None = None,
    scfg: ScaleConfig | None = None,
    opt: OptimizerConfig | None = None,
    work: list[EpochWork] | None = None,
) -> EmbeddingModel:
    """Mini-batch training; per step only the induced subgraph is message-passed.

    The batch data loss is rescaled by |Omega| / B_e so its expectation equals
    the full data loss. Shared weights update every step; only the embedding
    rows of subgraph nodes change. Returns the parameters with the lowest
    epoch-mean loss. Per-epoch work counters are appended to ``work`` when given.
    """
    cfg = cfg or ModelConfig()
    scfg = scfg or ScaleConfig()
    opt = opt or OptimizerConfig()
    src, dst, vals = _data_arrays(obs, cfg)
    edges = EdgeIndex.from_arrays(obs.n, src, dst, vals)
    sym = edges.symmetrized()
    m = len(edges)
    model = init_model(obs.n, cfg, obs)
    rng = np.random.default_rng([cfg.seed, scfg.seed, 2])
    lookup = np.full(obs.n, -1, dtype=np.int64)
    batch_edges = min(scfg.batch_edges, m)
    if scfg.batch_edges > m:
        warnings.warn(f"batch of {scfg.batch_edges} edges clamped to |Omega| = {m}", SamplingWarning, stacklevel=2)
    steps = math.ceil(m / batch_edges)
    adam = Adam(model.params, opt, total_steps=steps * opt.epochs)
    best, best_params = np.inf, None
    for epoch in range(opt.epochs):
        acc = np.zeros(4)
        ew = EpochWork()
        for _ in range(steps):
            batch = sample_edge_batch(edges, batch_edges, rng)
            step = batch_objective(model.params, cfg, edges, batch, scfg, rng, sym=sym, lookup=lookup)
            losses = step.losses
            if not np.isfinite(losses.total):
                raise TrainingError("non-finite loss", epoch)
            adam.step(model.params, step.grads, rows=step.subgraph.nodes)
            acc += (losses.data_loss, losses.triangle_loss, losses.reg_loss, losses.total)
            ew.steps += 1
            ew.subgraph_nodes += len(step.subgraph.nodes)
            ew.subgraph_edges += step.subgraph.adjacency.nnz
            ew.wedges += 0 if step.wedges is None else len(step.wedges)
        mean = LossBreakdown(*(acc / steps))
        model.trace.append(mean)
        if work is not None:
            work.append(ew)
        if mean.total < best:
            best = mean.total
            best_params = {k: v.copy() for k, v in model.params.items()}
    if best_params is not None:
        model.params = best_params
    return model
