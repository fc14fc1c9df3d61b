"""Graph-embedding completer: message passing, antisymmetric edge heads, analytic gradients.

Embeddings are rows of ``H`` (n x d). One layer computes

    H' = phi(H @ W1.T + (A @ H) @ W2.T)

with ``A`` the symmetrized, unweighted adjacency of the observed pairs
(row-normalized to a neighbor mean when ``aggregation="mean"``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import sparse
from scipy.special import expit, log_expit

from .core import (
    DEFAULT_MAX_DENSE_N,
    ComparisonSet,
    DensePcm,
    PcmError,
    ResourceGuardError,
    reciprocal_projection,
)

CHECKPOINT_FORMAT = "sparsepcm-model"
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-12


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class ModelConfig:
    d: int = 32
    layers: int = 2
    nonlinearity: Literal["relu", "tanh"] = "relu"
    head: Literal["linear", "mlp"] = "linear"
    hidden_width: int | None = None  # mlp head; None means 2 * d
    mode: Literal["lls", "btl"] = "lls"
    lambda_triangle: float = 1.0
    lambda_reg: float = 1e-4
    triangle_samples: int | None = None  # None means min(10 |Omega|, 200_000)
    seed: int = 0
    shared_weights: bool = True
    aggregation: Literal["sum", "mean"] = "sum"

    def __post_init__(self):
        if self.d < 1 or self.layers < 1:
            raise ValueError("d and layers must be >= 1")
        if self.lambda_triangle < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.nonlinearity not in ("relu", "tanh", "identity"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.head not in ("linear", "mlp"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.mode not in ("lls", "btl"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @property
    def width(self) -> int:
        return self.hidden_width or 2 * self.d

    def n_triples(self, n_edges: int) -> int:
        if self.triangle_samples is not None:
            return self.triangle_samples
        return min(10 * n_edges, 200_000)


@dataclass
class OptimizerConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    schedule: Literal["constant", "cosine"] = "constant"

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0:
            raise ValueError("lr must be positive and epochs nonnegative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class LossBreakdown:
    data_loss: float
    triangle_loss: float
    reg_loss: float
    total: float


@dataclass(eq=False)
class EmbeddingModel:
    """Parameters plus the graph they message-pass over.

    ``params`` keys: ``H0``, ``W1``, ``W2`` (``(layers, d, d)`` when weights
    are not shared) and the head: ``v`` for the linear head, ``U``, ``c``,
    ``a`` for the MLP head.
    """

    params: dict[str, np.ndarray]
    cfg: ModelConfig
    adjacency: sparse.csr_matrix | None = None
    trace: list[LossBreakdown] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.params["H0"].shape[0]

    def embeddings(self) -> np.ndarray:
        return forward(self.params, self.cfg, self._adj(), self.params["H0"])[0]

    def log_ratios(self, i, j, H: np.ndarray | None = None) -> np.ndarray:
        H = self.embeddings() if H is None else H
        return predict_log_ratio(self, H, np.asarray(i), np.asarray(j))

    def _adj(self):
        if self.adjacency is None:
            return sparse.csr_matrix((self.n, self.n))
        return self.adjacency

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            {k: v.copy() for k, v in self.params.items()}, self.cfg, self.adjacency, list(self.trace)
        )


def adjacency(graph, n: int | None = None) -> sparse.csr_matrix:
    """Symmetric 0/1 adjacency without self-loops from a ComparisonSet or (src, dst) pair."""
    if isinstance(graph, sparse.spmatrix):
        return graph.tocsr()
    if isinstance(graph, ComparisonSet):
        src, dst, n = graph.src, graph.dst, graph.n
    else:
        src, dst = (np.asarray(a, dtype=np.int64) for a in graph)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    A = sparse.coo_matrix(
        (np.ones(2 * len(src)), (np.concatenate([src, dst]), np.concatenate([dst, src]))),
        shape=(n, n),
    ).tocsr()
    A.sum_duplicates()
    A.data[:] = 1.0
    return A


def init_model(n: int, cfg: ModelConfig, graph=None) -> EmbeddingModel:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d
    eye = np.eye(d)
    params = {"H0": rng.normal(0.0, 0.1, size=(n, d))}
    shape = (d, d) if cfg.shared_weights else (cfg.layers, d, d)
    params["W1"] = np.broadcast_to(eye, shape) + rng.normal(0.0, 0.01, size=shape)
    params["W2"] = 0.5 * np.broadcast_to(eye, shape) + rng.normal(0.0, 0.01, size=shape)
    if cfg.head == "linear":
        params["v"] = 1.0 + rng.normal(0.0, 0.01, size=d)
    else:
        h = cfg.width
        params["U"] = rng.normal(0.0, math.sqrt(2.0 / (d + h)), size=(h, d))
        params["c"] = np.zeros(h)
        params["a"] = rng.normal(0.0, math.sqrt(2.0 / (h + 1)), size=h)
    adj = None if graph is None else adjacency(graph, n)
    return EmbeddingModel(params, cfg, adj)


def _layer_weights(params, cfg, layer):
    if cfg.shared_weights:
        return params["W1"], params["W2"]
    return params["W1"][layer], params["W2"][layer]


def _act(name, Z):
    if name == "relu":
        return np.maximum(Z, 0.0)
    if name == "tanh":
        return np.tanh(Z)
    return Z


def _act_grad(name, Z, out):
    if name == "relu":
        return (Z > 0).astype(Z.dtype)  # subgradient 0 at the kink
    if name == "tanh":
        return 1.0 - out * out
    return np.ones_like(Z)


def propagator(adj, cfg: ModelConfig):
    """The neighbor operator applied each layer: ``A`` or ``D^-1 A``."""
    if cfg.aggregation == "sum":
        return adj
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sparse.diags(inv) @ adj


def forward(params, cfg: ModelConfig, adj, H0):
    """Run all layers; returns final embeddings and the per-layer cache for backprop."""
    return _forward(params, cfg, propagator(adj, cfg), H0)


def _forward(params, cfg, adj, H0):
    H = H0
    cache = []
    for layer in range(cfg.layers):
        W1, W2 = _layer_weights(params, cfg, layer)
        AH = adj @ H
        Z = H @ W1.T + AH @ W2.T
        out = _act(cfg.nonlinearity, Z)
        cache.append((H, AH, Z, out))
        H = out
    return H, cache


def message_pass(model: EmbeddingModel, graph=None) -> np.ndarray:
    adj = model._adj() if graph is None else adjacency(graph, model.n)
    return forward(model.params, model.cfg, adj, model.params["H0"])[0]


def _backward_layers(params, cfg, adj, cache, dH, grads):
    for layer in reversed(range(cfg.layers)):
        H, AH, Z, out = cache[layer]
        W1, W2 = _layer_weights(params, cfg, layer)
        dZ = dH * _act_grad(cfg.nonlinearity, Z, out)
        gW1 = dZ.T @ H
        gW2 = dZ.T @ AH
        if cfg.shared_weights:
            grads["W1"] += gW1
            grads["W2"] += gW2
        else:
            grads["W1"][layer] += gW1
            grads["W2"][layer] += gW2
        dH = dZ @ W1 + adj.T @ (dZ @ W2)
    return dH


def _mlp_terms(params, D):
    U, c, a = params["U"], params["c"], params["a"]
    UD = D @ U.T
    tp = np.tanh(UD + c)
    tm = np.tanh(c - UD)
    return tp, tm, 0.5 * (tp - tm) @ a


def predict_log_ratio(model: EmbeddingModel, H, i, j) -> np.ndarray:
    """Antisymmetric log-ratio prediction for pairs ``(i, j)``."""
    p = model.params
    if model.cfg.head == "linear":
        s = H @ p["v"]
        return s[i] - s[j]
    return _mlp_terms(p, H[i] - H[j])[2]


def _head_forward_backward(params, cfg, H, i, j, need_grad):
    """Predictions for pairs plus a closure mapping dL/dt to (dL/dH, head grads)."""
    if cfg.head == "linear":
        v = params["v"]
        s = H @ v
        t = s[i] - s[j]

        def back(g):
            n = H.shape[0]
            ds = np.bincount(i, weights=g, minlength=n) - np.bincount(j, weights=g, minlength=n)
            return np.outer(ds, v), {"v": H.T @ ds}

        return t, back

    D = H[i] - H[j]
    tp, tm, t = _mlp_terms(params, D)

    def back(g):
        U, a = params["U"], params["a"]
        ga = 0.5 * g[:, None]
        dP = ga * a * (1.0 - tp * tp)
        dQ = -ga * a * (1.0 - tm * tm)
        head = {
            "a": 0.5 * (tp - tm).T @ g,
            "c": dP.sum(axis=0) + dQ.sum(axis=0),
            "U": (dP - dQ).T @ D,
        }
        dD = (dP - dQ) @ U
        m = len(i)
        inc = sparse.csr_matrix(
            (np.concatenate([np.ones(m), -np.ones(m)]),
             (np.concatenate([i, j]), np.concatenate([np.arange(m), np.arange(m)]))),
            shape=(H.shape[0], m),
        )
        return inc @ dD, head

    return t, back


def _reg_keys(cfg):
    return ("W1", "W2", "v") if cfg.head == "linear" else ("W1", "W2", "U", "a")


def objective(
    params,
    cfg: ModelConfig,
    adj,
    H0,
    src,
    dst,
    values,
    triples=None,
    data_scale: float = 1.0,
    need_grad: bool = True,
):
    """Total loss on the given pairs and triples, with gradients for every parameter.

    ``values`` are log-ratio targets in LLS mode and win counts in BTL mode.
    ``data_scale`` multiplies the data term (mini-batch reweighting).
    Node ids refer to rows of ``H0``; the returned ``H0`` gradient has its shape.
    """
    adj = propagator(adj, cfg)
    H, cache = _forward(params, cfg, adj, H0)
    m = len(src)
    tri = np.empty((0, 3), np.int64) if triples is None else np.asarray(triples, np.int64).reshape(-1, 3)
    pi = np.concatenate([src, tri[:, 0], tri[:, 1], tri[:, 0]])
    pj = np.concatenate([dst, tri[:, 1], tri[:, 2], tri[:, 2]])
    t, back = _head_forward_backward(params, cfg, H, pi, pj, need_grad)

    td = t[:m]
    if cfg.mode == "lls":
        r = td - values
        data = data_scale * float(r @ r)
        g_data = data_scale * 2.0 * r
    else:
        # -sum c_ij log sigma(t_ij): binary cross-entropy on replicated outcomes
        data = -data_scale * float(values @ log_expit(td))
        g_data = -data_scale * values * expit(-td)

    k = len(tri)
    if k:
        t_ij, t_jk, t_ik = t[m:m + k], t[m + k:m + 2 * k], t[m + 2 * k:]
        defect = t_ij + t_jk - t_ik
        tri_loss = float(np.abs(defect).mean())
        sg = np.sign(defect) / k
        g_tri = np.concatenate([sg, sg, -sg])
    else:
        tri_loss = 0.0
        g_tri = np.empty(0)

    reg = sum(float(np.sum(params[key] ** 2)) for key in _reg_keys(cfg))
    total = data + cfg.lambda_triangle * tri_loss + cfg.lambda_reg * reg
    losses = LossBreakdown(data, tri_loss, reg, total)
    if not need_grad:
        return losses, None

    g = np.concatenate([g_data, cfg.lambda_triangle * g_tri])
    dH, head_grads = back(g)
    grads = {key: np.zeros_like(val) for key, val in params.items() if key != "H0"}
    for key, val in head_grads.items():
        grads[key] += val
    grads["H0"] = _backward_layers(params, cfg, adj, cache, dH, grads)
    for key in _reg_keys(cfg):
        grads[key] += 2.0 * cfg.lambda_reg * params[key]
    return losses, grads


def _data_arrays(obs: ComparisonSet, cfg: ModelConfig):
    if len(obs) == 0:
        raise PcmError("no observed comparisons")
    if cfg.mode == "lls":
        if obs.mode != "cardinal":
            raise PcmError("LLS mode needs cardinal ratios")
        return obs.src, obs.dst, obs.log_ratios()
    if obs.mode != "counts":
        raise PcmError("BTL mode needs win counts")
    return obs.src, obs.dst, obs.values


def loss(model: EmbeddingModel, graph, obs: ComparisonSet, triples, cfg: ModelConfig | None = None):
    cfg = cfg or model.cfg
    src, dst, vals = _data_arrays(obs, cfg)
    adj = adjacency(graph, model.n)
    return objective(model.params, cfg, adj, model.params["H0"], src, dst, vals, triples, need_grad=False)[0]


def gradients(model: EmbeddingModel, graph, obs: ComparisonSet, triples, cfg: ModelConfig | None = None):
    cfg = cfg or model.cfg
    src, dst, vals = _data_arrays(obs, cfg)
    adj = adjacency(graph, model.n)
    return objective(model.params, cfg, adj, model.params["H0"], src, dst, vals, triples)[1]


class Adam:
    """Adam with optional lazy row updates for the embedding table."""

    def __init__(self, params: dict[str, np.ndarray], opt: OptimizerConfig, total_steps: int = 1):
        self.opt = opt
        self.total_steps = max(total_steps, 1)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def rate(self) -> float:
        """Step size for the current step (cosine decay to zero over ``total_steps``)."""
        if self.opt.schedule == "constant":
            return self.opt.lr
        frac = min((self.t - 1) / self.total_steps, 1.0)
        return self.opt.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def step(self, params, grads, rows: np.ndarray | None = None):
        """Update in place. With ``rows``, ``grads["H0"]`` holds only those rows of H0."""
        self.t += 1
        o = self.opt
        lr = self.rate()
        c1 = 1.0 - o.beta1 ** self.t
        c2 = 1.0 - o.beta2 ** self.t
        for key, g in grads.items():
            if key == "H0" and rows is not None:
                m = self.m[key][rows] * o.beta1 + (1 - o.beta1) * g
                v = self.v[key][rows] * o.beta2 + (1 - o.beta2) * g * g
                self.m[key][rows] = m
                self.v[key][rows] = v
                params[key][rows] -= lr * (m / c1) / (np.sqrt(v / c2) + o.eps)
                continue
            m, v = self.m[key], self.v[key]
            m *= o.beta1
            m += (1 - o.beta1) * g
            v *= o.beta2
            v += (1 - o.beta2) * g * g
            params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + o.eps)


def sample_triples(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` uniformly random triples of distinct nodes."""
    if n < 3 or k == 0:
        return np.empty((0, 3), np.int64)
    out = np.empty((0, 3), np.int64)
    while len(out) < k:
        tr = rng.integers(0, n, size=(k - len(out), 3))
        ok = (tr[:, 0] != tr[:, 1]) & (tr[:, 1] != tr[:, 2]) & (tr[:, 0] != tr[:, 2])
        out = np.concatenate([out, tr[ok]])
    return out


def train(
    obs: ComparisonSet,
    cfg: ModelConfig | None = None,
    opt: OptimizerConfig | None = None,
    init: EmbeddingModel | None = None,
) -> EmbeddingModel:
    """Full-batch training; returns the parameters with the lowest training loss seen.

    ``init`` warm-starts from a copy of an existing model's parameters.
    """
    cfg = cfg or ModelConfig()
    opt = opt or OptimizerConfig()
    src, dst, vals = _data_arrays(obs, cfg)
    if init is None:
        model = init_model(obs.n, cfg, obs)
    else:
        if init.n != obs.n:
            raise PcmError(f"warm start has {init.n} nodes, data has {obs.n}")
        model = EmbeddingModel({k: v.copy() for k, v in init.params.items()}, cfg, adjacency(obs))
    adj = model.adjacency
    rng = np.random.default_rng([cfg.seed, 1])
    adam = Adam(model.params, opt, total_steps=opt.epochs)
    n_tri = cfg.n_triples(len(obs)) if cfg.lambda_triangle > 0 else 0
    best, best_params = np.inf, None
    for epoch in range(opt.epochs):
        triples = sample_triples(obs.n, n_tri, rng)
        losses, grads = objective(model.params, cfg, adj, model.params["H0"], src, dst, vals, triples)
        if not np.isfinite(losses.total):
            raise TrainingError("non-finite loss", epoch)
        model.trace.append(losses)
        if losses.total < best:
            best = losses.total
            best_params = {k: v.copy() for k, v in model.params.items()}
        adam.step(model.params, grads)
    if best_params is not None:
        model.params = best_params
    return model


def predict_matrix(model: EmbeddingModel, max_dense_n: int | None = DEFAULT_MAX_DENSE_N) -> np.ndarray:
    """Raw all-pairs predictions a_ij before reciprocal projection (unit diagonal)."""
    n = model.n
    if max_dense_n is not None and n > max_dense_n:
        raise ResourceGuardError(f"refusing dense {n} x {n} completion (limit {max_dense_n})")
    H = model.embeddings()
    if model.cfg.head == "linear":
        s = H @ model.params["v"]
        t = s[:, None] - s[None, :]
    else:
        t = np.empty((n, n))
        cols = np.arange(n)
        for i in range(n):
            t[i] = predict_log_ratio(model, H, np.full(n, i), cols)
    if model.cfg.mode == "btl":
        p = np.clip(expit(t), PROB_CLAMP, 1.0 - PROB_CLAMP)
        a = p / (1.0 - p)
    else:
        if np.max(np.abs(t), initial=0.0) > math.log(np.finfo(float).max):
            i, j = np.unravel_index(np.argmax(np.abs(t)), t.shape)
            raise OverflowError(f"predicted ratio for ({i}, {j}) overflows")
        a = np.exp(t)
    np.fill_diagonal(a, 1.0)
    return a


def ml_complete(model: EmbeddingModel, max_dense_n: int | None = DEFAULT_MAX_DENSE_N) -> DensePcm:
    return reciprocal_projection(DensePcm(predict_matrix(model, max_dense_n)))


def model_scores(model: EmbeddingModel, obs: ComparisonSet, H: np.ndarray | None = None):
    """Per-node score proxy: LLS refit on the model's predicted log-ratios over ``obs`` pairs."""
    from .lls import lls_scores

    t = model.log_ratios(obs.src, obs.dst, H)
    pred = ComparisonSet(obs.n, obs.src, obs.dst, np.exp(np.clip(t, -700, 700)), "cardinal")
    return lls_scores(pred)


def save_checkpoint(model: EmbeddingModel, path) -> None:
    adj = model._adj().tocoo()
    upper = adj.row < adj.col
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.params.items()},
        "graph": {"n": model.n, "src": adj.row[upper].tolist(), "dst": adj.col[upper].tolist()},
    }
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_checkpoint(path) -> EmbeddingModel:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise PcmError(f"{path} is not a model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise PcmError(f"unsupported checkpoint version {blob.get('version')}")
    cfg = ModelConfig(**blob["config"])
    params = {k: np.array(p["data"], dtype=float).reshape(p["shape"]) for k, p in blob["params"].items()}
    g = blob["graph"]
    adj = adjacency((g["src"], g["dst"]), g["n"])
    return EmbeddingModel(params, cfg, adj)


def write_trace(trace: list[LossBreakdown], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "data", "triangle", "reg", "total"])
        for epoch, lb in enumerate(trace):
            w.writerow([epoch, repr(lb.data_loss), repr(lb.triangle_loss), repr(lb.reg_loss), repr(lb.total)])
