"""Verdict classifier, loss, optimizers and the training loop.

The fused claim representation goes through ``softmax(W1 LeakyReLU(W0 v))``.
Besides the graph model, two graph-free fusions are available for
ablations: ``seq-att`` (claim attends over its evidence vectors once) and
``concat`` (mean of claim and evidence vectors).
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gnn
from .gnn import GnnConfig, GraphBatch, PackedGraphs
from .graph import GraphMode, RelationGraph
from .params import ParamSet

log = logging.getLogger(__name__)

FEVER_LABELS = ("Supported", "Refuted", "NEI")
HOVER_LABELS = ("Supported", "Not-Supported")
PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "skan-checkpoint"
CHECKPOINT_VERSION = 1


class FusionMode(str, enum.Enum):
    FULL = "full"
    NO_ERE = "no-ere"
    FULLY_CONNECTED = "fully-connected"
    SEQ_ATT = "seq-att"
    CONCAT = "concat"

    @property
    def graph_mode(self) -> GraphMode:
        if self is FusionMode.NO_ERE:
            return GraphMode.NO_ERE
        if self is FusionMode.FULLY_CONNECTED:
            return GraphMode.FULLY_CONNECTED
        return GraphMode.FULL

    @property
    def uses_gnn(self) -> bool:
        return self not in (FusionMode.SEQ_ATT, FusionMode.CONCAT)


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def classify(v: np.ndarray, w0: np.ndarray, w1: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """Class probabilities for one representation or a ``[B, dim]`` stack."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != w0.shape[1] or w1.shape[1] != w0.shape[0]:
        raise ValueError(
            f"shape mismatch: v {v.shape}, W0 {w0.shape}, W1 {w1.shape}"
        )
    if not np.isfinite(v).all():
        raise ValueError("representation contains non-finite values")
    return softmax(leaky_relu(v @ w0.T, slope) @ w1.T)


def cross_entropy(probs, gold) -> tuple[float, float]:
    """``(summed, mean)`` negative log-likelihood of the gold labels."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    gold = np.asarray(gold)
    if probs.shape[0] != gold.shape[0]:
        raise ValueError(f"{probs.shape[0]} predictions for {gold.shape[0]} labels")
    if gold.size == 0:
        raise ValueError("no samples")
    if not np.issubdtype(gold.dtype, np.integer) or gold.min() < 0 or gold.max() >= probs.shape[1]:
        raise ValueError(f"gold indices must lie in [0, {probs.shape[1]})")
    picked = np.clip(probs[np.arange(len(gold)), gold], PROB_FLOOR, 1.0)
    total = float(-np.log(picked).sum())
    return total, total / len(gold)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 24
    epochs: int = 30
    seed: int = 7
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, cfg: TrainConfig, size: int):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1**self.t)
        v_hat = self.v / (1 - c.beta2**self.t)
        return theta - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


class SGD:
    def __init__(self, cfg: TrainConfig, size: int):
        self.cfg = cfg

    def step(self, theta, grad):
        return theta - self.cfg.learning_rate * grad


def make_optimizer(cfg: TrainConfig, size: int):
    return Adam(cfg, size) if cfg.optimizer == "adam" else SGD(cfg, size)


@dataclass
class ForwardCache:
    batch: GraphBatch
    gnn_caches: list | None
    states: np.ndarray | None
    rep: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray
    alpha: np.ndarray | None = None


class Verifier:
    """Graph fusion + classifier with a single flat parameter vector."""

    def __init__(
        self,
        gnn_cfg: GnnConfig,
        labels: Sequence[str] = HOVER_LABELS,
        mode: FusionMode | str = FusionMode.FULL,
        seed: int = 0,
        params: ParamSet | None = None,
    ):
        self.gnn_cfg = gnn_cfg
        self.labels = tuple(labels)
        self.mode = FusionMode(mode)
        self.seed = seed
        fresh = self._init_params(np.random.default_rng(seed))
        if params is not None:
            if params.shapes() != fresh.shapes():
                raise ValueError(
                    f"parameter shapes {params.shapes()} do not match config {fresh.shapes()}"
                )
            fresh = params
        self.params = fresh

    @property
    def slope(self) -> float:
        return self.gnn_cfg.leaky_slope

    @property
    def rep_dim(self) -> int:
        return self.gnn_cfg.dim_out if self.mode.uses_gnn else self.gnn_cfg.dim_in

    def _init_params(self, rng) -> ParamSet:
        p = gnn.init_params(self.gnn_cfg, rng) if self.mode.uses_gnn else ParamSet()
        d = self.gnn_cfg.dim_in
        if self.mode is FusionMode.SEQ_ATT:
            p["seqatt.U"] = rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), size=(d, d))
        hid = self.gnn_cfg.dim_hidden
        p["cls.W0"] = rng.uniform(-1 / np.sqrt(self.rep_dim), 1 / np.sqrt(self.rep_dim), size=(hid, self.rep_dim))
        p["cls.W1"] = rng.uniform(-1 / np.sqrt(hid), 1 / np.sqrt(hid), size=(len(self.labels), hid))
        return p

    # -- forward / backward --------------------------------------------------

    def _fuse_free(self, batch: GraphBatch):
        idx = np.arange(len(batch))
        c = batch.x[idx, batch.claim]  # [B,d]
        ev = batch.evidence
        if self.mode is FusionMode.CONCAT:
            members = ev.copy()
            members[idx, batch.claim] = True
            rep = (batch.x * members[..., None]).sum(1) / members.sum(1, keepdims=True)
            return rep, None
        scores = np.einsum("bd,de,bne->bn", c, self.params["seqatt.U"], batch.x)
        scores = np.where(ev, scores, -np.inf)
        has_ev = ev.any(axis=1)
        scores[~has_ev] = 0.0
        alpha = softmax(scores)
        alpha[~has_ev] = 0.0
        rep = c + np.einsum("bn,bnd->bd", alpha, batch.x)
        return rep, alpha

    def forward(self, batch: GraphBatch, use_numba=None) -> ForwardCache:
        if self.mode.uses_gnn:
            states, caches = gnn.forward(self.gnn_cfg, self.params, batch, use_numba=use_numba)
            rep = gnn.readout(batch, states)
            alpha = None
        else:
            gnn._check_finite(batch.x)
            states, caches = None, None
            rep, alpha = self._fuse_free(batch)
        hidden = rep @ self.params["cls.W0"].T
        probs = softmax(leaky_relu(hidden, self.slope) @ self.params["cls.W1"].T)
        return ForwardCache(batch, caches, states, rep, hidden, probs, alpha)

    def backward(self, cache: ForwardCache, gold: np.ndarray, use_numba=None):
        """Gradient of the mean cross-entropy over the batch.

        Returns ``(grads, g_node_features, g_edge_features)``; the input
        gradients are ``None`` for the graph-free fusions.
        """
        B = len(gold)
        g_logits = cache.probs.copy()
        g_logits[np.arange(B), gold] -= 1.0
        g_logits /= B
        grads = self.params.zeros_like()
        act = leaky_relu(cache.hidden, self.slope)
        grads["cls.W1"] = g_logits.T @ act
        g_hidden = (g_logits @ self.params["cls.W1"]) * np.where(cache.hidden > 0, 1.0, self.slope)
        grads["cls.W0"] = g_hidden.T @ cache.rep
        g_rep = g_hidden @ self.params["cls.W0"]
        if self.mode.uses_gnn:
            n = cache.states.shape[1]
            g_states = gnn.readout_backward(cache.batch, g_rep, n)
            g_gnn, g_x, g_e = gnn.backward(
                self.gnn_cfg, self.params, cache.batch, cache.gnn_caches, g_states, use_numba=use_numba
            )
            grads.update(g_gnn)
            return grads, g_x, g_e
        if self.mode is FusionMode.SEQ_ATT:
            batch = cache.batch
            c = batch.x[np.arange(B), batch.claim]
            alpha = cache.alpha
            g_alpha = np.einsum("bd,bnd->bn", g_rep, batch.x)
            g_scores = alpha * (g_alpha - (alpha * g_alpha).sum(1, keepdims=True))
            grads["seqatt.U"] = np.einsum("bn,bd,bne->de", g_scores, c, batch.x)
        return grads, None, None

    def loss_and_grad(self, batch: GraphBatch, gold, use_numba=None):
        cache = self.forward(batch, use_numba)
        _, mean = cross_entropy(cache.probs, gold)
        grads, _, _ = self.backward(cache, np.asarray(gold), use_numba)
        return mean, grads

    def predict_proba(self, batch: GraphBatch) -> np.ndarray:
        return self.forward(batch).probs

    # -- diagnostics ---------------------------------------------------------

    def evidence_attention(self, cache: ForwardCache) -> np.ndarray:
        """Claim-to-node relevance ``[B, n]`` used to rank evidence.

        Graph modes: claim row of the head-averaged attention matrices
        multiplied across layers (evidence is reached through entities, so a
        single layer's weights are zero on evidence). ``seq-att`` returns its
        attention weights; ``concat`` spreads weight evenly over evidence.
        """
        batch = cache.batch
        B = len(batch)
        if self.mode.uses_gnn:
            n = batch.x.shape[1]
            flow = np.broadcast_to(np.eye(n), (B, n, n)).copy()
            for c in cache.gnn_caches:
                flow = c["gamma"].mean(axis=1) @ flow
            rel = flow[np.arange(B), batch.claim]
        elif cache.alpha is not None:
            rel = cache.alpha
        else:
            cnt = np.maximum(batch.evidence.sum(1, keepdims=True), 1)
            rel = batch.evidence / cnt
        return np.where(batch.evidence, rel, 0.0)

    # -- checkpointing -------------------------------------------------------

    def to_checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "gnn": self.gnn_cfg.to_dict(),
            "labels": list(self.labels),
            "mode": self.mode.value,
            "seed": self.seed,
            "shapes": {k: list(v) for k, v in self.params.shapes().items()},
            "params": self.params.flat().tolist(),
        }

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_checkpoint(), sort_keys=True))
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "Verifier":
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported checkpoint")
        model = cls(GnnConfig(**doc["gnn"]), doc["labels"], doc["mode"], doc["seed"])
        expected = {k: list(v) for k, v in model.params.shapes().items()}
        if expected != doc["shapes"]:
            raise ValueError(f"checkpoint shapes {doc['shapes']} do not match config {expected}")
        model.params.load_flat(np.asarray(doc["params"], dtype=np.float64))
        return model

    @classmethod
    def load(cls, path) -> "Verifier":
        return cls.from_checkpoint(json.loads(Path(path).read_text()))


# -- training -----------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, sample_ids: list[str], param_norm: float):
        super().__init__(
            f"non-finite loss at step {step}; samples {sample_ids}; parameter norm {param_norm:.4g}"
        )
        self.step = step
        self.sample_ids = sample_ids
        self.param_norm = param_norm


@dataclass
class TrainResult:
    model: Verifier
    log: list[dict] = field(default_factory=list)


def evaluate_accuracy(model: Verifier, packed: PackedGraphs, gold: np.ndarray, batch_size: int = 256) -> float:
    preds = predict_labels(model, packed, batch_size)
    return float((preds == gold).mean()) if len(gold) else float("nan")


def predict_labels(model: Verifier, packed: PackedGraphs, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(packed), batch_size):
        probs = model.predict_proba(packed.batch(range(start, min(start + batch_size, len(packed)))))
        out.append(np.argmax(probs, axis=1))  # argmax picks the lowest index on ties
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def train(
    model: Verifier,
    graphs: list[RelationGraph] | PackedGraphs,
    labels: Sequence[int],
    cfg: TrainConfig,
    dev: tuple | None = None,
    sample_ids: Sequence[str] | None = None,
    log_sink=None,
) -> TrainResult:
    """Mini-batch training with a seeded shuffle per epoch.

    ``dev`` is ``(graphs_or_packed, labels)``; when given, dev accuracy is
    logged after every epoch. ``log_sink`` receives each log record as it is
    produced. Updates are applied in place to ``model.params``.
    """
    packed = graphs if isinstance(graphs, PackedGraphs) else PackedGraphs(list(graphs))
    labels = np.asarray(labels, dtype=np.int64)
    if len(packed) == 0:
        raise ValueError("empty training set")
    if labels.min() < 0 or labels.max() >= len(model.labels):
        raise ValueError("training labels outside the label set")
    if sample_ids is None:
        sample_ids = [str(k) for k in range(len(packed))]
    dev_packed = dev_labels = None
    if dev is not None:
        dev_packed = dev[0] if isinstance(dev[0], PackedGraphs) else PackedGraphs(list(dev[0]))
        dev_labels = np.asarray(dev[1], dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    theta = model.params.flat()
    opt = make_optimizer(cfg, theta.size)
    records = []
    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(packed))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = packed.batch(idx)
            loss, grads = model.loss_and_grad(batch, labels[idx])
            step += 1
            if not np.isfinite(loss):
                raise TrainingDiverged(step, [sample_ids[k] for k in idx], model.params.norm())
            theta = opt.step(theta, grads.flat())
            model.params.load_flat(theta)
            total += loss * len(idx)
            seen += len(idx)
        rec = {"epoch": epoch, "step": step, "loss": total / seen, "metrics": {}}
        if dev_packed is not None:
            rec["metrics"]["dev_accuracy"] = evaluate_accuracy(model, dev_packed, dev_labels)
        rec["wall_time"] = round(time.perf_counter() - t0, 3)
        records.append(rec)
        log.info("epoch %d loss %.4f %s", epoch, rec["loss"], rec["metrics"])
        if log_sink is not None:
            log_sink(rec)
    return TrainResult(model, records)


@dataclass
class Prediction:
    label: str
    index: int
    probs: np.ndarray
    evidence_attention: np.ndarray  # one weight per evidence piece, input order


def predict(model: Verifier, graph: RelationGraph) -> Prediction:
    """Verdict for one graph plus claim-to-evidence attention."""
    batch = GraphBatch.from_graphs([graph])
    cache = model.forward(batch)
    probs = cache.probs[0]
    k = int(np.argmax(probs))
    att = model.evidence_attention(cache)[0]
    ev_nodes = graph.evidence_nodes()
    return Prediction(model.labels[k], k, probs, att[ev_nodes])
