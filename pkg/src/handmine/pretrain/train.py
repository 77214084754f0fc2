"""Batch assembly, the training step and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..embed import PcaModel, project
from .augment import AugmentParams, AugmentRanges, apply_augment, inverse_align, inverse_align_backward
from .encoder import EncoderModel, encoder_backward, encoder_forward, init_encoder
from .loss import LossReport, adaptive_weights, unit_weights, weighted_ntxent

log = logging.getLogger(__name__)

WEIGHT_SPACES = ("pca", "raw")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    tau: float = 0.5
    batch_n: int = 128            # pairs per batch; 2N samples
    steps: int = 500
    learning_rate: float = 0.05
    momentum: float = 0.9
    optimizer: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    weights: bool = True
    loss_denominator: str = "simclr"
    weight_space: str = "pca"
    topk_positives: int = 1
    align: bool = True
    hidden: tuple[int, ...] = (256, 128)
    feature_dim: int = 64
    proj_dim: int = 32
    activation: str = "tanh"
    dtype: str = "float32"
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    eval_anchors: int | None = None   # None: every row is an anchor once
    log_every: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_n < 1:
            raise ValueError("batch_n must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.loss_denominator not in ("simclr", "literal"):
            raise ValueError("loss_denominator must be 'simclr' or 'literal'")
        if self.weight_space not in WEIGHT_SPACES:
            raise ValueError(f"weight_space must be one of {WEIGHT_SPACES}")
        if self.topk_positives < 1:
            raise ValueError("topk_positives must be >= 1")
        if self.proj_dim % 2:
            raise ValueError("proj_dim must be even")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        self.adam_betas = tuple(self.adam_betas)
        if isinstance(self.augment, dict):
            aug = dict(self.augment)
            for k in ("scale", "gain"):
                if k in aug:
                    aug[k] = tuple(aug[k])
            self.augment = AugmentRanges(**aug)
        self.hidden = tuple(self.hidden)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValueError(f"unknown train config keys: {unknown}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainData:
    """Training corpus aligned by row: images, flattened keypoints, positives."""

    images: np.ndarray        # (n, H, W)
    keypoints: np.ndarray     # (n, 42)
    positives: np.ndarray     # (n,) row of each row's positive
    eval_positives: np.ndarray | None = None  # Top-1 table used for evaluation

    def __post_init__(self):
        n = self.images.shape[0]
        if self.keypoints.shape != (n, 42) or self.positives.shape != (n,):
            raise ValueError("images, keypoints and positives must align by row")
        if np.any(self.positives < 0) or np.any(self.positives >= n):
            raise ValueError("pair table does not cover the corpus")
        if self.eval_positives is None:
            self.eval_positives = self.positives


@dataclass
class TrainBatch:
    images: np.ndarray        # (2N, H, W) augmented
    keypoints: np.ndarray     # (2N, 42) transformed
    params: AugmentParams
    rows: np.ndarray          # (2N,) source rows; anchors then positives

    @property
    def size(self) -> int:
        return self.images.shape[0]


def make_batch(data: TrainData, anchors, rng: np.random.Generator, ranges: AugmentRanges,
               augment: bool = True) -> TrainBatch:
    anchors = np.asarray(anchors, dtype=np.int64)
    rows = np.concatenate([anchors, data.positives[anchors]])
    n2 = len(rows)
    params = AugmentParams.sample(rng, n2, ranges) if augment else AugmentParams.identity(n2)
    imgs, kps = apply_augment(data.images[rows], data.keypoints[rows], params)
    return TrainBatch(imgs, kps, params, rows)


@dataclass
class OptimizerState:
    velocity: list[np.ndarray]
    second: list[np.ndarray] | None = None  # Adam only
    t: int = 0

    @classmethod
    def zeros_like(cls, model: EncoderModel, optimizer: str = "sgd") -> "OptimizerState":
        first = [np.zeros_like(p) for p in model.params()]
        second = [np.zeros_like(p) for p in model.params()] if optimizer == "adam" else None
        return cls(first, second)


def batch_weights(batch: TrainBatch, cfg: TrainConfig, pca: PcaModel | None):
    n2 = batch.size
    if not cfg.weights:
        return unit_weights(n2)
    if cfg.weight_space == "pca":
        if pca is None:
            raise ValueError("weight_space='pca' needs a fitted PCA model")
        emb = project(pca, batch.keypoints)
    else:
        emb = batch.keypoints
    return adaptive_weights(emb, include_partner=cfg.loss_denominator == "literal")


def loss_and_grads(model: EncoderModel, batch: TrainBatch, cfg: TrainConfig, pca: PcaModel | None,
                   weights=None):
    """Forward the batch, evaluate the loss and backpropagate to every parameter."""
    x = batch.images.reshape(batch.size, -1)
    _, z, tape = encoder_forward(model, x)
    z = z.astype(np.float64)
    params = batch.params if cfg.align else AugmentParams.identity(batch.size)
    zt = inverse_align(z, params)
    w_pos, w_neg = weights if weights is not None else batch_weights(batch, cfg, pca)
    report = weighted_ntxent(zt, w_pos, w_neg, cfg.tau, cfg.loss_denominator)
    gz = inverse_align_backward(report.grad, params)
    grads = encoder_backward(model, tape, gz)
    return report, grads


def train_step(model: EncoderModel, batch: TrainBatch, state: OptimizerState, cfg: TrainConfig,
               pca: PcaModel | None = None, learning_rate: float | None = None):
    """One optimizer step; parameters are updated in place and returned.

    ``sgd`` is heavy-ball momentum (v <- mu v + g, p <- p - lr v); ``adam`` uses
    bias-corrected first/second moments.
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    report, grads = loss_and_grads(model, batch, cfg, pca)
    state.t += 1
    if cfg.optimizer == "sgd":
        for p, v, g in zip(model.params(), state.velocity, grads):
            v *= cfg.momentum
            v += g
            if lr:
                p -= lr * v
    else:
        if state.second is None:
            state.second = [np.zeros_like(p) for p in model.params()]
        b1, b2 = cfg.adam_betas
        c1 = 1.0 - b1 ** state.t
        c2 = 1.0 - b2 ** state.t
        for p, m, v, g in zip(model.params(), state.velocity, state.second, grads):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr:
                p -= (lr / c1) * m / (np.sqrt(v / c2) + cfg.adam_eps)
    return model, report


def evaluate_margin(model: EncoderModel, data: TrainData, cfg: TrainConfig,
                    seed: int | None = None) -> dict:
    """Positive/negative cosine similarity on un-augmented Top-1 pairs.

    Anchors (all rows, or a sample of ``eval_anchors``) are shuffled with a
    fixed seed and split into batches of ``batch_n`` pairs, so runs with the
    same seed are scored on the same pairs and batches.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n = data.images.shape[0]
    size = n if cfg.eval_anchors is None else min(cfg.eval_anchors, n)
    anchors = rng.choice(n, size=size, replace=False)
    eval_data = TrainData(data.images, data.keypoints, data.eval_positives)
    pos, neg = [], []
    for i in range(0, len(anchors), cfg.batch_n):
        chunk = anchors[i:i + cfg.batch_n]
        if len(chunk) < 2:
            continue
        batch = make_batch(eval_data, chunk, rng, cfg.augment, augment=False)
        _, z, _ = encoder_forward(model, batch.images.reshape(batch.size, -1))
        zt = inverse_align(z.astype(np.float64), batch.params)
        rep = weighted_ntxent(zt, *unit_weights(batch.size), cfg.tau)
        pos.append(rep.mean_pos_sim)
        neg.append(rep.mean_neg_sim)
    mp, mn = float(np.mean(pos)), float(np.mean(neg))
    return {"mean_pos_sim": mp, "mean_neg_sim": mn, "margin": mp - mn}


def train_loop(data: TrainData, cfg: TrainConfig, pca: PcaModel | None = None,
               model: EncoderModel | None = None, log_fh=None):
    """Train for ``cfg.steps`` steps; returns (model, per-step metrics, summary)."""
    n = data.images.shape[0]
    if cfg.batch_n > n:
        raise ValueError(f"batch_n={cfg.batch_n} exceeds corpus size {n}")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        input_dim = int(np.prod(data.images.shape[1:]))
        model = init_encoder(input_dim, cfg.hidden, cfg.feature_dim, cfg.proj_dim,
                             seed=int(rng.integers(2**63)), activation=cfg.activation,
                             dtype=np.dtype(cfg.dtype))
    state = OptimizerState.zeros_like(model, cfg.optimizer)
    order = rng.permutation(n)
    cursor = 0
    metrics = []
    for step in range(cfg.steps):
        if cursor + cfg.batch_n > n:
            order = rng.permutation(n)
            cursor = 0
        anchors = order[cursor:cursor + cfg.batch_n]
        cursor += cfg.batch_n
        batch = make_batch(data, anchors, rng, cfg.augment)
        model, rep = train_step(model, batch, state, cfg, pca)
        if not np.isfinite(rep.loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        row = {"step": step, "loss": rep.loss,
               "mean_pos_sim": rep.mean_pos_sim, "mean_neg_sim": rep.mean_neg_sim}
        metrics.append(row)
        if log_fh is not None and step % cfg.log_every == 0:
            log_fh.write(json.dumps(row) + "\n")
        if step % 50 == 0:
            log.info("step %d loss %.4f pos %.3f neg %.3f", step, rep.loss,
                     rep.mean_pos_sim, rep.mean_neg_sim)
    summary = evaluate_margin(model, data, cfg)
    return model, metrics, summary


def smoothed_loss(metrics, window: int = 50) -> np.ndarray:
    """Means of consecutive, non-overlapping ``window``-step blocks of the loss."""
    loss = np.array([m["loss"] for m in metrics])
    nb = len(loss) // window
    return loss[:nb * window].reshape(nb, window).mean(axis=1)


def training_margin(metrics, window: int = 50) -> float:
    """Mean (positive - negative) cosine similarity over the last ``window`` steps."""
    tail = metrics[-window:]
    return float(np.mean([m["mean_pos_sim"] - m["mean_neg_sim"] for m in tail]))
