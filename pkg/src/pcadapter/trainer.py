"""Dual-path training loop, centroid regularizer and evaluation."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .config import TrainConfig
from .geometry import PointCloud
from .model import Model, PreparedCloud, prepare_cloud
from .pseudolabel import (BetaParams, ClassConfidenceStats, max_confidence_pl, rectify,
                          select_pseudo_label)

log = logging.getLogger(__name__)

SOURCE_GROUPS = ("encoder", "shape_adapter", "classifier")


def centroid_loss(z: np.ndarray, labels: Sequence[int]):
    """Sum over class pairs of squared cosine between per-class mean embeddings.

    Returns ``(loss, dz)`` with ``dz`` shaped like ``z``. Classes with a zero
    centroid are skipped.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    dz = np.zeros_like(z)
    classes = np.unique(labels)
    if len(classes) < 2:
        return 0.0, dz
    cents, units, norms, kept = [], [], [], []
    for t in classes:
        c = z[labels == t].mean(axis=0)
        n = np.linalg.norm(c)
        if n == 0:
            warnings.warn(f"zero-norm centroid for class {t}; skipped", RuntimeWarning, stacklevel=2)
            continue
        cents.append(c)
        units.append(c / n)
        norms.append(n)
        kept.append(t)
    if len(kept) < 2:
        return 0.0, dz
    u = np.array(units)
    gram = u @ u.T
    off = gram - np.diag(np.diag(gram))
    loss = 0.5 * float((off ** 2).sum())
    du = 2.0 * off @ u
    for row, t in enumerate(kept):
        dc = (du[row] - u[row] * (u[row] @ du[row])) / norms[row]
        mask = labels == t
        dz[mask] += dc / mask.sum()
    return loss, dz


def source_step(batch: Sequence[PreparedCloud], model: Model, opt: nn.Adam, config: TrainConfig,
                lr: float, stats: Optional[ClassConfidenceStats] = None, path: str = "source") -> float:
    """One labeled step on the source path; the locality adapter is never touched."""
    model.zero_grad()
    caches, dlogits, zs, labels = [], [], [], []
    loss = 0.0
    for cloud in batch:
        probs, cache = model.forward(cloud, path)
        ce, dl = nn.cross_entropy(probs, cloud.label)
        loss += ce
        if stats is not None:
            stats.add(probs, cloud.label)
        caches.append(cache)
        dlogits.append(dl)
        zs.append(cache["z"])
        labels.append(cloud.label)
    n = len(batch)
    loss /= n
    dz_reg = np.zeros((n, model.value("clf.w").shape[0]))
    if config.lambda_centroid > 0:
        reg, dz_reg = centroid_loss(np.array(zs), labels)
        loss += config.lambda_centroid * reg
        dz_reg = config.lambda_centroid * dz_reg
    for cache, dl, dzr in zip(caches, dlogits, dz_reg):
        model.backward(cache, dl / n, dzr)
    opt.step(lr, names=model.names_in(SOURCE_GROUPS))
    return loss


def pseudo_label(probs, config: TrainConfig, betas: Optional[Sequence[BetaParams]]):
    if config.method == "maxconf_pl":
        return max_confidence_pl(probs, config.maxconf_gamma)
    if betas is None:
        betas = [BetaParams.invalid()] * len(probs)
    return select_pseudo_label(rectify(probs, betas, config.r0), config.gamma, config.r0)


def target_step(batch: Sequence[PreparedCloud], model: Model, opt: nn.Adam, config: TrainConfig,
                lr: float, betas: Optional[Sequence[BetaParams]] = None):
    """Self-training step on the target path. Returns ``(loss, n_pseudo_labeled, labels)``.

    Shared components (encoder, shape adapter) move at ``rho`` times the
    learning rate; nothing is updated when no sample gets a pseudo-label.
    """
    model.zero_grad()
    picked = []
    assigned = []
    for cloud in batch:
        probs, cache = model.forward(cloud, "target")
        choice = pseudo_label(probs, config, betas)
        assigned.append(None if choice is None else choice[0])
        if choice is not None:
            picked.append((probs, cache, choice[0]))
    if not picked:
        return 0.0, 0, assigned
    loss = 0.0
    n = len(picked)
    for probs, cache, label in picked:
        ce, dl = nn.cross_entropy(probs, label)
        loss += ce
        model.backward(cache, dl / n)
    scales = {"encoder": config.rho, "shape_adapter": config.rho,
              "locality_adapter": 1.0, "classifier": 1.0}
    opt.step(lr, scales)
    return loss / n, n, assigned


# -- evaluation ------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    balanced_accuracy: float
    confusion: np.ndarray
    predicted_histogram: np.ndarray
    class_mean_confidence: np.ndarray

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "confusion": self.confusion.tolist(),
            "predicted_histogram": self.predicted_histogram.tolist(),
            "class_mean_confidence": [None if math.isnan(x) else x for x in self.class_mean_confidence],
        }


def report_from_predictions(labels, predictions, true_conf, n_classes: int) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, predictions), 1)
    support = conf.sum(axis=1)
    present = support > 0
    recalls = np.diag(conf)[present] / support[present]
    true_conf = np.asarray(true_conf, dtype=np.float64)
    mean_conf = np.array([true_conf[labels == t].mean() if present[t] else math.nan
                          for t in range(n_classes)])
    return EvalReport(
        accuracy=float(np.trace(conf) / max(len(labels), 1)),
        balanced_accuracy=float(recalls.mean()) if len(recalls) else math.nan,
        confusion=conf,
        predicted_histogram=np.bincount(predictions, minlength=n_classes),
        class_mean_confidence=mean_conf,
    )


def evaluate(dataset: Sequence[PreparedCloud], model: Model, path: str) -> EvalReport:
    probs = np.array([model.predict(c, path) for c in dataset])
    labels = np.array([c.label for c in dataset])
    return report_from_predictions(labels, probs.argmax(axis=1),
                                   probs[np.arange(len(labels)), labels], model.n_classes)


def eval_path(method: str) -> str:
    return "source" if method == "source_only" else "target"


# -- full training ---------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    optimizer: nn.Adam
    betas: list
    metrics: list = field(default_factory=list)
    epochs_done: int = 0


def class_stat_rows(stats: ClassConfidenceStats, betas) -> list[dict]:
    """Per-class (count, mean, variance, alpha, beta, valid) of one epoch's source confidences."""
    means, variances = stats.mean(), stats.variance()
    return [{"count": int(stats.count[t]), "mean": float(means[t]), "variance": float(variances[t]),
             "alpha": float(b.alpha), "beta": float(b.beta), "valid": bool(b.valid)}
            for t, b in enumerate(betas)]


def prepare_dataset(clouds: Sequence[PointCloud], config: TrainConfig) -> list[PreparedCloud]:
    return [prepare_cloud(c, config.fps_ratio, config.k, config.fps_seed_index) for c in clouds]


def _ensure_prepared(data, config):
    if data and isinstance(data[0], PreparedCloud):
        return list(data)
    return prepare_dataset(data, config)


def new_model(config: TrainConfig, n_classes: int) -> tuple[Model, nn.Adam]:
    model = Model(n_classes, config.hidden, config.feat_dim, config.combine, config.seed,
                  locality_init=config.locality_init)
    opt = nn.Adam(model.params, weight_decay=config.weight_decay)
    return model, opt


def train(source, target, config: TrainConfig, n_classes: int = 6,
          source_path: str = "source", eval_every: bool = True) -> TrainResult:
    """Run the interleaved source/target loop for ``config.epochs`` epochs.

    ``source`` and ``target`` may be raw clouds or already prepared. Target
    labels are only read for the per-epoch monitoring metrics.
    """
    config.validate()
    if len(source) == 0 or (config.method != "source_only" and len(target) == 0):
        raise ValueError("training needs non-empty source and target datasets")
    source = _ensure_prepared(source, config)
    target = _ensure_prepared(target, config) if len(target) else []
    model, opt = new_model(config, n_classes)
    rng = np.random.default_rng(config.seed)
    stats = ClassConfidenceStats(n_classes)
    betas = [BetaParams.invalid()] * n_classes
    result = TrainResult(model, opt, betas)
    adapt = config.method != "source_only"
    bs = config.batch_size
    path = eval_path(config.method) if source_path == "source" else source_path
    for epoch in range(config.epochs):
        lr = nn.cosine_anneal(config.base_lr, epoch, config.epochs)
        src_order = rng.permutation(len(source))
        tgt_order = rng.permutation(len(target)) if adapt else None
        n_steps = max(len(source), len(target) if adapt else 0)
        n_batches = math.ceil(n_steps / bs)
        src_loss = tgt_loss = 0.0
        n_tgt_steps = n_pl = 0
        pl_hist = np.zeros(n_classes, dtype=np.int64)
        for b in range(n_batches):
            idx = np.arange(b * bs, min((b + 1) * bs, n_steps))
            src_batch = [source[src_order[i % len(source)]] for i in idx]
            src_loss += source_step(src_batch, model, opt, config, lr, stats, source_path)
            if adapt:
                tgt_batch = [target[tgt_order[i % len(target)]] for i in idx]
                loss, n, assigned = target_step(tgt_batch, model, opt, config, lr, betas)
                for a in assigned:
                    if a is not None:
                        pl_hist[a] += 1
                if n:
                    tgt_loss += loss
                    n_tgt_steps += 1
                n_pl += n
        betas = stats.fit()
        class_stats = class_stat_rows(stats, betas)
        stats.reset()
        result.betas = betas
        row = {"epoch": epoch, "lr": lr, "source_loss": src_loss / n_batches,
               "target_loss": tgt_loss / n_tgt_steps if n_tgt_steps else 0.0, "n_pl": n_pl,
               "target_acc": math.nan, "target_bacc": math.nan, "pl_hist": pl_hist.tolist(),
               "class_stats": class_stats}
        if eval_every and target and target[0].label is not None:
            rep = evaluate(target, model, path)
            row["target_acc"], row["target_bacc"] = rep.accuracy, rep.balanced_accuracy
        log.info("epoch %d lr %.3g src %.4f tgt %.4f n_pl %d acc %.4f bacc %.4f", epoch, lr,
                 row["source_loss"], row["target_loss"], n_pl, row["target_acc"], row["target_bacc"])
        result.metrics.append(row)
        result.epochs_done = epoch + 1
    return result
