"""Experiment protocols: method comparison, FPS-reduction ablation, pseudo-label analysis."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .datagen import N_CLASSES, generate_dataset, preset_specs
from .geometry import PointCloud, farthest_point_sample
from .model import Model, PreparedCloud
from .pseudolabel import ClassConfidenceStats, max_confidence_pl, rectify, select_pseudo_label
from .trainer import evaluate, eval_path, prepare_dataset, train

log = logging.getLogger(__name__)

FPS_ABLATION_RATIOS = (1.0, 0.5, 0.25)


def minority_classes(priors: Sequence[float]) -> list[int]:
    """The half of the classes with the smallest source priors."""
    order = np.argsort(np.asarray(priors), kind="stable")
    return sorted(int(t) for t in order[: len(priors) // 2])


def desk_comparison(seeds, base: TrainConfig, methods, n_per_domain=600, points_per_cloud=1024,
                    preset="imbalanced-synth"):
    """Train every method on the same per-seed datasets; one result dict per (seed, method)."""
    runs = []
    for seed in seeds:
        src_spec, tgt_spec = preset_specs(preset, seed)
        minor = minority_classes(src_spec.class_priors)
        cfg = base.replace(seed=seed)
        source = prepare_dataset(generate_dataset(n_per_domain, src_spec, points_per_cloud), cfg)
        target = prepare_dataset(generate_dataset(n_per_domain, tgt_spec, points_per_cloud), cfg)
        for method in methods:
            res = train(source, target, cfg.replace(method=method), N_CLASSES, eval_every=False)
            rep = evaluate(target, res.model, eval_path(method))
            pl_hist = np.sum([row["pl_hist"] for row in res.metrics], axis=0) if res.metrics else np.zeros(N_CLASSES)
            runs.append({
                "seed": seed, "method": method,
                "accuracy": rep.accuracy, "balanced_accuracy": rep.balanced_accuracy,
                "pl_hist": [int(x) for x in pl_hist],
                "minority_pl": int(sum(pl_hist[t] for t in minor)),
                "confusion": rep.confusion.tolist(),
            })
            log.info("seed %d %s acc %.4f bacc %.4f", seed, method, rep.accuracy, rep.balanced_accuracy)
    return runs


def fps_reduce(cloud: PointCloud, ratio: float, seed_index: int = 0) -> PointCloud:
    idx = farthest_point_sample(cloud, ratio, seed_index).indices
    return PointCloud(cloud.points[np.sort(idx)], cloud.label)


def run_fps_ablation(source, target, config: TrainConfig, n_classes: int = N_CLASSES,
                     ratios=FPS_ABLATION_RATIOS) -> list[dict]:
    """Source-only, adapter-free models trained on FPS-thinned source clouds, scored on the target."""
    cfg = config.replace(method="source_only")
    target_prepared = prepare_dataset(target, cfg)
    rows = []
    for ratio in ratios:
        reduced = [fps_reduce(c, ratio, cfg.fps_seed_index) for c in source]
        res = train(prepare_dataset(reduced, cfg), [], cfg, n_classes, source_path="plain", eval_every=False)
        rep = evaluate(target_prepared, res.model, "plain")
        rows.append({"point_ratio": ratio, "points": len(reduced[0]),
                     "target_accuracy": rep.accuracy, "target_balanced_accuracy": rep.balanced_accuracy})
    return rows


def source_confidence_stats(model: Model, source: Sequence[PreparedCloud], n_classes: int):
    stats = ClassConfidenceStats(n_classes)
    for c in source:
        stats.add(model.predict(c, "source"), c.label)
    return stats


def run_pl_analysis(model: Model, source: Sequence[PreparedCloud], target: Sequence[PreparedCloud],
                    config: TrainConfig, mode: str, n_classes: int = N_CLASSES) -> dict:
    """Histograms for label/pseudo-label distribution analysis.

    Pseudo-label histograms carry an extra trailing bucket for unlabeled
    samples so every histogram sums to its dataset size.
    """
    if mode not in ("maxconf", "rectified"):
        raise ValueError(f"mode must be 'maxconf' or 'rectified', got {mode!r}")
    stats = source_confidence_stats(model, source, n_classes)
    betas = stats.fit()
    pl = np.zeros(n_classes + 1, dtype=np.int64)
    for c in target:
        probs = model.predict(c, "target")
        if mode == "maxconf":
            choice = max_confidence_pl(probs, config.maxconf_gamma)
        else:
            choice = select_pseudo_label(rectify(probs, betas, config.r0), config.gamma, config.r0)
        pl[n_classes if choice is None else choice[0]] += 1
    return {
        "source_labels": np.bincount([c.label for c in source], minlength=n_classes),
        "target_labels": np.bincount([c.label for c in target if c.label is not None], minlength=n_classes),
        "target_pseudo_labels": pl,
        "source_class_confidence": stats.mean(),
        "betas": betas,
    }
