"""Encoder + adapters + classifier wired into the three forward paths.

``plain``   encoder -> mean pool -> classifier (no adapters)
``source``  encoder -> shape adapter; Combine(shape, encoder) -> classifier
``target``  encoder -> shape + locality adapters; Combine(shape, locality, encoder@FPS) -> classifier
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .geometry import PointCloud, farthest_point_sample, knn_graph
from .locality_adapter import aggregation_matrix, locality_adapter_backward, locality_adapter_forward
from .shape_adapter import relative_positional_encoding, shape_adapter_backward, shape_adapter_forward

PATHS = ("plain", "source", "target")


@dataclass
class PreparedCloud:
    """A cloud plus everything about it that depends on coordinates only."""
    points: np.ndarray
    label: Optional[int]
    fps: np.ndarray
    sigma: np.ndarray
    coef: object  # scipy CSR (m', m)


def prepare_cloud(cloud: PointCloud, fps_ratio: float, k: int, seed_index: int = 0) -> PreparedCloud:
    centers = farthest_point_sample(cloud, fps_ratio, seed_index)
    fps = centers.indices
    sigma = relative_positional_encoding(cloud.points[fps]) if len(fps) >= 2 else np.zeros((1, 1))
    coef = aggregation_matrix(knn_graph(cloud, centers, k))
    return PreparedCloud(cloud.points, cloud.label, fps, sigma, coef)


def combine(pooled: list[np.ndarray], mode: str) -> np.ndarray:
    widths = {p.shape[-1] for p in pooled}
    if len(widths) != 1:
        raise ValueError(f"Combine streams differ in width: {sorted(widths)}")
    z = np.sum(pooled, axis=0)
    return z / len(pooled) if mode == "average" else z


def combine_streams(streams: list[np.ndarray], mode: str) -> np.ndarray:
    """Mean-pool each (rows, D) stream, then sum or average the pooled vectors."""
    if not streams:
        raise ValueError("Combine needs at least one stream")
    return combine([s.mean(axis=0) for s in streams], mode)


class Model:
    def __init__(self, n_classes: int, hidden: int = 32, feat_dim: int = 64,
                 combine_mode: str = "sum", seed: int = 0, params: Optional[dict] = None,
                 locality_init: str = "glorot"):
        self.n_classes = n_classes
        self.combine_mode = combine_mode
        if params is None:
            rng = np.random.default_rng(seed)
            theta = nn.glorot(rng, feat_dim, feat_dim)
            if locality_init == "zeros":
                # locality stream starts silent; the target path then differs from
                # the source path only by FPS pooling of the encoder output
                theta = np.zeros_like(theta)
            elif locality_init != "glorot":
                raise ValueError(f"unknown locality_init {locality_init!r}")
            params = {
                "enc.w1": nn.Param(nn.glorot(rng, 3, hidden), "encoder"),
                "enc.b1": nn.Param(np.zeros(hidden), "encoder"),
                "enc.w2": nn.Param(nn.glorot(rng, hidden, feat_dim), "encoder"),
                "enc.b2": nn.Param(np.zeros(feat_dim), "encoder"),
                "shape.proj": nn.Param(nn.glorot(rng, feat_dim, feat_dim), "shape_adapter"),
                "local.theta": nn.Param(theta, "locality_adapter"),
                "clf.w": nn.Param(nn.glorot(rng, feat_dim, n_classes), "classifier"),
                "clf.b": nn.Param(np.zeros(n_classes), "classifier"),
            }
        self.params = params

    def value(self, name):
        return self.params[name].values

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def names_in(self, groups) -> list[str]:
        return [k for k, p in self.params.items() if p.group in groups]

    # -- forward / backward ------------------------------------------------

    def embed(self, cloud: PreparedCloud, path: str):
        """Pooled classifier input ``z`` and the cache needed to backprop into it."""
        if path not in PATHS:
            raise ValueError(f"unknown path {path!r}")
        v = self.value
        feats, enc_cache = nn.encoder_forward(cloud.points, v("enc.w1"), v("enc.b1"),
                                              v("enc.w2"), v("enc.b2"))
        cache = {"path": path, "enc": enc_cache, "m": len(feats), "fps": cloud.fps}
        if path == "plain":
            pooled = [feats.mean(axis=0)]
        else:
            fps_feats = feats[cloud.fps]
            shape_out, cache["shape"] = shape_adapter_forward(fps_feats, cloud.sigma, v("shape.proj"))
            if path == "source":
                pooled = [shape_out.mean(axis=0), feats.mean(axis=0)]
            else:
                local_out, cache["local"] = locality_adapter_forward(feats, cloud.coef, v("local.theta"))
                pooled = [shape_out.mean(axis=0), local_out.mean(axis=0), fps_feats.mean(axis=0)]
        cache["n_streams"] = len(pooled)
        return combine(pooled, self.combine_mode), cache

    def logits(self, z):
        return z @ self.value("clf.w") + self.value("clf.b")

    def forward(self, cloud: PreparedCloud, path: str):
        z, cache = self.embed(cloud, path)
        cache["z"] = z
        return nn.softmax(self.logits(z)), cache

    def backward(self, cache, dlogits, dz_extra=None):
        """Accumulate parameter gradients for one sample."""
        p = self.params
        z = cache["z"]
        p["clf.w"].grad += np.outer(z, dlogits)
        p["clf.b"].grad += dlogits
        dz = self.value("clf.w") @ dlogits
        if dz_extra is not None:
            dz = dz + dz_extra
        self.backward_embed(cache, dz)

    def backward_embed(self, cache, dz):
        p = self.params
        if self.combine_mode == "average":
            dz = dz / cache["n_streams"]
        m, fps = cache["m"], cache["fps"]
        dfeats = np.zeros((m, dz.shape[0]))
        path = cache["path"]
        if path in ("plain", "source"):
            dfeats += dz / m
        if path != "plain":
            n_fps = len(fps)
            dshape = np.broadcast_to(dz / n_fps, (n_fps, dz.shape[0]))
            dfps, dproj = shape_adapter_backward(dshape, cache["shape"])
            p["shape.proj"].grad += dproj
            if path == "target":
                dfps = dfps + dz / n_fps
                dlocal = np.broadcast_to(dz / n_fps, (n_fps, dz.shape[0]))
                dfull, dtheta = locality_adapter_backward(dlocal, cache["local"])
                p["local.theta"].grad += dtheta
                dfeats += dfull
            np.add.at(dfeats, fps, dfps)
        dw1, db1, dw2, db2 = nn.encoder_backward(dfeats, cache["enc"])
        p["enc.w1"].grad += dw1
        p["enc.b1"].grad += db1
        p["enc.w2"].grad += dw2
        p["enc.b2"].grad += db2

    def predict(self, cloud: PreparedCloud, path: str) -> np.ndarray:
        return self.forward(cloud, path)[0]
