"""Degree-normalized graph convolution over the FPS-center kNN graph."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .geometry import KnnGraph


def aggregation_matrix(graph: KnnGraph) -> sparse.csr_matrix:
    """Sparse (m', m) matrix C with C[i, j] = 1 / (deg_j * deg_i) over N(i) and i itself.

    Degrees count every directed edge touching a node, plus one for the self loop.
    """
    deg = graph.degrees()
    centers = np.asarray(graph.centers.indices, dtype=np.int64)
    rows, cols, vals = [], [], []
    for row, (c, nbrs) in enumerate(zip(centers, graph.neighbors)):
        nbrs = np.asarray(nbrs, dtype=np.int64)
        rows.append(np.full(len(nbrs) + 1, row))
        cols.append(np.concatenate([[c], nbrs]))
        vals.append(np.concatenate([[1.0 / (deg[c] * deg[c])], 1.0 / (deg[nbrs] * deg[c])]))
    shape = (len(centers), graph.centers.parent_size)
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=shape)


def locality_adapter_forward(feats: np.ndarray, coef: np.ndarray, theta: np.ndarray):
    """Rows of ``(coef @ feats) @ theta``, one per FPS center."""
    agg = np.asarray(coef @ feats)
    return agg @ theta, (feats, coef, theta, agg)


def locality_adapter_backward(dout: np.ndarray, cache):
    feats, coef, theta, agg = cache
    dtheta = agg.T @ dout
    dfeats = np.asarray(coef.T @ (dout @ theta.T))
    return dfeats, dtheta
