"""Single cosine-similarity attention layer over farthest-point-sampled points."""

from __future__ import annotations

import warnings

import numpy as np


class DegenerateGeometryWarning(RuntimeWarning):
    pass


def relative_positional_encoding(coords: np.ndarray) -> np.ndarray:
    """Row-normalized "closeness relative to the farthest point" weights.

    For anchor i, ``d_hat[i, j] = max_n d[i, n] - d[i, j]`` and the row is
    divided by its sum over j != i, so the off-diagonal entries sum to one and
    the farthest point gets weight 0. The diagonal is 0.

    Rows whose off-diagonal ``d_hat`` sum to zero (all other points equally
    far, e.g. m' = 2 or coincident points) fall back to the uniform
    ``1 / (m' - 1)`` and emit a :class:`DegenerateGeometryWarning`.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    if n < 2:
        raise ValueError("positional encoding needs at least two points")
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    d_hat = d.max(axis=1, keepdims=True) - d
    np.fill_diagonal(d_hat, 0.0)
    denom = d_hat.sum(axis=1)
    # ratios are scale-free, so compare against the row's own scale
    degenerate = denom <= 1e-12 * np.maximum(d.max(axis=1), 1e-300) * n
    sigma = np.divide(d_hat, denom[:, None], out=np.zeros_like(d_hat), where=~degenerate[:, None])
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} degenerate positional-encoding row(s); using uniform weights",
                      DegenerateGeometryWarning, stacklevel=2)
        sigma[degenerate] = 1.0 / (n - 1)
        sigma[np.arange(n), np.arange(n)] = 0.0
    return sigma


def cosine_weights(feats: np.ndarray):
    """Pairwise cosine similarities with a zeroed diagonal; zero-norm rows get weight 0."""
    norms = np.linalg.norm(feats, axis=1)
    zero = norms == 0.0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-norm feature row(s) in attention",
                      DegenerateGeometryWarning, stacklevel=2)
    unit = np.divide(feats, norms[:, None], out=np.zeros_like(feats), where=~zero[:, None])
    w = unit @ unit.T
    np.fill_diagonal(w, 0.0)
    return w, unit, norms


def shape_adapter_forward(feats: np.ndarray, sigma: np.ndarray, proj: np.ndarray):
    """out_i = sum_{j != i} w_ij * (feats_j @ proj + sigma_ij), sigma broadcast over features."""
    w, unit, norms = cosine_weights(feats)
    projected = feats @ proj
    out = w @ projected + (w * sigma).sum(axis=1, keepdims=True)
    return out, (feats, sigma, proj, w, unit, norms, projected)


def shape_adapter_backward(dout: np.ndarray, cache):
    """Gradients with respect to ``feats`` and ``proj``."""
    feats, sigma, proj, w, unit, norms, projected = cache
    dprojected = w.T @ dout
    dproj = feats.T @ dprojected
    dfeats = dprojected @ proj.T

    dw = dout @ projected.T + sigma * dout.sum(axis=1, keepdims=True)
    np.fill_diagonal(dw, 0.0)
    dunit = (dw + dw.T) @ unit
    radial = (unit * dunit).sum(axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)[:, None]
    dfeats += np.where(norms[:, None] > 0, (dunit - unit * radial) / safe, 0.0)
    return dfeats, dproj
