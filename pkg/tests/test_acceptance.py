"""Acceptance criteria 1-8, each at its stated tolerance and runtime budget.

Every criterion logs one PASS/FAIL line (see the "acceptance criteria" section
of the pytest terminal summary). Criterion 6 trains nine desk-scale models and
dominates the runtime (roughly 15-20 minutes on one core).

    pytest tests/test_acceptance.py -v
"""

import csv
import math
import warnings

import numpy as np
import pytest
from scipy import integrate, special

from pcadapter import nn
from pcadapter.cli import main as cli_main
from pcadapter.config import TrainConfig
from pcadapter.experiments import desk_comparison, minority_classes
from pcadapter.datagen import SOURCE_PRIORS_IMBALANCED
from pcadapter.geometry import farthest_point_sample, knn_graph
from pcadapter.locality_adapter import aggregation_matrix, locality_adapter_backward, locality_adapter_forward
from pcadapter.model import Model, prepare_cloud
from pcadapter.geometry import PointCloud
from pcadapter.pseudolabel import BetaParams, fit_beta_mom, rectify, regularized_incomplete_beta
from pcadapter.shape_adapter import (DegenerateGeometryWarning, relative_positional_encoding,
                                     shape_adapter_backward, shape_adapter_forward)
from pcadapter.trainer import centroid_loss, source_step, target_step

from acceptance_log import criterion
from oracles import brute_fps, brute_knn, central_diff, rel_error

# Desk protocol for criterion 6. r0 and gamma come from the tuning sets the
# method prescribes ({0.1, 10, ..., 45} and [0.7, 0.92]); see README "Desk results".
DESK_SEEDS = (0, 1, 2)
DESK_CONFIG = TrainConfig(epochs=40, r0=45, gamma=0.9)
# Required margins: accuracy gain over source_only, and bAcc margin over maxconf_pl.
DESK_ACC_GAIN = 0.05
DESK_BACC_MARGIN = 0.0


class NoStep:
    def step(self, *args, **kwargs):
        pass


def quad_cdf(x, a, b):
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    if x <= 0.5:
        val, _ = integrate.quad(lambda t: (1 - t) ** (b - 1), 0.0, x, weight="alg", wvar=(a - 1, 0), **opts)
        return val / special.beta(a, b)
    val, _ = integrate.quad(lambda t: t ** (a - 1), x, 1.0, weight="alg", wvar=(0, b - 1), **opts)
    return 1.0 - val / special.beta(a, b)


# -- 1 ---------------------------------------------------------------------

@criterion(1, "positional-encoding rows sum to 1, farthest point gets 0", 5)
def test_criterion_1_positional_encoding():
    rng = np.random.default_rng(1)
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", DegenerateGeometryWarning)
        for _ in range(1000):
            m = int(rng.integers(3, 65))
            pts = rng.normal(size=(m, 3))
            sigma = relative_positional_encoding(pts)
            assert np.all(np.diag(sigma) == 0)
            off = sigma.sum(axis=1)
            worst = max(worst, float(np.abs(off - 1).max()))
            d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
            assert np.all(sigma[np.arange(m), d.argmax(axis=1)] == 0.0)
    assert worst <= 1e-9
    return f"max |row sum - 1| = {worst:.1e}"


# -- 2 ---------------------------------------------------------------------

def _micro_model(seed):
    model = Model(3, hidden=5, feat_dim=4, seed=seed, locality_init="glorot")
    rng = np.random.default_rng(seed + 100)
    for name in ("enc.b1", "enc.b2", "clf.b"):
        model.params[name].values[:] = rng.normal(scale=0.3, size=model.value(name).shape)
    return model


def _micro_batch(n, seed, labels=None):
    rng = np.random.default_rng(seed)
    return [prepare_cloud(PointCloud(rng.uniform(-0.5, 0.5, size=(12, 3)), None if labels is None else labels[i]),
                          0.25, 3) for i in range(n)]


@criterion(2, "analytic gradients match central differences (rel err < 1e-4)", 30)
def test_criterion_2_gradients():
    rng = np.random.default_rng(2)
    errors = {}

    w = [rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=(5, 4)), rng.normal(size=4)]
    pts, probe = rng.normal(size=(16, 3)), rng.normal(size=(16, 4))
    grads = nn.encoder_backward(probe, nn.encoder_forward(pts, *w)[1])
    errors["encoder"] = max(rel_error(g, central_diff(lambda: float((nn.encoder_forward(pts, *w)[0] * probe).sum()), p))
                            for g, p in zip(grads, w))

    feats, proj = rng.normal(size=(6, 4)), rng.normal(size=(4, 4))
    sigma = relative_positional_encoding(rng.normal(size=(6, 3)))
    probe = rng.normal(size=(6, 4))
    shape_loss = lambda: float((shape_adapter_forward(feats, sigma, proj)[0] * probe).sum())  # noqa: E731
    dfeats, dproj = shape_adapter_backward(probe, shape_adapter_forward(feats, sigma, proj)[1])
    errors["shape adapter"] = max(rel_error(dfeats, central_diff(shape_loss, feats)),
                                  rel_error(dproj, central_diff(shape_loss, proj)))

    cloud = rng.normal(size=(16, 3))
    coef = aggregation_matrix(knn_graph(cloud, farthest_point_sample(cloud, 0.25), 3))
    lfeats, theta = rng.normal(size=(16, 4)), rng.normal(size=(4, 4))
    probe = rng.normal(size=(4, 4))
    local_loss = lambda: float((locality_adapter_forward(lfeats, coef, theta)[0] * probe).sum())  # noqa: E731
    dl, dt = locality_adapter_backward(probe, locality_adapter_forward(lfeats, coef, theta)[1])
    errors["locality adapter"] = max(rel_error(dl, central_diff(local_loss, lfeats)),
                                     rel_error(dt, central_diff(local_loss, theta)))

    cw, cb, z = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=4)
    _, dlog = nn.cross_entropy(nn.classify(z, cw, cb), 1)
    clf_loss = lambda: nn.cross_entropy(nn.classify(z, cw, cb), 1)[0]  # noqa: E731
    errors["classifier"] = max(rel_error(np.outer(z, dlog), central_diff(clf_loss, cw)),
                               rel_error(dlog, central_diff(clf_loss, cb)))

    zs, labels = rng.normal(size=(7, 4)), [0, 1, 2, 0, 1, 2, 2]
    errors["centroid loss"] = rel_error(centroid_loss(zs, labels)[1],
                                        central_diff(lambda: centroid_loss(zs, labels)[0], zs))

    model = _micro_model(1)
    batch = _micro_batch(3, 4, labels=[0, 1, 2])
    cfg = TrainConfig(lambda_centroid=0.5)
    source_step(batch, model, NoStep(), cfg, 0.0)
    g = {k: p.grad.copy() for k, p in model.params.items()}

    def src_loss():
        model.zero_grad()
        return source_step(batch, model, NoStep(), cfg, 0.0)

    errors["source path"] = max(rel_error(g[k], central_diff(src_loss, model.params[k].values))
                                for k in model.names_in(("encoder", "shape_adapter", "classifier")))

    model = _micro_model(2)
    batch = _micro_batch(3, 5)
    tcfg = TrainConfig(method="maxconf_pl", maxconf_gamma=0.0)
    target_step(batch, model, NoStep(), tcfg, 0.0)
    g = {k: p.grad.copy() for k, p in model.params.items()}

    def tgt_loss():
        model.zero_grad()
        return target_step(batch, model, NoStep(), tcfg, 0.0)[0]

    errors["target path"] = max(rel_error(g[k], central_diff(tgt_loss, p.values)) for k, p in model.params.items())

    bad = {k: v for k, v in errors.items() if not v < 1e-4}
    assert not bad, f"relative errors too large: {bad}"
    return "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items())


# -- 3 ---------------------------------------------------------------------

@criterion(3, "beta machinery: MoM round trip, CDF vs quadrature, moment identity", 20)
def test_criterion_3_beta():
    x = np.random.default_rng(3).beta(2, 5, size=100_000)
    fit = fit_beta_mom(x.mean(), x.var(ddof=1), len(x))
    assert abs(fit.alpha - 2) <= 0.1 and abs(fit.beta - 5) <= 0.1, (fit.alpha, fit.beta)

    worst_cdf = 0.0
    params = [0.5, 1, 2, 5, 8]
    for a in params:
        for b in params:
            for xv in np.linspace(0, 1, 50):
                worst_cdf = max(worst_cdf, abs(regularized_incomplete_beta(xv, a, b) - quad_cdf(xv, a, b)))
    assert worst_cdf < 1e-8, worst_cdf

    rng = np.random.default_rng(33)
    worst_mom = 0.0
    for _ in range(2000):
        mean = rng.uniform(0.01, 0.99)
        var = rng.uniform(0.01, 0.99) * mean * (1 - mean)
        f = fit_beta_mom(mean, var)
        worst_mom = max(worst_mom, abs(f.mean() - mean), abs(f.variance() - var))
    assert worst_mom < 1e-9, worst_mom
    return (f"MoM ({fit.alpha:.3f}, {fit.beta:.3f}); cdf err {worst_cdf:.1e}; "
            f"moment err {worst_mom:.1e}")


# -- 4 ---------------------------------------------------------------------

@criterion(4, "FPS and kNN equal brute-force references on 200 clouds", 10)
def test_criterion_4_fps_knn():
    rng = np.random.default_rng(4)
    for _ in range(200):
        m = int(rng.integers(2, 65))
        pts = rng.uniform(-1, 1, size=(m, 3))
        ratio = float(rng.uniform(0.05, 1.0))
        seed = int(rng.integers(0, m))
        centers = farthest_point_sample(pts, ratio, seed)
        assert centers.indices.tolist() == brute_fps(pts, len(centers), seed)
        k = int(rng.integers(1, 9))
        graph = knn_graph(pts, centers, k)
        for c, nbrs in zip(centers.indices, graph.neighbors):
            assert nbrs.tolist() == brute_knn(pts, c, k)
    return "200/200 clouds"


# -- 5 ---------------------------------------------------------------------

@criterion(5, "rectification flips a majority/minority argmax", 1)
def test_criterion_5_rectification_flip():
    probs = np.array([0.70, 0.65])
    fits = [BetaParams(8, 2), BetaParams(2, 8)]
    r0 = 0.1
    r = [quad_cdf(0.70, 8, 2), quad_cdf(0.65, 2, 8)]
    expected = probs / (1 - np.array(r) + r0)
    assert expected[1] > expected[0]
    out = rectify(probs, fits, r0)
    np.testing.assert_allclose(out, expected, rtol=1e-9)
    assert np.argmax(probs) == 0 and np.argmax(out) == 1
    return f"raw (0.70, 0.65) -> rectified ({out[0]:.4f}, {out[1]:.4f})"


# -- 6 ---------------------------------------------------------------------

@criterion(6, "desk adaptation: pc_adapter vs source_only and maxconf_pl", 30 * 60)
def test_criterion_6_desk_adaptation():
    methods = ("pc_adapter", "maxconf_pl", "source_only")
    runs = desk_comparison(DESK_SEEDS, DESK_CONFIG, methods)
    by = {m: [r for r in runs if r["method"] == m] for m in methods}
    acc = {m: float(np.mean([r["accuracy"] for r in by[m]])) for m in methods}
    bacc = {m: float(np.mean([r["balanced_accuracy"] for r in by[m]])) for m in methods}
    minority = {m: sum(r["minority_pl"] for r in by[m]) for m in methods}
    summary = (f"acc pc {acc['pc_adapter']:.4f} so {acc['source_only']:.4f} mc {acc['maxconf_pl']:.4f}; "
               f"bAcc pc {bacc['pc_adapter']:.4f} mc {bacc['maxconf_pl']:.4f}; "
               f"minority PL pc {minority['pc_adapter']} mc {minority['maxconf_pl']}")
    assert minority_classes(SOURCE_PRIORS_IMBALANCED) == [3, 4, 5]
    failures = []
    if not acc["pc_adapter"] - acc["source_only"] >= DESK_ACC_GAIN:
        failures.append(f"(a) gain {acc['pc_adapter'] - acc['source_only']:+.4f} < {DESK_ACC_GAIN}")
    if not bacc["pc_adapter"] - bacc["maxconf_pl"] >= DESK_BACC_MARGIN:
        failures.append(f"(b) bAcc margin {bacc['pc_adapter'] - bacc['maxconf_pl']:+.4f} < {DESK_BACC_MARGIN}")
    if not minority["pc_adapter"] > minority["maxconf_pl"]:
        failures.append("(b) minority pseudo-labels not strictly higher")
    assert not failures, "; ".join(failures) + " | " + summary
    return summary


# -- 7 ---------------------------------------------------------------------

def _read(path):
    return path.read_bytes()


@criterion(7, "ablate-fps three-ratio table and analyze-pl histograms, deterministic", 20 * 60)
def test_criterion_7_protocol_harnesses(tmp_path):
    data = tmp_path / "data"
    assert cli_main(["gen-data", "--seed", "0", "--out", str(data)]) == 0
    files = ["--set", f"source={data / 'source.txt'}", "--set", f"target={data / 'target.txt'}"]
    knobs = ["--set", f"r0={DESK_CONFIG.r0}", "--set", f"gamma={DESK_CONFIG.gamma}"]

    tables = []
    for rep in range(2):
        out = tmp_path / f"fps{rep}"
        assert cli_main(["ablate-fps", "--out", str(out)] + files) == 0
        tables.append(_read(out / "fps_ablation.csv"))
    rows = list(csv.DictReader((tmp_path / "fps0" / "fps_ablation.csv").open()))
    assert [float(r["point_ratio"]) for r in rows] == [1.0, 0.5, 0.25]
    assert [int(r["points"]) for r in rows] == [1024, 512, 256]
    assert all(0 <= float(r["target_accuracy"]) <= 1 for r in rows)
    assert tables[0] == tables[1]

    train_dir = tmp_path / "train"
    assert cli_main(["train", "--out", str(train_dir)] + files + knobs) == 0
    ck = ["--set", f"checkpoint={train_dir / 'checkpoint.npz'}"]
    names = ("source_labels", "target_labels", "target_pseudo_labels", "source_confidence")
    minority = {}
    for mode in ("maxconf", "rectified"):
        outputs = []
        for rep in range(2):
            out = tmp_path / f"pl_{mode}{rep}"
            assert cli_main(["analyze-pl", "--out", str(out), "--set", f"mode={mode}"] + ck + files) == 0
            outputs.append([_read(out / f"{n}.csv") for n in names])
        assert outputs[0] == outputs[1]
        out = tmp_path / f"pl_{mode}0"
        pl = {r["class"]: int(r["count"]) for r in csv.DictReader((out / "target_pseudo_labels.csv").open())}
        assert sum(pl.values()) == 600
        assert sum(int(r["count"]) for r in csv.DictReader((out / "source_labels.csv").open())) == 600
        minority[mode] = sum(pl[str(t)] for t in (3, 4, 5))
    accs = ", ".join(f"{r['point_ratio']}: {float(r['target_accuracy']):.3f}" for r in rows)
    return f"fps table [{accs}]; minority PLs maxconf {minority['maxconf']} rectified {minority['rectified']}"


# -- 8 ---------------------------------------------------------------------

def _target_deltas(rho):
    model = _micro_model(5)
    opt = nn.Adam(model.params, weight_decay=5e-5)
    start = {k: p.values.copy() for k, p in model.params.items()}
    cfg = TrainConfig(method="maxconf_pl", maxconf_gamma=0.0, rho=rho)
    target_step(_micro_batch(4, 8), model, opt, cfg, 1e-3)
    return {k: p.values - start[k] for k, p in model.params.items()}


@criterion(8, "path exclusivity and rho-scaled target updates", 5)
def test_criterion_8_path_exclusivity():
    model = _micro_model(4)
    opt = nn.Adam(model.params)
    theta = model.value("local.theta").copy()
    source_step(_micro_batch(4, 7, labels=[0, 1, 2, 1]), model, opt, TrainConfig(), 1e-3)
    assert np.array_equal(model.value("local.theta"), theta)

    weak, full = _target_deltas(0.2), _target_deltas(1.0)
    ratios = []
    for name in ("enc.w1", "enc.b1", "enc.w2", "enc.b2", "shape.proj"):
        ratios.append(np.linalg.norm(weak[name]) / np.linalg.norm(full[name]))
    worst = max(abs(r - 0.2) for r in ratios)
    assert worst <= 1e-6, ratios
    for name in ("local.theta", "clf.w", "clf.b"):
        assert np.array_equal(weak[name], full[name]) and np.any(full[name] != 0)
    return f"Phi/Psi_g update ratio 0.2 +/- {worst:.1e}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
