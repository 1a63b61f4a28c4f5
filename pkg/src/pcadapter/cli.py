"""``pcadapt`` command line: gen-data, train, eval, ablate-fps, analyze-pl.

Each command reads its own ``[section]`` of an INI-style config file
(``--config``), applies ``--set key=value`` overrides and ``--seed``, writes the
fully resolved section as ``<command>.ini`` into ``--out`` and puts every
artifact next to it. Diagnostics go to stderr; ``PCADAPT_LOG`` sets the level.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import nn
from .config import TrainConfig, coerce, format_value, read_run_config, write_run_config
from .datagen import N_CLASSES, generate_dataset, preset_specs
from .experiments import run_fps_ablation, run_pl_analysis
from .geometry import InvalidConfigError, read_dataset, write_dataset
from .model import Model
from .trainer import eval_path, evaluate, prepare_dataset, train

log = logging.getLogger("pcadapter")

SPEC_FIELDS = ("occlusion_fraction", "jitter_sigma", "density_factor", "scale_range", "class_priors")
GEN_DEFAULTS = {"preset": "imbalanced-synth", "n_source": 600, "n_target": 600,
                "points_per_cloud": 1024, "seed": 0}
TRAIN_FILES = {"source": "data/source.txt", "target": "data/target.txt"}
EVAL_DEFAULTS = {"checkpoint": "runs/train/checkpoint.npz", "dataset": "data/target.txt", "path": "auto"}
ARCH_KEYS = ("hidden", "feat_dim", "combine", "locality_init")
PL_DEFAULTS = {"checkpoint": "runs/train/checkpoint.npz", **TRAIN_FILES, "mode": "maxconf"}


class CliError(Exception):
    pass


# -- config resolution -----------------------------------------------------

def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InvalidConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def gather(args, section: str) -> dict[str, str]:
    values = read_run_config(args.config, section)
    values.update(parse_overrides(args.set))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return values


def resolve(values: dict[str, str], defaults: dict[str, Any], section: str) -> dict[str, Any]:
    out = dict(defaults)
    for key, raw in values.items():
        if key not in defaults:
            raise InvalidConfigError(f"[{section}] unknown key {key!r}")
        out[key] = coerce(raw, defaults[key], key)
    return out


def split_train(values: dict[str, str], extra: dict[str, Any], section: str):
    """Separate TrainConfig keys from command-specific keys; reject anything else."""
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    cfg_vals = {k: v for k, v in values.items() if k in known}
    rest = resolve({k: v for k, v in values.items() if k not in known}, extra, section)
    base = TrainConfig()
    cfg = TrainConfig(**{k: coerce(v, getattr(base, k), k) for k, v in cfg_vals.items()}).validate()
    return cfg, rest


def save_resolved(out: Path, section: str, values: dict[str, Any]) -> None:
    write_run_config(out / f"{section}.ini", section, values)


def out_dir(args, default: str) -> Path:
    path = Path(args.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_clouds(path) -> list:
    if not Path(path).is_file():
        raise CliError(f"dataset file not found: {path}")
    return read_dataset(path)


# -- writers ---------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) if isinstance(v, float) else v for v in row])


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- commands --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    defaults = dict(GEN_DEFAULTS)
    for side in ("source", "target"):
        for name in SPEC_FIELDS:
            defaults[f"{side}.{name}"] = ""
    opts = resolve(gather(args, "gen-data"), defaults, "gen-data")
    src, tgt = preset_specs(opts["preset"], opts["seed"])
    specs = {"source": src, "target": tgt}
    for side, spec in specs.items():
        for name in SPEC_FIELDS:
            raw = opts[f"{side}.{name}"]
            if raw != "":
                like = getattr(spec, name)
                value = tuple(float(v) for v in raw.split(",")) if isinstance(like, (tuple, list)) \
                    else float(raw)
                setattr(spec, name, value)
        try:
            spec.validate()
        except InvalidConfigError as exc:
            raise InvalidConfigError(f"{side}: {exc}") from None
    out = out_dir(args, "data")
    manifest = {"preset": opts["preset"], "seed": opts["seed"], "points_per_cloud": opts["points_per_cloud"],
                "files": {}}
    for side, spec in specs.items():
        n = opts[f"n_{side}"]
        clouds = generate_dataset(n, spec, opts["points_per_cloud"])
        path = out / f"{side}.txt"
        write_dataset(path, clouds)
        manifest["files"][side] = {
            "path": path.name, "n_clouds": n, "sha256": sha256(path),
            "label_counts": np.bincount([c.label for c in clouds], minlength=N_CLASSES).tolist(),
            "spec": {**dataclasses.asdict(spec), "class_priors": list(spec.class_priors)},
        }
        log.info("wrote %s (%d clouds)", path, n)
    for side, spec in specs.items():
        for name in SPEC_FIELDS:
            opts[f"{side}.{name}"] = getattr(spec, name)
    save_resolved(out, "gen-data", opts)
    write_json(out / "manifest.json", manifest)
    print(out / "manifest.json")
    return 0


def metrics_rows(metrics):
    keys = ("epoch", "lr", "source_loss", "target_loss", "n_pl", "target_acc", "target_bacc")
    return keys, [[row[k] for k in keys] for row in metrics]


def cmd_train(args) -> int:
    cfg, paths = split_train(gather(args, "train"), TRAIN_FILES, "train")
    source = load_clouds(paths["source"])
    target = load_clouds(paths["target"])
    out = out_dir(args, "runs/train")
    resolved = {**dataclasses.asdict(cfg), **paths}
    save_resolved(out, "train", resolved)
    res = train(source, target, cfg, N_CLASSES)
    meta = json.dumps(_jsonable(resolved), sort_keys=True)
    nn.save_checkpoint(out / "checkpoint.npz", res.model.params, res.optimizer, res.epochs_done, meta)
    with open(out / "metrics.jsonl", "w") as fh:
        for row in res.metrics:
            fh.write(json.dumps(_jsonable(row), sort_keys=True) + "\n")
    header, rows = metrics_rows(res.metrics)
    write_csv(out / "metrics.csv", header, rows)
    diag = []
    for row in res.metrics:
        for t, st in enumerate(row["class_stats"]):
            diag.append([row["epoch"], t, st["count"], st["mean"], st["variance"], st["alpha"],
                         st["beta"], int(st["valid"]), row["pl_hist"][t]])
    write_csv(out / "class_diagnostics.csv",
              ["epoch", "class", "count", "mean", "variance", "alpha", "beta", "valid", "pl_count"], diag)
    print(out / "checkpoint.npz")
    return 0


def load_model(path) -> tuple[Model, TrainConfig]:
    if not Path(path).is_file():
        raise CliError(f"checkpoint not found: {path}")
    params, _, _, meta = nn.load_checkpoint(path)
    stored = json.loads(meta) if meta else {}
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in stored.items() if k in known}).validate()
    n_classes = params["clf.b"].values.shape[0]
    model = Model(n_classes, cfg.hidden, cfg.feat_dim, cfg.combine, cfg.seed, params=params)
    return model, cfg


def cmd_eval(args) -> int:
    opts = resolve(gather(args, "eval"), {**EVAL_DEFAULTS, "seed": 0}, "eval")
    model, cfg = load_model(opts["checkpoint"])
    path = eval_path(cfg.method) if opts["path"] == "auto" else opts["path"]
    if path not in ("plain", "source", "target"):
        raise InvalidConfigError(f"path must be auto, plain, source or target, got {opts['path']!r}")
    data = prepare_dataset(load_clouds(opts["dataset"]), cfg)
    if any(c.label is None for c in data):
        raise CliError("evaluation needs a labeled dataset")
    out = out_dir(args, "runs/eval")
    save_resolved(out, "eval", opts)
    report = evaluate(data, model, path)
    write_json(out / "report.json", {"path": path, **report.to_dict()})
    print(json.dumps({"accuracy": report.accuracy, "balanced_accuracy": report.balanced_accuracy}))
    return 0


def cmd_ablate_fps(args) -> int:
    cfg, paths = split_train(gather(args, "ablate-fps"), TRAIN_FILES, "ablate-fps")
    source, target = load_clouds(paths["source"]), load_clouds(paths["target"])
    out = out_dir(args, "runs/ablate-fps")
    save_resolved(out, "ablate-fps", {**dataclasses.asdict(cfg), **paths})
    rows = run_fps_ablation(source, target, cfg, N_CLASSES)
    header = ["point_ratio", "points", "target_accuracy", "target_balanced_accuracy"]
    write_csv(out / "fps_ablation.csv", header, [[r[k] for k in header] for r in rows])
    for r in rows:
        print(f"{r['point_ratio']:.2f}\t{r['points']}\t{r['target_accuracy']:.4f}")
    return 0


def cmd_analyze_pl(args) -> int:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    values = gather(args, "analyze-pl")
    opts = resolve({k: v for k, v in values.items() if k not in known}, PL_DEFAULTS, "analyze-pl")
    model, cfg = load_model(opts["checkpoint"])
    changes = {}
    for key, raw in values.items():
        if key in ARCH_KEYS:
            raise InvalidConfigError(f"[analyze-pl] {key} is fixed by the checkpoint")
        if key in known:
            changes[key] = coerce(raw, getattr(cfg, key), key)
    cfg = cfg.replace(**changes)
    source = prepare_dataset(load_clouds(opts["source"]), cfg)
    target = prepare_dataset(load_clouds(opts["target"]), cfg)
    out = out_dir(args, "runs/analyze-pl")
    save_resolved(out, "analyze-pl", {**dataclasses.asdict(cfg), **opts})
    res = run_pl_analysis(model, source, target, cfg, opts["mode"], N_CLASSES)
    classes = list(range(N_CLASSES))
    write_csv(out / "source_labels.csv", ["class", "count"], zip(classes, res["source_labels"].tolist()))
    write_csv(out / "target_labels.csv", ["class", "count"], zip(classes, res["target_labels"].tolist()))
    write_csv(out / "target_pseudo_labels.csv", ["class", "count"],
              zip(classes + ["none"], res["target_pseudo_labels"].tolist()))
    write_csv(out / "source_confidence.csv", ["class", "mean_confidence", "alpha", "beta"],
              [[t, float(res["source_class_confidence"][t]), b.alpha, b.beta]
               for t, b in enumerate(res["betas"])])
    print(" ".join(str(x) for x in res["target_pseudo_labels"].tolist()))
    return 0


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate source/target dataset files and a manifest"),
    "train": (cmd_train, "train one method and write checkpoint + metrics"),
    "eval": (cmd_eval, "evaluate a checkpoint on a labeled dataset"),
    "ablate-fps": (cmd_ablate_fps, "source-only accuracy on FPS-thinned source clouds"),
    "analyze-pl": (cmd_analyze_pl, "label / pseudo-label / confidence histograms"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcadapt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI-style file; the [%s] section is used" % name)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, repeatable")
        p.add_argument("--out", help="output directory")
    return ap


def main(argv=None) -> int:
    level = os.environ.get("PCADAPT_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command][0](args)
    except (InvalidConfigError, CliError, ValueError, OSError) as exc:
        print(f"pcadapt {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
