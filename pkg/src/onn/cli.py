"""``onn`` command line: the four-stage experiment plus pyramid and gradient tools.

Stages communicate through files in ``--out``::

    gen-data        -> data/ (class folders + manifest.csv)
    train-baseline  -> baseline.onnw, baseline_history.csv
    train-focal     -> focal.onnw, focal_history.csv
    cache-features  -> cache_train.onnc, cache_val.onnc, cache_test.onnc
    train-unifier   -> unifier.onnw, unifier_history.csv
    eval            -> report.csv, report.txt

Every command also writes ``config.<command>.json`` with the resolved
configuration. Exit status: 0 success, 1 contract error, 2 gradcheck failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import metrics, unifier
from .dataset import (
    DatasetSplit,
    baseline_view,
    generate_shapes_dataset,
    load_folder_dataset,
    write_folder_dataset,
)
from .engine import gradcheck, load_checkpoint, save_checkpoint
from .imaging import load_image, resize, save_image, to_channels
from .pyramid import DEFAULT_FOCAL_POINTS, FocalPoint, PyramidConfig, build_pyramid, calibrate_zoom

log = logging.getLogger("onn")

DEFAULTS = {
    "dataset": "synthetic",
    "K": 4,
    "per_class": 500,
    "cap": 1000,
    "channels": None,  # 1 for the synthetic set, 3 for folder datasets
    "C": 152,
    "c": 32,
    "L": 4,
    "z": None,
    "F": [[p.x, p.y] for p in DEFAULT_FOCAL_POINTS],
    "blocks": [[16, 2], [32, 2], [64, 2]],
    "h": 128,
    "dropout": 0.5,
    "u": 128,
    "unifier_dropout": 0.75,
    "lr": 0.001,
    "batch_size": 1,
    "max_epochs": 10,
    "focal_epochs": 6,
    "unifier_epochs": 200,
    "patience": 3,
    # the unifier is cheap per epoch but noisy under its 0.75 dropout
    "unifier_batch_size": 4,
    "unifier_patience": 10,
    "k": None,  # top-k; default min(5, max(1, K // 2))
    "eval_batch": 8,
    "seed": 0,
}

ARTIFACTS = {
    "data": ("data/manifest.csv", "gen-data"),
    "baseline": ("baseline.onnw", "train-baseline"),
    "focal": ("focal.onnw", "train-focal"),
    "cache_train": ("cache_train.onnc", "cache-features"),
    "cache_val": ("cache_val.onnc", "cache-features"),
    "cache_test": ("cache_test.onnc", "cache-features"),
    "unifier": ("unifier.onnw", "train-unifier"),
}


class ContractError(ValueError):
    pass


class MissingArtifact(ContractError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing {path}; produce it with `onn {producer}`")
        self.path, self.producer = path, producer


# --- configuration ---------------------------------------------------------------


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ContractError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ContractError(f"config {args.config} must be a JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ContractError(f"unknown config keys {unknown}; known: {sorted(DEFAULTS)}")
        cfg.update(user)
    flags = {
        "seed": args.seed, "L": args.levels, "z": args.zoom, "c": args.crop, "C": args.base,
        "dataset": args.dataset, "K": args.classes, "per_class": args.per_class, "lr": args.lr,
        "batch_size": args.batch_size, "max_epochs": args.epochs, "focal_epochs": args.focal_epochs,
        "unifier_epochs": args.unifier_epochs, "patience": args.patience,
        "unifier_batch_size": args.unifier_batch_size, "unifier_patience": args.unifier_patience,
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if cfg["z"] is None:
        cfg["z"] = calibrate_zoom(cfg["C"], cfg["c"], cfg["L"])
    if cfg["channels"] is None:
        cfg["channels"] = 1 if cfg["dataset"] == "synthetic" else 3
    if cfg["k"] is None:
        cfg["k"] = min(5, max(1, cfg["K"] // 2))
    pyramid_config(cfg)  # validates C, c, L, z, F
    return cfg


def pyramid_config(cfg) -> PyramidConfig:
    try:
        focal = tuple(FocalPoint(float(x), float(y)) for x, y in cfg["F"])
    except (TypeError, ValueError) as exc:
        raise ContractError(f"F must be a list of [x, y] pairs in [0, 1]: {exc}") from exc
    return PyramidConfig(cfg["C"], cfg["c"], cfg["L"], cfg["z"], focal)


def core_spec(cfg) -> clf.CoreCnnSpec:
    return clf.CoreCnnSpec(cfg["c"], cfg["channels"], tuple(map(tuple, cfg["blocks"])), cfg["h"],
                           cfg["K"], cfg["dropout"])


def train_config(cfg, epochs_key, seed_offset, prefix="") -> clf.TrainConfig:
    return clf.TrainConfig(cfg["lr"], cfg[prefix + "batch_size"], cfg[epochs_key], cfg[prefix + "patience"],
                           cfg["seed"] + seed_offset, cfg["k"], cfg["eval_batch"])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- artifacts -----------------------------------------------------------------------


def artifact(out: Path, key: str, must_exist=True) -> Path:
    rel, producer = ARTIFACTS[key]
    path = out / rel
    if must_exist and not path.exists():
        raise MissingArtifact(path, producer)
    return path


def data_root(cfg, out: Path) -> Path:
    return out / "data" if cfg["dataset"] == "synthetic" else Path(cfg["dataset"])


def load_split(cfg, out: Path) -> DatasetSplit:
    root = data_root(cfg, out)
    if cfg["dataset"] == "synthetic":
        artifact(out, "data")
    elif not root.is_dir():
        raise ContractError(f"dataset folder {root} does not exist")
    split = load_folder_dataset(root, cfg["C"], cfg["cap"], cfg["seed"], cfg["channels"])
    if split.num_classes != cfg["K"]:
        raise ContractError(f"dataset {root} has {split.num_classes} classes but K={cfg['K']}")
    return split


def load_core(path: Path, cfg) -> clf.CoreCnn:
    model = clf.build_core_cnn(core_spec(cfg), cfg["seed"])
    model.load_state_dict(load_checkpoint(path))
    return model


def unifier_spec(cfg) -> unifier.UnifierSpec:
    return unifier.UnifierSpec(cfg["h"] * cfg["L"], cfg["K"], cfg["u"], cfg["unifier_dropout"])


def baseline_arrays(samples, pcfg, channels) -> clf.LabeledArrays:
    x = np.stack([to_channels(baseline_view(s.load(), pcfg), channels).to_chw() for s in samples])
    return clf.LabeledArrays(x, np.array([s.label for s in samples], dtype=np.int64))


# --- commands ------------------------------------------------------------------------


def cmd_gen_data(cfg, out, args):
    split = generate_shapes_dataset(cfg["K"], cfg["per_class"], cfg["C"], cfg["seed"])
    manifest = write_folder_dataset(split, data_root(cfg, out))
    print(f"wrote {len(split.all_samples())} images and {manifest}")


def cmd_train_baseline(cfg, out, args):
    split = load_split(cfg, out)
    pcfg = pyramid_config(cfg)
    train = baseline_arrays(split.train, pcfg, cfg["channels"])
    val = baseline_arrays(split.val, pcfg, cfg["channels"])
    model = clf.build_core_cnn(core_spec(cfg), cfg["seed"])
    result = clf.train_baseline(model, train, val, train_config(cfg, "max_epochs", 0))
    save_checkpoint(model.parameters(), artifact(out, "baseline", False))
    clf.write_history_csv(result.history, out / "baseline_history.csv")
    b = result.best
    print(f"baseline: best epoch {result.best_epoch}, val loss {b.val_loss:.4f}, val acc {b.val_acc:.4f}")


def cmd_train_focal(cfg, out, args):
    start = artifact(out, "baseline")
    split = load_split(cfg, out)
    pcfg = pyramid_config(cfg)
    model = load_core(start, cfg)
    train = clf.build_focal_views(split.train, pcfg)
    val = clf.build_focal_views(split.val, pcfg)
    result = clf.train_focal(model, train, val, train_config(cfg, "focal_epochs", 1))
    save_checkpoint(model.parameters(), artifact(out, "focal", False))
    clf.write_history_csv(result.history, out / "focal_history.csv")
    b = result.best
    print(
        f"focal: best epoch {result.best_epoch}, all-view val acc {b.val_acc:.4f}, "
        f"whole-image val acc {b.extra['val_acc_c']:.4f}"
    )


def cmd_cache_features(cfg, out, args):
    core = load_core(artifact(out, "focal"), cfg)
    split = load_split(cfg, out)
    pcfg = pyramid_config(cfg)
    for part in ("train", "val", "test"):
        cache = unifier.build_feature_cache(core, getattr(split, part), pcfg, cfg["K"], cfg["eval_batch"])
        cache.save(artifact(out, f"cache_{part}", False))
        print(f"cache_{part}: {len(cache)} records of width {cache.width}")


def _load_cache(out, key, core_sum) -> unifier.FeatureCache:
    path = artifact(out, key)
    cache = unifier.load_feature_cache(path)
    if cache.checksum != core_sum:
        raise ContractError(f"{path} was built from a different core model; rerun `onn cache-features`")
    return cache


def cmd_train_unifier(cfg, out, args):
    core_sum = unifier.model_checksum(load_core(artifact(out, "focal"), cfg))
    train = _load_cache(out, "cache_train", core_sum)
    val = _load_cache(out, "cache_val", core_sum)
    spec = unifier_spec(cfg)
    result = unifier.train_unifier(train, spec, train_config(cfg, "unifier_epochs", 2, "unifier_"), val)
    save_checkpoint(result.model.parameters(), artifact(out, "unifier", False))
    clf.write_history_csv(result.history, out / "unifier_history.csv")
    print(f"unifier: best epoch {result.best_epoch}, val acc {result.best.val_acc:.4f}")


def cmd_eval(cfg, out, args):
    paths = {k: artifact(out, k) for k in ("baseline", "focal", "unifier", "cache_test")}
    baseline = load_core(paths["baseline"], cfg)
    focal = load_core(paths["focal"], cfg)
    uni = unifier.UnifierNet(unifier_spec(cfg))
    uni.load_state_dict(load_checkpoint(paths["unifier"]))
    cache = _load_cache(out, "cache_test", unifier.model_checksum(focal))
    split = load_split(cfg, out)
    test = baseline_arrays(split.test, pyramid_config(cfg), cfg["channels"])
    k = cfg["k"]
    results = {
        "baseline": metrics.StageResult("baseline", *clf.evaluate(baseline, test.x, test.y, k, cfg["eval_batch"]), k),
        "focal_training": metrics.StageResult(
            "focal_training", *clf.evaluate(focal, test.x, test.y, k, cfg["eval_batch"]), k
        ),
        "unification": metrics.StageResult("unification", *unifier.evaluate_unified(uni, cache, k), k),
        "merging": metrics.StageResult("merging", *unifier.evaluate_merged(uni, cache, k), k),
    }
    probs = unifier.unified_probabilities(uni, cache.features)
    labels = cache.labels.astype(np.int64)
    per_focal = [metrics.accuracy(probs[cache.focal == f], labels[cache.focal == f]) for f in range(cache.num_focal)]
    summary = {key: cfg[key] for key in ("C", "c", "L", "z", "K", "dataset", "seed")}
    summary["F"] = len(cfg["F"])
    report = metrics.build_report(results, summary, {"unified_accuracy_per_focal": per_focal,
                                                     "test_images": len(split.test)})
    (out / "report.csv").write_text(metrics.render_csv(report))
    text = metrics.render_text(report)
    (out / "report.txt").write_text(text + "\n")
    print(text)


def cmd_pyramid_dump(cfg, out, args):
    pcfg = pyramid_config(cfg)
    if args.image:
        img = to_channels(load_image(args.image), cfg["channels"])
        if args.fit:
            img = resize(img, pcfg.base_size, pcfg.base_size)
    else:
        img = generate_shapes_dataset(2, 1, pcfg.base_size, cfg["seed"]).all_samples()[0].load()
    indices = range(len(pcfg.focal_set)) if args.all_focal else [args.focal]
    dest = out / "pyramid"
    dest.mkdir(parents=True, exist_ok=True)
    for f in indices:
        if not 0 <= f < len(pcfg.focal_set):
            raise ContractError(f"focal index {f} outside [0, {len(pcfg.focal_set)})")
        for lv in build_pyramid(img, pcfg.focal_set[f], pcfg).views:
            path = dest / f"view_f{f}_l{lv.level}.{args.format}"
            save_image(lv.view, path)
            print(f"{path}  level {lv.level}  resolution {lv.resolution}  origin {lv.origin}")


def cmd_gradcheck(cfg, out, args):
    tol = args.tolerance
    seeds = range(cfg["seed"], cfg["seed"] + args.seeds)
    suite = gradcheck.layer_suite(seeds, tolerance=tol)
    worst = {kind: max(r.max_error for r in reps) for kind, reps in suite.items()}
    composed = clf.core_cnn_gradcheck(core_spec(cfg), cfg["seed"], tolerance=args.composed_tolerance)
    ok = all(r.passed for reps in suite.values() for r in reps) and composed.passed
    lines = [f"{kind:24s} max rel err {err:.3e}  {'PASS' if err <= tol else 'FAIL'}" for kind, err in worst.items()]
    lines.append(
        f"{'core_cnn (composed)':24s} max rel err {composed.max_error:.3e}  "
        f"{'PASS' if composed.passed else 'FAIL'}"
    )
    text = "\n".join(lines)
    (out / "gradcheck.txt").write_text(text + "\n")
    print(text)
    return 0 if ok else 2


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic shapes dataset"),
    "train-baseline": (cmd_train_baseline, "train the core CNN on whole-image c x c views"),
    "train-focal": (cmd_train_focal, "continue training on focal-point pyramid views"),
    "cache-features": (cmd_cache_features, "cache concatenated hidden features per image and focal point"),
    "train-unifier": (cmd_train_unifier, "train the unification network on the feature cache"),
    "eval": (cmd_eval, "evaluate all four stages on the test split and write report.csv"),
    "pyramid-dump": (cmd_pyramid_dump, "write the views of a focal pyramid as image files"),
    "gradcheck": (cmd_gradcheck, "finite-difference check every layer type and the composed CNN"),
}


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", metavar="PATH", help="JSON config with C, c, L, z, F, lr, ... keys")
    g.add_argument("--seed", type=int, metavar="N")
    g.add_argument("--out", default="runs/default", metavar="DIR", help="artifact directory (default %(default)s)")
    g.add_argument("--levels", type=int, metavar="L", help="zoom levels")
    g.add_argument("--zoom", type=float, metavar="Z", help="zoom coefficient (default: calibrated)")
    g.add_argument("--crop", type=int, metavar="c", help="view size c")
    g.add_argument("--base", type=int, metavar="C", help="base image size C")
    g.add_argument("--dataset", metavar="PATH|synthetic", help="folder dataset or 'synthetic' (<out>/data)")
    g.add_argument("--classes", type=int, metavar="K")
    g.add_argument("--per-class", type=int, metavar="N", help="synthetic images per class")
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int, help="baseline max epochs")
    g.add_argument("--focal-epochs", type=int)
    g.add_argument("--unifier-epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--unifier-batch-size", type=int)
    g.add_argument("--unifier-patience", type=int)
    g.add_argument("-v", "--verbose", action="store_true", help="log every epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onn", description="Optical neural network experiment pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        _common(p)
        if name == "pyramid-dump":
            p.add_argument("--image", metavar="PATH", help="base image (default: a synthetic sample)")
            p.add_argument("--fit", action="store_true", help="stretch the image to C x C first")
            p.add_argument("--focal", type=int, default=0, metavar="I", help="focal point index (default 0)")
            p.add_argument("--all-focal", action="store_true", help="dump every focal point")
            p.add_argument("--format", choices=("ppm", "png", "pgm"), default="ppm")
        if name == "gradcheck":
            p.add_argument("--tolerance", type=float, default=1e-3, help="per-layer rel-err bound")
            p.add_argument("--composed-tolerance", type=float, default=5e-3, help="bound for the full CNN")
            p.add_argument("--seeds", type=int, default=10, help="random cases per layer type")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / f"config.{args.command}.json", cfg)
        status = COMMANDS[args.command][0](cfg, out, args)
    except (ValueError, OSError) as exc:  # every contract error in the package is a ValueError
        print(f"onn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
