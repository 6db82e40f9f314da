"""Command-line entry points.

Every command reads optional settings from a YAML file given with
``--config``.  The file holds one mapping per command name, e.g.::

    train:
      steps: 2000
      batch_size: 4
    evaluate:
      folds: 10

Values given on the command line override the file, which overrides the
built-in defaults.  The effective settings are printed at startup and
written, with a hash and the code version, to a run-metadata JSON file
next to the command's output.  A run-metadata file is itself accepted by
``--config``, so any run can be repeated from it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError, DisqueError

log = logging.getLogger("disque")

COMMANDS = ("make-manifest", "distort", "train", "extract", "evaluate", "egtm", "ablate")

DEFAULTS = {
    "make-manifest": {"dir": None, "out": "manifest.jsonl", "report": None, "screening": True,
                      "theta_over": 0.30, "theta_under": 0.30, "sat_threshold": 0.02,
                      "domain": "sdr"},
    "distort": {"input": None, "output": None, "spec": None, "random": None, "domain": "sdr",
                "kinds": None},
    "train": {"manifest": None, "out": "run", "preset": "desk", "steps": None,
              "batch_size": None, "lr0": None, "seed": 0, "kinds": None, "resume": None,
              "checkpoint_every": None},
    "extract": {"model": None, "records": None, "out": "features.npz", "cache": None,
                "root": None},
    "evaluate": {"features": None, "out": "report.json", "folds": 10, "split": 0.8, "seed": 0,
                 "methods": ["PLS_SVR", "LASSO", "RIDGE"], "content_disjoint": True},
    "egtm": {"model": None, "input": None, "example_src": None, "example_tgt": None,
             "out": "egtm.png", "mode": "mixing"},
    "ablate": {"features": None, "out": "ablation.json", "folds": 10, "split": 0.8, "seed": 0,
               "methods": ["PLS_SVR", "LASSO", "RIDGE"], "content_disjoint": True},
}

REQUIRED = {
    "make-manifest": ("dir",),
    "distort": ("input", "output"),
    "train": ("manifest",),
    "extract": ("model", "records"),
    "evaluate": ("features",),
    "egtm": ("model", "input", "example_src", "example_tgt"),
    "ablate": ("features",),
}


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# -- parser ---------------------------------------------------------------------------------

def _bool_pair(p, name, help_):
    g = p.add_mutually_exclusive_group()
    g.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_true", default=None,
                   help=help_)
    g.add_argument(f"--no-{name}", dest=name.replace("-", "_"), action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disque", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="YAML settings file (or a run-metadata file)")
    parser.add_argument("--deterministic", action="store_true",
                        help="single worker, deterministic kernels everywhere")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-manifest", help="screen a directory of images into a manifest")
    p.add_argument("dir", nargs="?")
    p.add_argument("--out")
    p.add_argument("--report", help="rejection report (default: <out>.rejected.json)")
    _bool_pair(p, "screening", "apply grayscale/exposure screening")
    p.add_argument("--theta-over", type=float)
    p.add_argument("--theta-under", type=float)
    p.add_argument("--sat-threshold", type=float)
    p.add_argument("--domain", choices=["sdr", "hdr"])

    p = sub.add_parser("distort", help="apply a transform spec to one image")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--spec", help='e.g. "GaussianBlur:3:0" or "HABLE:0.5:2"')
    p.add_argument("--random", type=int, metavar="SEED", help="sample a spec with this seed")
    p.add_argument("--domain", choices=["sdr", "hdr"])
    p.add_argument("--kinds", nargs="+")

    p = sub.add_parser("train", help="train the dual-head network")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--preset", choices=["paper", "desk"])
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--kinds", nargs="+")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("extract", help="compute FR quality features for a records file")
    p.add_argument("--model")
    p.add_argument("--records")
    p.add_argument("--out")
    p.add_argument("--cache", help="per-image feature cache (.npz)")
    p.add_argument("--root", help="directory that relative record paths refer to")

    for name, help_ in (("evaluate", "cross-validate quality regressors"),
                        ("ablate", "compare scale x pool feature variants")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--features")
        p.add_argument("--out")
        p.add_argument("--folds", type=int)
        p.add_argument("--split", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--methods", nargs="+", choices=["PLS_SVR", "LASSO", "RIDGE"])
        _bool_pair(p, "content-disjoint", "split by content id when available")

    p = sub.add_parser("egtm", help="example-guided processing / tone mapping")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--example-src")
    p.add_argument("--example-tgt")
    p.add_argument("--out")
    p.add_argument("--mode", choices=["mixing", "replacement"])
    return parser


# -- settings -------------------------------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    if "config" in data and "command" in data:
        data = data["config"]
    return data


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the config file section and explicit command-line values."""
    cfg = _load_config(args.config)
    settings = dict(DEFAULTS[command])
    section = cfg.get(command, {}) or {}
    unknown = set(section) - set(settings)
    if unknown:
        raise ConfigError(f"unknown {command} settings in config: {sorted(unknown)}")
    settings.update(section)
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    missing = [k for k in REQUIRED[command] if settings.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required setting(s) {missing}")
    return settings


def settings_hash(command: str, settings: dict) -> str:
    blob = json.dumps({"command": command, "settings": settings}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_metadata(path: Path, command: str, settings: dict, deterministic: bool) -> Path:
    meta = {
        "command": command,
        "config": {command: settings, "deterministic": deterministic},
        "config_hash": settings_hash(command, settings),
        "seed": settings.get("seed", settings.get("random")),
        "deterministic": deterministic,
        "code_version": code_version(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _meta_path(out: str | Path) -> Path:
    out = Path(out)
    if out.suffix:
        return out.with_name(out.name + ".run.json")
    return out / "run_metadata.json"


def set_deterministic(on: bool) -> None:
    """Deterministic kernels on one thread, as ``--deterministic`` requests."""
    if on:
        import torch

        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


# -- commands -------------------------------------------------------------------------------

def cmd_make_manifest(s: dict, deterministic: bool) -> Path:
    from .pixelcore import Colorspace, read_image, screen_image
    from .trainer import ManifestEntry, write_manifest

    root = Path(s["dir"])
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"))
    if not files:
        raise DataError(f"no image files in {root}")
    out = Path(s["out"])
    entries, rejected = [], {}
    space = Colorspace.PQ_BT2100 if s["domain"] == "hdr" else Colorspace.SRGB
    for p in files:
        try:
            img = read_image(p, space)
        except DataError as e:
            rejected[p.name] = {"error": str(e)}
            continue
        if s["screening"]:
            rep = screen_image(img, s["theta_over"], s["theta_under"], s["sat_threshold"])
            if not rep.accepted:
                rejected[p.name] = {
                    "is_grayscale": rep.is_grayscale,
                    "overexposed_fraction": rep.overexposed_fraction,
                    "underexposed_fraction": rep.underexposed_fraction,
                    "thresholds": rep.thresholds,
                }
                continue
        rel = Path(p).resolve().relative_to(out.parent.resolve()) \
            if Path(p).resolve().is_relative_to(out.parent.resolve()) else Path(p).resolve()
        entries.append(ManifestEntry(str(rel), space))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(entries, out)
    report = Path(s["report"]) if s["report"] else out.with_name(out.name + ".rejected.json")
    report.write_text(json.dumps(rejected, indent=2, sort_keys=True) + "\n")
    print(f"accepted {len(entries)}, rejected {len(rejected)} -> {out}")
    return out


def cmd_distort(s: dict, deterministic: bool) -> Path:
    from .pixelcore import Colorspace, read_image, write_png
    from .tonemap import apply_spec, parse_spec, sample_spec

    if (s["spec"] is None) == (s["random"] is None):
        raise ConfigError("give exactly one of --spec or --random")
    if s["spec"] is not None:
        spec = parse_spec(s["spec"])
    else:
        spec = sample_spec(s["domain"], np.random.default_rng(s["random"]), s["kinds"])
    img = read_image(s["input"])
    out = apply_spec(img, spec)
    write_png(out, s["output"])
    print(spec.to_string())
    return Path(s["output"])


def cmd_train(s: dict, deterministic: bool) -> Path:
    from .trainer import TrainConfig, load_manifest, train

    overrides = {k: s[k] for k in ("steps", "batch_size", "lr0", "seed", "kinds",
                                   "checkpoint_every") if s[k] is not None}
    if deterministic:
        overrides.update(deterministic=True, workers=1)
    cfg = TrainConfig.desk(**overrides) if s["preset"] == "desk" else TrainConfig(**overrides)
    manifest = load_manifest(s["manifest"])
    result = train(cfg, manifest, s["out"], resume_from=s["resume"])
    last = result.checkpoints[-1] if result.checkpoints else None
    print(f"trained to step {cfg.steps}; log {result.log_path}; checkpoint {last}")
    return Path(s["out"])


def cmd_extract(s: dict, deterministic: bool) -> Path:
    from .quality import FeatureCache, feature_tags, read_records, record_features
    from .trainer import load_model, model_checksum

    model = load_model(s["model"]).eval()
    checksum = model_checksum(model)
    records = read_records(s["records"])
    if not records:
        raise DataError("records file is empty")
    root = Path(s["root"]) if s["root"] else Path(s["records"]).parent
    cache = FeatureCache(s["cache"]) if s["cache"] else None
    X = record_features(records, model, root, cache, checksum)
    if cache:
        cache.save()
    scale, pool = feature_tags(model.config.block_channels)
    save_features(s["out"], X, [r.mos for r in records], [r.content_id for r in records],
                  scale, pool, checksum)
    print(f"{X.shape[0]} records x {X.shape[1]} features -> {s['out']}")
    return Path(s["out"])


def save_features(path, X, mos, content_ids, scale_tags, pool_tags, checksum="") -> None:
    ids = ["" if c is None else str(c) for c in content_ids]
    np.savez(path, X=np.asarray(X, dtype=np.float64), mos=np.asarray(mos, dtype=np.float64),
             content_id=np.array(ids), scale_tags=np.asarray(scale_tags, dtype=np.float64),
             pool_tags=np.asarray(pool_tags), checksum=np.array(checksum))


def load_features(path):
    try:
        with np.load(path) as f:
            data = {k: f[k] for k in f.files}
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read features {path}: {e}") from None
    for key in ("X", "mos"):
        if key not in data:
            raise DataError(f"features file {path} lacks '{key}'")
    ids = data.get("content_id")
    if ids is not None and (len(ids) == 0 or any(str(i) == "" for i in ids)):
        ids = None
    data["content_id"] = ids
    return data


def cmd_evaluate(s: dict, deterministic: bool) -> Path:
    from .quality import cross_validate

    data = load_features(s["features"])
    ids = data["content_id"] if s["content_disjoint"] else None
    report = cross_validate(data["X"], data["mos"], ids, folds=s["folds"], split=s["split"],
                            seed=s["seed"], methods=tuple(s["methods"]))
    out = Path(s["out"])
    out.write_text(report.to_json() + "\n")
    out.with_suffix(".txt").write_text(report.table() + "\n")
    print(report.table())
    return out


def cmd_ablate(s: dict, deterministic: bool) -> Path:
    from .quality import ablate, ablation_table

    data = load_features(s["features"])
    if "scale_tags" not in data or "pool_tags" not in data:
        raise DataError("features file lacks scale/pool tags")
    ids = data["content_id"] if s["content_disjoint"] else None
    rows = ablate(data["X"], data["mos"], data["scale_tags"], data["pool_tags"], ids,
                  folds=s["folds"], split=s["split"], seed=s["seed"],
                  methods=tuple(s["methods"]))
    table = ablation_table(rows)
    out = Path(s["out"])
    out.write_text(json.dumps({name: rep.median for name, rep in rows}, indent=2) + "\n")
    out.with_suffix(".txt").write_text(table + "\n")
    print(table)
    return out


def cmd_egtm(s: dict, deterministic: bool) -> Path:
    from .egip import EgipRequest, Mode, egip_apply, egtm
    from .pixelcore import Colorspace, read_image, write_png
    from .trainer import load_model

    model = load_model(s["model"]).eval()
    x, src, tgt = (read_image(s[k]) for k in ("input", "example_src", "example_tgt"))
    mode = Mode(s["mode"])
    if mode is Mode.MIXING and x.colorspace is Colorspace.PQ_BT2100 \
            and src.colorspace is Colorspace.PQ_BT2100:
        out = egtm(x, src, tgt, model)
    else:
        out = egip_apply(EgipRequest(src, tgt, x, mode), model)
    write_png(out, s["out"])
    print(f"wrote {s['out']}")
    return Path(s["out"])


HANDLERS = {
    "make-manifest": cmd_make_manifest,
    "distort": cmd_distort,
    "train": cmd_train,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "egtm": cmd_egtm,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        settings = resolve_settings(args.command, args)
        cfg = _load_config(args.config)
        deterministic = bool(args.deterministic or cfg.get("deterministic", False))
        print(f"{args.command} settings: {json.dumps(settings, sort_keys=True, default=str)}",
              file=sys.stderr)
        set_deterministic(deterministic)
        out = HANDLERS[args.command](settings, deterministic)
        write_metadata(_meta_path(out), args.command, settings, deterministic)
    except DisqueError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: DataError: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
