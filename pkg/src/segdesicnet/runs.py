"""End-to-end operations behind the CLI: generate, train, evaluate, ablate."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from . import metrics
from . import model as mdl
from . import synthetic as syn
from . import training as tr
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointFormatError, ConfigError, DataError
from .geo_encoding import GridConfig

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
MANIFEST_NAME = "model.manifest.json"
LOG_NAME = "train_log.csv"
RESOLVED_NAME = "resolved_config.json"
EVAL_SPLITS = {"target": "target-test", "source-val": "source-val"}


def write_resolved(cfg: config_mod.RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / RESOLVED_NAME).write_text(cfg.dumps())


def generate(cfg: config_mod.RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    write_resolved(cfg, out)
    samples = syn.generate_world(cfg.world)
    return syn.write_corpus(samples, out, cfg.world)


def _load_splits(data_dir: Path, splits: tuple[str, ...]) -> dict[str, list[syn.GeoSample]]:
    if not (data_dir / "manifest.json").is_file():
        raise FileNotFoundError(f"{data_dir}: no corpus manifest.json")
    by = {s: [] for s in splits}
    for smp in syn.iter_corpus(data_dir, splits):
        by[smp.split].append(smp)
    return by


def _model_manifest(cfg: config_mod.RunConfig, result: tr.FitResult) -> dict:
    d = cfg.to_dict()
    return {
        "format": "segdesic-model/1",
        "checkpoint": CHECKPOINT_NAME,
        "model": d["model"],
        "grid": d["grid"],
        "geodesy": d["geodesy"],
        "crop_size": cfg.train.crop_size,
        "class_names": d["class_names"],
        "best_epoch": result.best_epoch,
        "best_val_miou": result.best_val,
        "epochs_run": len(result.log),
    }


def train(cfg: config_mod.RunConfig, data_dir: str | Path, out_dir: str | Path) -> tr.FitResult:
    data, out = Path(data_dir), Path(out_dir)
    by = _load_splits(data, ("source-train", "source-val", "target-train"))
    for split, items in by.items():
        if not items:
            raise DataError(f"corpus at {data} has an empty {split!r} split")
    write_resolved(cfg, out)
    settings = cfg.encoder_settings
    for items in by.values():
        tr.attach_encodings(items, settings)
    crop = cfg.train.crop_size
    source_val = by["source-val"]

    def validate(store, epoch):
        return metrics.evaluate_model(store, source_val, crop)["miou"]

    result = tr.fit(
        cfg.train,
        cfg.model,
        by["source-train"],
        tr.as_target_samples(by["target-train"]),
        validate,
        norm_kind=cfg.grid.norm_kind,
    )
    save_checkpoint(out / CHECKPOINT_NAME, result.best_state)
    (out / MANIFEST_NAME).write_text(json.dumps(_model_manifest(cfg, result), indent=2, sort_keys=True) + "\n")
    (out / LOG_NAME).write_text(tr.format_log_csv(result.log))
    return result


def load_model(checkpoint: str | Path):
    """Rebuild the parameter store from a checkpoint and its manifest sidecar."""
    ckpt = Path(checkpoint)
    manifest_path = ckpt.with_name(MANIFEST_NAME)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} does not exist")
    if not manifest_path.is_file():
        raise FileNotFoundError(f"model manifest {manifest_path} does not exist")
    manifest = json.loads(manifest_path.read_text())
    model_cfg = config_mod._build(mdl.ModelConfig, manifest["model"], "model")
    grid = config_mod._build(GridConfig, manifest["grid"], "grid")
    model_cfg.check_grid(grid.num_scales)
    store = mdl.build_model(model_cfg, 0)
    try:
        store.load_state(load_checkpoint(ckpt))
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"{ckpt} does not match its manifest: {exc}") from exc
    return store, manifest


def results_payload(res: dict) -> dict:
    return {
        "per_class_iou": {k: (None if math.isnan(v) else v) for k, v in res["per_class_iou"].items()},
        "miou": res["miou"],
        "num_pixels": res["num_pixels"],
    }


def results_csv(res: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou"])
    for k, v in res["per_class_iou"].items():
        w.writerow([k, "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(v)])
    w.writerow(["mIoU", repr(res["miou"])])
    return buf.getvalue()


def evaluate(checkpoint: str | Path, data_dir: str | Path, split: str, out_dir: str | Path | None = None) -> dict:
    if split not in EVAL_SPLITS:
        raise ConfigError(f"split must be one of {sorted(EVAL_SPLITS)}")
    store, manifest = load_model(checkpoint)
    corpus_split = EVAL_SPLITS[split]
    samples = _load_splits(Path(data_dir), (corpus_split,))[corpus_split]
    if not samples:
        raise DataError(f"split {corpus_split!r} is empty")
    res = metrics.evaluate_model(store, samples, manifest["crop_size"], manifest["class_names"])
    payload = results_payload(res)
    out = Path(out_dir) if out_dir is not None else Path(checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / f"results_{split}.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / f"results_{split}.csv").write_text(results_csv(payload))
    return payload


def ablation_grid(cfg, alphas=None, scales=None, lambda_mins=None, lambda_maxs=None):
    alphas = alphas or [cfg.train.alpha]
    scales = scales or [cfg.grid.num_scales]
    lambda_mins = lambda_mins or [cfg.grid.lambda_min]
    lambda_maxs = lambda_maxs or [cfg.grid.lambda_max]
    for lmin, lmax, s, a in itertools.product(lambda_mins, lambda_maxs, scales, alphas):
        grid = replace(cfg.grid, lambda_min=lmin, lambda_max=lmax, num_scales=s)
        yield replace(
            cfg,
            grid=grid,
            model=replace(cfg.model, encoding_dim=grid.dim),
            train=replace(cfg.train, alpha=a),
        )


def run_name(cfg: config_mod.RunConfig) -> str:
    g = cfg.grid
    return f"lmin{g.lambda_min:g}_lmax{g.lambda_max:g}_S{g.num_scales}_alpha{cfg.train.alpha:g}"


def ablate(cfg, data_dir, out_dir, **axes) -> list[dict]:
    """Train and evaluate on the target test split for every grid point."""
    out = Path(out_dir)
    write_resolved(cfg, out)
    rows = []
    for run_cfg in ablation_grid(cfg, **axes):
        run_dir = out / run_name(run_cfg)
        train(run_cfg, data_dir, run_dir)
        res = evaluate(run_dir / CHECKPOINT_NAME, data_dir, "target", run_dir)
        rows.append(
            {
                "lambda_min": run_cfg.grid.lambda_min,
                "lambda_max": run_cfg.grid.lambda_max,
                "S": run_cfg.grid.num_scales,
                "alpha": run_cfg.train.alpha,
                "miou": res["miou"],
                "run": run_dir.name,
            }
        )
    fields = ["lambda_min", "lambda_max", "S", "alpha", "miou", "run"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    (out / "ablation.csv").write_text(buf.getvalue())
    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
