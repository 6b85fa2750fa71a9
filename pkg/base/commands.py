"""
Commands - thin adapters from a RunConfig to the library, writing CSV outputs
(plus SVG figures and checkpoints where relevant) and the resolved config.
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import pandas as pd
import torch

from base.checkpoint import NetworkCheckpoint
from base.downstream import (
    CvPlan,
    EvalReport,
    Fold,
    TrainedModel,
    evaluate,
    finetune,
    holdout_fold,
    label_volume_ablation,
    make_cv_plan,
    run_cv,
    supervised_pretrain,
    train_scratch,
    unlabelled_volume_ablation,
)
from base.errors import ConfigError, LabelError, ShapeError
from base.explainer_factory import ExplainerFactory
from base.features import features_frame
from base.masking import build_masking_set, mask_faithfulness, masking_auc
from base.neural import extract_embeddings
from base.render import render_curves, render_relevance_panel
from base.rng import make_rng
from base.run_config import RunConfig, write_resolved_config
from base.self_supervised import pretrain
from base.signal_core import euclidean_norm
from base.store import WindowStore, ingest_csv
from base.synth import SynthSpec, generate
from base.wavelet import cwt_morlet

logger = logging.getLogger(__name__)

STORE_FILE = "store.harw"
PRETRAIN_FILE = "pretrain.harc"
MODEL_FILE = "model.harc"
TRANSFER_FILE = "transfer.harc"


# =====================================================
# HELPERS
# =====================================================
def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    write_resolved_config(cfg, out)
    return out


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def _require_path(value: Optional[str], key: str, hint: str) -> Path:
    if not value:
        raise ConfigError(f"Missing input: set {key}=<path> ({hint})")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"{key}={value}: file not found ({hint})")
    return path


def _load_store(cfg: RunConfig, key: str = "store", labelled: bool = False) -> WindowStore:
    store = WindowStore.load(_require_path(getattr(cfg, key), key, "a window store written by synth or ingest"))
    if labelled and not store.labelled:
        raise LabelError(f"{key}={getattr(cfg, key)} is unlabelled; this command needs class labels")
    return store


def _load_checkpoint(cfg: RunConfig) -> NetworkCheckpoint:
    return NetworkCheckpoint.load(_require_path(cfg.checkpoint, "checkpoint", "a checkpoint written by pretrain, finetune or scratch"))


def _check_window_length(store: WindowStore, input_T: int):
    if store.window_length != input_T:
        raise ShapeError(
            f"Network expects {input_T}-sample windows but the store holds {store.window_length}; "
            f"set net.input_T={store.window_length}"
        )


def _write_report(report: EvalReport, out: Path, name: str = "report") -> Dict[str, Path]:
    paths = {name: _write_csv(report.to_frame(), out / f"{name}.csv")}
    for fold, matrix in sorted(report.confusions.items()):
        label = "all" if fold < 0 else fold
        frame = pd.DataFrame(matrix, columns=[f"pred_{c}" for c in range(matrix.shape[1])])
        frame.insert(0, "true", range(matrix.shape[0]))
        paths[f"confusion_{label}"] = _write_csv(frame, out / f"confusion_fold{label}.csv")
    return paths


def _save_final_model(model: TrainedModel, plan: CvPlan, cfg: RunConfig, out: Path) -> Dict[str, Path]:
    ckpt = NetworkCheckpoint.from_model(model.net, seed=cfg.seed)
    ckpt.save(out / MODEL_FILE)
    classes = pd.DataFrame({"model_class": range(plan.n_classes), "store_class": plan.classes})
    return {
        "model": out / MODEL_FILE,
        "classes": _write_csv(classes, out / "classes.csv"),
        "curve": _write_csv(model.curve, out / "final_curve.csv"),
    }


# =====================================================
# DATA
# =====================================================
def cmd_synth(spec: SynthSpec, out_path: str | Path) -> WindowStore:
    """Generate the synthetic corpus and write it as a window store"""
    store = generate(spec)
    store.save(out_path)
    return store


def cmd_ingest(
    csv_paths: Sequence[str | Path],
    rate: float,
    out_path: str | Path,
    labelled: bool = False,
    manifest: Optional[str | Path] = None,
) -> WindowStore:
    """Resample, segment and store CSV recordings"""
    store, table = ingest_csv(csv_paths, rate, labelled=labelled, manifest=manifest)
    store.save(out_path)
    if labelled:
        _write_csv(
            pd.DataFrame(sorted(table.items(), key=lambda kv: kv[1]), columns=["label", "class_id"]),
            Path(out_path).parent / "label_table.csv",
        )
    return store


def run_synth(cfg: RunConfig) -> Dict[str, Path]:
    out = _out_dir(cfg)
    store = cmd_synth(cfg.synth, out / STORE_FILE)
    return {"store": out / STORE_FILE, "windows": _write_csv(store.meta, out / "windows.csv")}


def run_ingest(cfg: RunConfig) -> Dict[str, Path]:
    if not cfg.ingest.paths:
        raise ConfigError("Missing input: set ingest.paths=a.csv,b.csv")
    out = _out_dir(cfg)
    store = cmd_ingest(cfg.ingest.paths, cfg.ingest.rate, out / STORE_FILE, cfg.ingest.labelled, cfg.ingest.manifest)
    return {"store": out / STORE_FILE, "windows": _write_csv(store.meta, out / "windows.csv")}


# =====================================================
# TRAINING
# =====================================================
def cmd_pretrain(cfg: RunConfig) -> Dict[str, Path]:
    store = _load_store(cfg)
    _check_window_length(store, cfg.net.input_T)
    out = _out_dir(cfg)
    result = pretrain(
        store, cfg.net, cfg.sampler, cfg.transforms, cfg.pretrain.epochs, cfg.seed,
        tasks=cfg.pretrain.tasks, base_lr=cfg.pretrain.lr, patience=cfg.pretrain.patience,
        eval_batches=cfg.pretrain.eval_batches,
    )
    result.checkpoint.save(out / PRETRAIN_FILE)
    split = pd.DataFrame(
        [(s, "train") for s in result.train_subjects] + [(s, "test") for s in result.test_subjects],
        columns=["subject_id", "split"],
    )
    paths = {
        "checkpoint": out / PRETRAIN_FILE,
        "history": _write_csv(result.history, out / "history.csv"),
        "split": _write_csv(split, out / "ssl_split.csv"),
    }
    if len(result.history):
        paths["history_svg"] = render_curves(
            result.history, "epoch", "accuracy", ["task", "split"], out / "history.svg", "pretext accuracy"
        )
    return paths


def _cv_family(cfg: RunConfig, family: str, ckpt: Optional[NetworkCheckpoint] = None) -> Dict[str, Path]:
    store = _load_store(cfg, labelled=True)
    if family != "forest":
        _check_window_length(store, ckpt.config.input_T if ckpt is not None else cfg.net.input_T)
    out = _out_dir(cfg)
    plan = make_cv_plan(store, cfg.seed)
    report = run_cv(store, plan, family, cfg.train, cfg.net, ckpt, cfg.forest, cfg.dataset)
    paths = _write_report(report, out)
    summary = report.summary()
    logger.info(f"{family}: macro-F1 {summary['f1_mean']:.3f} ± {summary['f1_sd']:.3f}")

    if cfg.save_model and family != "forest":
        prepared = plan.prepare(store)
        fold = holdout_fold(prepared.subjects(), cfg.seed)
        if family == "scratch":
            model = train_scratch(prepared, fold, cfg.net, plan.n_classes, cfg.train)
        else:
            mode = "head-only" if family == "finetune-head" else "all-layers"
            model = finetune(ckpt, prepared, fold, plan.n_classes, mode, cfg.train)
        paths.update(_save_final_model(model, plan, cfg, out))
    return paths


def cmd_finetune(cfg: RunConfig) -> Dict[str, Path]:
    if cfg.family not in ("finetune-all", "finetune-head"):
        raise ConfigError(f"finetune needs family=finetune-all or finetune-head, got {cfg.family!r}")
    return _cv_family(cfg, cfg.family, _load_checkpoint(cfg))


def cmd_scratch(cfg: RunConfig) -> Dict[str, Path]:
    return _cv_family(cfg, "scratch")


def cmd_transfer(cfg: RunConfig) -> Dict[str, Path]:
    """Supervised pre-training on source_store, then all-layer fine-tuning on store"""
    source = _load_store(cfg, "source_store", labelled=True)
    _check_window_length(source, cfg.net.input_T)
    out = _out_dir(cfg)
    ckpt = supervised_pretrain(source, cfg.net, cfg.train)
    ckpt.save(out / TRANSFER_FILE)
    paths = _cv_family(cfg, "transfer", ckpt)
    paths["transfer_checkpoint"] = out / TRANSFER_FILE
    return paths


def cmd_rf(cfg: RunConfig) -> Dict[str, Path]:
    store = _load_store(cfg, labelled=True)
    paths = _cv_family(cfg, "forest")
    features = features_frame(store.window(i) for i in range(len(store)))
    features.insert(0, "label", store.labels)
    features.insert(0, "subject_id", store.subject_ids)
    paths["features"] = _write_csv(features, Path(cfg.out) / "features.csv")
    return paths


# =====================================================
# EVALUATION
# =====================================================
def cmd_eval(cfg: RunConfig) -> Dict[str, Path]:
    """Score a trained classifier checkpoint on every subject of a labelled store"""
    ckpt = _load_checkpoint(cfg)
    if ckpt.n_classes is None:
        raise ConfigError(f"checkpoint={cfg.checkpoint} has no activity classifier; run finetune or scratch first")
    store = _load_store(cfg, labelled=True)
    _check_window_length(store, ckpt.config.input_T)
    if store.labels.max() >= ckpt.n_classes:
        raise LabelError(
            f"Store labels reach class {store.labels.max()} but the checkpoint classifies {ckpt.n_classes} classes"
        )
    out = _out_dir(cfg)
    fold = Fold(-1, (), (), tuple(store.subjects()))
    report = evaluate(ckpt.to_model(), store, fold, ckpt.n_classes, "eval", cfg.dataset)
    summary = report.summary()
    logger.info(f"Evaluation: macro-F1 {summary['f1_mean']:.3f}, kappa {summary['kappa_mean']:.3f}")
    return _write_report(report, out)


def cmd_export_embeddings(cfg: RunConfig) -> Dict[str, Path]:
    """Trunk features of every window, with subject / day / label columns, for external projection"""
    ckpt = _load_checkpoint(cfg)
    store = _load_store(cfg)
    _check_window_length(store, ckpt.config.input_T)
    out = _out_dir(cfg)
    features = extract_embeddings(ckpt.to_model(), torch.from_numpy(store.windows))
    frame = pd.DataFrame(features, columns=[f"f{i}" for i in range(features.shape[1])])
    frame = pd.concat([store.meta[["subject_id", "day_index", "label"]].reset_index(drop=True), frame], axis=1)
    return {"embeddings": _write_csv(frame, out / "embeddings.csv")}


# =====================================================
# EXPLANATIONS
# =====================================================
def cmd_explain(cfg: RunConfig) -> Dict[str, Path]:
    ckpt = _load_checkpoint(cfg)
    store = _load_store(cfg)
    _check_window_length(store, ckpt.config.input_T)
    index = cfg.explain.window_index
    if index >= len(store):
        raise ConfigError(f"explain.window_index={index} but the store holds {len(store)} windows")
    out = _out_dir(cfg)
    net = ckpt.to_model()
    net.eval()
    window = store.window(index)
    relevance = ExplainerFactory.explain(
        cfg.explain.method, net, window, cfg.explain.head, cfg.explain.target, cfg.lrp, cfg.explain.ig_steps,
    )
    scalogram = cwt_morlet(euclidean_norm(window), window.rate, n_scales=cfg.explain.n_scales)
    paths = {
        "relevance": _write_csv(relevance.to_frame(), out / "relevance.csv"),
        "scalogram": _write_csv(scalogram.to_frame(), out / "scalogram.csv"),
    }
    if cfg.explain.render:
        paths["panel"] = render_relevance_panel(window, relevance, out / "panel.svg", cfg.explain.n_scales)
    return paths


def cmd_mask(cfg: RunConfig) -> Dict[str, Path]:
    """Masking-faithfulness curves of one attribution method against the requested orders"""
    ckpt = _load_checkpoint(cfg)
    store = _load_store(cfg)
    _check_window_length(store, ckpt.config.input_T)
    out = _out_dir(cfg)
    net = ckpt.to_model()
    net.eval()
    data = build_masking_set(store, net, cfg.transforms, cfg.mask.n_pairs, make_rng(cfg.seed, "masking_set"))
    curves = pd.concat(
        [
            mask_faithfulness(
                net, data, cfg.mask.method, order, cfg.mask.noise_sigma, cfg.mask.task, cfg.seed, cfg.lrp,
            )
            for order in cfg.mask.orders
        ],
        ignore_index=True,
    )
    areas = pd.DataFrame(
        [
            (order, task, masking_auc(curves[curves["order"] == order], task))
            for order in cfg.mask.orders
            for task in sorted(curves["task"].unique())
        ],
        columns=["order", "task", "auc"],
    )
    explained = curves[curves["task"] == cfg.mask.task]
    return {
        "curves": _write_csv(curves, out / "masking.csv"),
        "auc": _write_csv(areas, out / "masking_auc.csv"),
        "svg": render_curves(explained, "fraction", "accuracy", ["order"], out / "masking.svg", f"{cfg.mask.task} masking"),
    }


# =====================================================
# ABLATIONS
# =====================================================
def cmd_ablate(cfg: RunConfig) -> Dict[str, Path]:
    store = _load_store(cfg, labelled=True)
    _check_window_length(store, cfg.net.input_T)
    if cfg.ablate.kind == "label":
        needs_ckpt = any(f in ("finetune-all", "finetune-head", "transfer") for f in cfg.ablate.families)
        ckpt = _load_checkpoint(cfg) if needs_ckpt else None
        out = _out_dir(cfg)
        table = label_volume_ablation(
            store, ckpt, cfg.ablate.subject_counts, make_cv_plan(store, cfg.train.seed), cfg.train, cfg.net, cfg.forest,
            cfg.ablate.families, cfg.dataset,
        )
        x, group = "n_subjects", ["family"]
    else:
        unlabelled = _load_store(cfg, "unlabelled_store")
        out = _out_dir(cfg)
        table = unlabelled_volume_ablation(
            unlabelled, store, cfg.ablate.subject_counts, cfg.ablate.data_ratios, cfg.net, cfg.sampler,
            cfg.transforms, cfg.pretrain.epochs, cfg.train, cfg.dataset,
        )
        x, group = "n_subjects", ["data_ratio"]
    return {
        "ablation": _write_csv(table, out / "ablation.csv"),
        "svg": render_curves(table, x, "f1_mean", group, out / "ablation.svg", f"{cfg.ablate.kind} volume"),
    }
