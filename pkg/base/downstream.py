"""
Downstream evaluation: subject-wise CV plans, fine-tuning, training from
scratch, transfer learning, the forest baseline and label / unlabelled
volume ablations.
"""
import copy
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field
from sklearn.model_selection import KFold

from base.checkpoint import NetworkCheckpoint
from base.errors import ConfigError, LabelError, ShapeError, require
from base.features import feature_matrix
from base.forest import ForestConfig, forest_predict, train_forest
from base.metrics import cohen_kappa, confusion, macro_f1
from base.neural import (
    ACTIVITY_HEAD,
    HarNet,
    NetConfig,
    adam_step,
    attach_classifier,
    build_network,
    loss_and_grad,
    make_optimizer,
)
from base.rng import make_rng
from base.self_supervised import SamplerConfig, pretrain
from base.store import WindowStore
from base.transforms import TransformConfig, random_rotation_matrix
from config.settings import BASE_LR, PATIENCE

logger = logging.getLogger(__name__)

LOSO_THRESHOLD = 10
N_FOLDS = 5
# train : val among the non-test subjects
VAL_SHARE = 1 / 8
FAMILIES = ("finetune-all", "finetune-head", "scratch", "forest", "transfer")
REPORT_COLUMNS = ["dataset", "family", "fold", "subject", "f1", "kappa", "n_windows"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(BASE_LR, gt=0)
    patience: int = Field(PATIENCE, ge=1)
    augment_rotation: bool = False
    seed: int = 0


# =====================================================
# CV PLAN
# =====================================================
@dataclass(frozen=True)
class Fold:
    index: int
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]


@dataclass
class CvPlan:
    mode: str
    folds: List[Fold]
    # original class ids kept after pruning, in order; position = model class id
    classes: List[int]
    dropped_classes: List[int] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def prepare(self, store: WindowStore) -> WindowStore:
        """Drop pruned classes and renumber the kept ones 0..n_classes-1"""
        keep = np.flatnonzero(np.isin(store.labels, self.classes))
        lookup = {c: i for i, c in enumerate(self.classes)}
        meta = store.meta.iloc[keep].copy()
        meta["label"] = meta["label"].map(lookup).astype(np.int64)
        return WindowStore(store.windows[keep], meta, store.rate)


def _validation_split(rest: List[str], rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    order = [rest[i] for i in rng.permutation(len(rest))]
    n_val = max(1, int(round(len(rest) * VAL_SHARE))) if len(rest) >= 2 else 0
    return sorted(order[n_val:]), sorted(order[:n_val])


def holdout_fold(subjects: Sequence[str], seed: int = 0, stream: str = "holdout") -> Fold:
    """All subjects train (minus the validation share); nothing is held out for testing"""
    subjects = sorted(subjects)
    if len(subjects) >= 2:
        train, val = _validation_split(subjects, make_rng(seed, stream))
    else:
        train, val = subjects, []
    return Fold(-1, tuple(train), tuple(val), ())


def make_cv_plan(store: WindowStore, seed: int = 0) -> CvPlan:
    """
    LOSO below LOSO_THRESHOLD subjects (after pruning classes some subject
    never performs), otherwise N_FOLDS subject-wise folds.

    Raises:
        LabelError: If the store is unlabelled or a fold trains on fewer than 2 classes
        ConfigError: If the store has fewer than 2 subjects
    """
    if not store.labelled:
        raise LabelError("make_cv_plan needs a labelled store")
    subjects = store.subjects()
    if len(subjects) < 2:
        raise ConfigError(f"Cross-validation needs at least 2 subjects, got {len(subjects)}")
    rng = make_rng(seed, "cv_plan")
    by_subject = store.classes_by_subject()
    all_classes = sorted(set().union(*by_subject.values()))

    folds = []
    if len(subjects) < LOSO_THRESHOLD:
        mode = "loso"
        classes = sorted(set.intersection(*by_subject.values()))
        dropped = [c for c in all_classes if c not in classes]
        if dropped:
            logger.warning(f"Dropping classes {dropped}: not performed by every subject")
        for i, test_subject in enumerate(subjects):
            rest = [s for s in subjects if s != test_subject]
            train, val = _validation_split(rest, rng)
            folds.append(Fold(i, tuple(train), tuple(val), (test_subject,)))
    else:
        mode = "kfold"
        classes, dropped = all_classes, []
        splitter = KFold(n_splits=N_FOLDS, shuffle=True, random_state=int(rng.integers(0, 2**31 - 1)))
        for i, (rest_idx, test_idx) in enumerate(splitter.split(subjects)):
            train, val = _validation_split([subjects[j] for j in rest_idx], rng)
            folds.append(Fold(i, tuple(train), tuple(val), tuple(sorted(subjects[j] for j in test_idx))))

    plan = CvPlan(mode=mode, folds=folds, classes=classes, dropped_classes=dropped)
    for fold in folds:
        sets = [set(fold.train), set(fold.val), set(fold.test)]
        require(
            not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]),
            f"fold {fold.index}: train/val/test subjects overlap",
        )
        require(set().union(*sets) == set(subjects), f"fold {fold.index} does not cover every subject")
        train_classes = set().union(*(by_subject[s] for s in fold.train)) & set(classes)
        if len(train_classes) < 2:
            raise LabelError(
                f"fold {fold.index}: training subjects {list(fold.train)} cover {len(train_classes)} class(es), need 2"
            )
    logger.info(f"CV plan: {mode}, {len(folds)} folds, {len(classes)} classes")
    return plan


# =====================================================
# REPORTS
# =====================================================
@dataclass
class EvalReport:
    rows: pd.DataFrame
    confusions: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "EvalReport":
        return cls(pd.DataFrame(columns=REPORT_COLUMNS))

    @classmethod
    def merge(cls, reports: Sequence["EvalReport"]) -> "EvalReport":
        confusions = {}
        for r in reports:
            confusions.update(r.confusions)
        frames = [r.rows for r in reports if len(r.rows)]
        rows = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=REPORT_COLUMNS)
        return cls(rows, confusions)

    def summary(self) -> Dict[str, float]:
        """Mean and population SD of per-subject F1 and kappa"""
        f1 = self.rows["f1"].to_numpy(dtype=float)
        kappa = self.rows["kappa"].to_numpy(dtype=float)
        return {
            "f1_mean": float(f1.mean()),
            "f1_sd": float(f1.std(ddof=0)),
            "kappa_mean": float(kappa.mean()),
            "kappa_sd": float(kappa.std(ddof=0)),
        }

    def to_frame(self) -> pd.DataFrame:
        """Per-subject rows followed by one summary row"""
        s = self.summary()
        first = self.rows.iloc[0] if len(self.rows) else None
        summary_row = {
            "dataset": first["dataset"] if first is not None else "",
            "family": first["family"] if first is not None else "",
            "fold": "summary",
            "subject": "mean±sd",
            "f1": s["f1_mean"],
            "kappa": s["kappa_mean"],
            "n_windows": int(self.rows["n_windows"].sum()),
            "f1_sd": s["f1_sd"],
            "kappa_sd": s["kappa_sd"],
        }
        return pd.concat([self.rows, pd.DataFrame([summary_row])], ignore_index=True)


def _report(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    subjects: np.ndarray,
    fold: Fold,
    n_classes: int,
    family: str,
    dataset: str,
) -> EvalReport:
    rows = []
    for subject in fold.test:
        mask = subjects == subject
        if not mask.any():
            logger.warning(f"fold {fold.index}: test subject {subject!r} has no windows after pruning")
            continue
        rows.append({
            "dataset": dataset,
            "family": family,
            "fold": fold.index,
            "subject": subject,
            "f1": macro_f1(y_true[mask], y_pred[mask], n_classes),
            "kappa": cohen_kappa(y_true[mask], y_pred[mask]),
            "n_windows": int(mask.sum()),
        })
    return EvalReport(
        pd.DataFrame(rows, columns=REPORT_COLUMNS),
        {fold.index: confusion(y_true, y_pred, n_classes)},
    )


# =====================================================
# NETWORK TRAINING
# =====================================================
@dataclass
class TrainedModel:
    net: HarNet
    curve: pd.DataFrame
    best_epoch: int = 0


def _predict(net: HarNet, store: WindowStore, batch_size: int = 256) -> np.ndarray:
    net.eval()
    dtype = next(net.parameters()).dtype
    out = []
    with torch.no_grad():
        for start in range(0, len(store), batch_size):
            x = torch.from_numpy(store.windows[start:start + batch_size]).to(dtype)
            _, logits = net(x, [ACTIVITY_HEAD])
            out.append(logits[ACTIVITY_HEAD].argmax(dim=1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _fit(
    net: HarNet,
    train: WindowStore,
    val: WindowStore,
    cfg: TrainConfig,
    frozen: Sequence[str],
    rng: np.random.Generator,
) -> TrainedModel:
    """Mini-batch Adam with early stopping on validation macro-F1"""
    if len(train) == 0:
        raise LabelError("No training windows in fold")
    if len(np.unique(train.labels)) < 2:
        raise LabelError(f"Training set holds a single class {np.unique(train.labels).tolist()}")
    monitor = val
    if len(val) == 0:
        logger.warning("Empty validation set, early stopping monitors training macro-F1")
        monitor = train
    opt = make_optimizer(net, cfg.lr, frozen=frozen)
    n_classes = net.n_classes
    best_state = copy.deepcopy(net.state_dict())
    best_score, best_epoch, wait = -np.inf, 0, 0
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            x = train.windows[idx]
            if cfg.augment_rotation:
                x = np.stack([random_rotation_matrix(rng) @ w for w in x.astype(np.float64)]).astype(np.float32)
            batch = torch.from_numpy(np.ascontiguousarray(x)).to(next(net.parameters()).dtype)
            labels = {ACTIVITY_HEAD: torch.from_numpy(train.labels[idx])}
            loss, grads = loss_and_grad(net, batch, labels, [ACTIVITY_HEAD], frozen=frozen)
            adam_step(opt, grads, cfg.lr)
            losses.append(loss)
        score = macro_f1(monitor.labels, _predict(net, monitor), n_classes)
        rows.append((epoch, float(np.mean(losses)), score))
        if score > best_score:
            best_score, best_epoch, wait = score, epoch, 0
            best_state = copy.deepcopy(net.state_dict())
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    net.load_state_dict(best_state)
    net.eval()
    curve = pd.DataFrame(rows, columns=["epoch", "train_loss", "val_f1"])
    if rows:
        logger.info(f"Trained {len(rows)} epochs, best epoch {best_epoch} (macro-F1 {best_score:.3f})")
    return TrainedModel(net, curve, best_epoch)


def fold_stores(store: WindowStore, fold: Fold) -> Tuple[WindowStore, WindowStore, WindowStore]:
    return store.select_subjects(fold.train), store.select_subjects(fold.val), store.select_subjects(fold.test)


def _check_fold_labels(store: WindowStore, n_classes: int):
    if len(store) and store.labels.max() >= n_classes:
        raise LabelError(f"Fold labels reach class {store.labels.max()} but the head has {n_classes} classes")


def finetune(
    ckpt: NetworkCheckpoint,
    store: WindowStore,
    fold: Fold,
    n_classes: int,
    mode: str = "all-layers",
    cfg: TrainConfig = TrainConfig(),
) -> TrainedModel:
    """
    Attach a fresh FC-512 + softmax head to a pre-trained trunk and train it.

    Args:
        ckpt: Pre-trained checkpoint
        store: Labelled store with contiguous class ids (CvPlan.prepare)
        fold: Subjects for train / val / test
        n_classes: Classifier width
        mode: "all-layers" or "head-only"; head-only leaves the trunk bit-identical
        cfg: Training configuration

    Returns:
        TrainedModel restored to its best validation epoch
    """
    if mode not in ("all-layers", "head-only"):
        raise ConfigError(f"finetune mode must be 'all-layers' or 'head-only', got {mode!r}")
    if ckpt.config.input_T != store.window_length:
        raise ShapeError(
            f"Checkpoint expects {ckpt.config.input_T}-sample windows, store holds {store.window_length}"
        )
    train, val, _ = fold_stores(store, fold)
    _check_fold_labels(train, n_classes)
    rng = make_rng(cfg.seed, f"finetune/{fold.index}")
    net = ckpt.to_model()
    net.freeze_trunk(False)
    attach_classifier(net, n_classes, rng)
    frozen: Tuple[str, ...] = ()
    if mode == "head-only":
        net.freeze_trunk(True)
        frozen = ("trunk.",)
    return _fit(net, train, val, cfg, frozen, rng)


def train_scratch(
    store: WindowStore,
    fold: Fold,
    net_cfg: NetConfig,
    n_classes: int,
    cfg: TrainConfig = TrainConfig(),
) -> TrainedModel:
    """Same protocol as all-layers fine-tuning, from a fresh initialisation"""
    if net_cfg.input_T != store.window_length:
        raise ShapeError(f"NetConfig expects {net_cfg.input_T}-sample windows, store holds {store.window_length}")
    train, val, _ = fold_stores(store, fold)
    _check_fold_labels(train, n_classes)
    rng = make_rng(cfg.seed, f"scratch/{fold.index}")
    net = build_network(net_cfg, rng)
    attach_classifier(net, n_classes, rng)
    return _fit(net, train, val, cfg, (), rng)


def supervised_pretrain(source: WindowStore, net_cfg: NetConfig, cfg: TrainConfig = TrainConfig()) -> NetworkCheckpoint:
    """
    Train trunk + classifier on a labelled source corpus and return the trunk
    checkpoint with the source classifier discarded.
    """
    if not source.labelled:
        raise LabelError("supervised_pretrain needs a labelled source store")
    classes = source.class_ids()
    if len(classes) < 2:
        raise LabelError(f"Source store has a single class {classes}")
    source = CvPlan("source", [], classes).prepare(source)
    subjects = source.subjects()
    fold = holdout_fold(subjects, cfg.seed, "supervised_pretrain")
    model = train_scratch(source, fold, net_cfg, len(classes), cfg)
    net = model.net
    net.classifier = None
    logger.info(f"Supervised pre-training on {len(subjects)} subjects, {len(classes)} classes done")
    return NetworkCheckpoint.from_model(net, seed=cfg.seed)


def evaluate(
    model: TrainedModel | HarNet,
    store: WindowStore,
    fold: Fold,
    n_classes: Optional[int] = None,
    family: str = "",
    dataset: str = "",
) -> EvalReport:
    """Per-test-subject macro-F1 and kappa plus the fold's confusion matrix"""
    net = model.net if isinstance(model, TrainedModel) else model
    n_classes = n_classes or net.n_classes
    test = store.select_subjects(fold.test)
    if len(test) == 0:
        raise LabelError(f"fold {fold.index}: empty test set")
    predictions = _predict(net, test)
    return _report(test.labels, predictions, test.subject_ids, fold, n_classes, family, dataset)


# =====================================================
# FOREST BASELINE
# =====================================================
def evaluate_forest(
    store: WindowStore,
    fold: Fold,
    n_classes: int,
    forest_cfg: ForestConfig = ForestConfig(),
    seed: int = 0,
    dataset: str = "",
) -> EvalReport:
    """Forest trained on train + val subjects, scored on the test subjects"""
    train = store.select_subjects(fold.train + fold.val)
    test = store.select_subjects(fold.test)
    X_train = feature_matrix(train.window(i) for i in range(len(train)))
    X_test = feature_matrix(test.window(i) for i in range(len(test)))
    model = train_forest(X_train, train.labels, forest_cfg, make_rng(seed, f"forest/{fold.index}"))
    predictions = forest_predict(model, X_test)
    return _report(test.labels, predictions, test.subject_ids, fold, n_classes, "forest", dataset)


# =====================================================
# CROSS-VALIDATED FAMILIES
# =====================================================
def run_cv(
    store: WindowStore,
    plan: CvPlan,
    family: str,
    cfg: TrainConfig = TrainConfig(),
    net_cfg: Optional[NetConfig] = None,
    ckpt: Optional[NetworkCheckpoint] = None,
    forest_cfg: ForestConfig = ForestConfig(),
    dataset: str = "",
    folds: Optional[Sequence[Fold]] = None,
) -> EvalReport:
    """
    Run one model family over every fold of the plan.

    finetune-all / finetune-head / transfer need ckpt (for transfer, the
    output of supervised_pretrain); scratch needs net_cfg.
    """
    if family not in FAMILIES:
        raise ConfigError(f"Unknown model family {family!r}. Available: {list(FAMILIES)}")
    if family in ("finetune-all", "finetune-head", "transfer") and ckpt is None:
        raise ConfigError(f"Family {family!r} needs a checkpoint")
    if family == "scratch" and net_cfg is None:
        raise ConfigError("Family 'scratch' needs a NetConfig")
    prepared = plan.prepare(store)
    reports = []
    for fold in folds if folds is not None else plan.folds:
        if family == "forest":
            report = evaluate_forest(prepared, fold, plan.n_classes, forest_cfg, cfg.seed, dataset)
        else:
            if family == "scratch":
                model = train_scratch(prepared, fold, net_cfg, plan.n_classes, cfg)
            else:
                mode = "head-only" if family == "finetune-head" else "all-layers"
                model = finetune(ckpt, prepared, fold, plan.n_classes, mode, cfg)
            report = evaluate(model, prepared, fold, plan.n_classes, family, dataset)
        reports.append(report)
        if len(report.rows):
            logger.info(f"{family} fold {fold.index}: mean F1 {report.rows['f1'].mean():.3f}")
    return EvalReport.merge(reports)


# =====================================================
# ABLATIONS
# =====================================================
def _nested_subjects(subjects: Sequence[str], rng: np.random.Generator) -> List[str]:
    return [subjects[i] for i in rng.permutation(len(subjects))]


def label_volume_ablation(
    store: WindowStore,
    ckpt: Optional[NetworkCheckpoint],
    subject_counts: Sequence[int],
    plan: Optional[CvPlan] = None,
    cfg: TrainConfig = TrainConfig(),
    net_cfg: Optional[NetConfig] = None,
    forest_cfg: ForestConfig = ForestConfig(),
    families: Sequence[str] = ("finetune-all", "scratch", "forest"),
    dataset: str = "",
) -> pd.DataFrame:
    """
    Mean / SD macro-F1 and kappa per (labelled train-subject count, family).

    The train subjects of every fold are shuffled once per seed; a count uses
    the first `count` of them, so smaller sets are nested in larger ones.
    """
    plan = plan or make_cv_plan(store, cfg.seed)
    net_cfg = net_cfg or (ckpt.config if ckpt is not None else None)
    smallest = min(len(f.train) for f in plan.folds)
    too_many = [c for c in subject_counts if c > smallest or c < 1]
    if too_many:
        raise ConfigError(
            f"Subject counts {too_many} outside [1, {smallest}] available training subjects per fold"
        )
    rng = make_rng(cfg.seed, "label_volume")
    orders = {f.index: _nested_subjects(list(f.train), rng) for f in plan.folds}
    rows = []
    for count in subject_counts:
        folds = [replace(f, train=tuple(sorted(orders[f.index][:count]))) for f in plan.folds]
        for family in families:
            report = run_cv(store, plan, family, cfg, net_cfg, ckpt, forest_cfg, dataset, folds=folds)
            rows.append({"n_subjects": count, "family": family, **report.summary()})
            logger.info(f"Label volume {count} subjects, {family}: F1 {rows[-1]['f1_mean']:.3f}")
    return pd.DataFrame(rows)


def unlabelled_volume_ablation(
    unlabelled: WindowStore,
    labelled: WindowStore,
    subject_counts: Sequence[int],
    data_ratios: Sequence[float],
    net_cfg: NetConfig,
    sampler_cfg: SamplerConfig,
    tcfg: TransformConfig,
    epochs: int,
    cfg: TrainConfig = TrainConfig(),
    dataset: str = "",
) -> pd.DataFrame:
    """
    Pre-train on nested subsets of unlabelled subjects at several per-subject
    data ratios, then fine-tune all layers under the labelled store's CV plan.
    """
    available = unlabelled.subjects()
    bad = [c for c in subject_counts if c < 2 or c > len(available)]
    if bad:
        raise ConfigError(
            f"Unlabelled subject counts {bad} outside [2, {len(available)}] available subjects"
        )
    plan = make_cv_plan(labelled, cfg.seed)
    order = _nested_subjects(available, make_rng(cfg.seed, "unlabelled_volume"))
    rows = []
    for count in subject_counts:
        subset = unlabelled.select_subjects(order[:count])
        for ratio in data_ratios:
            result = pretrain(
                subset, net_cfg, sampler_cfg.model_copy(update={"data_ratio": ratio}), tcfg, epochs, cfg.seed
            )
            report = run_cv(labelled, plan, "finetune-all", cfg, ckpt=result.checkpoint, dataset=dataset)
            rows.append({"n_subjects": count, "data_ratio": ratio, **report.summary()})
            logger.info(f"Unlabelled volume {count} subjects, ratio {ratio}: F1 {rows[-1]['f1_mean']:.3f}")
    return pd.DataFrame(rows)
