"""
Self-supervised pre-training: movement-weighted sampling, pretext batch
construction and the multi-task training loop.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import auc

from base.checkpoint import NetworkCheckpoint
from base.errors import ConfigError, SamplingError, require
from base.neural import HarNet, NetConfig, adam_step, build_network, loss_and_grad, lr_schedule, make_optimizer
from base.rng import make_rng
from base.store import WindowStore
from base.transforms import TASKS, TransformConfig, apply_pretext, random_rotation
from config.settings import BASE_LR, PATIENCE

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "task", "split", "accuracy", "loss", "lr"]
SSL_TEST_FRACTION = 0.2


class SamplerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    subjects_per_iter: int = Field(4, ge=1)
    windows_per_subject: int = Field(1500, ge=1)
    intensity_floor: float = Field(1e-4, gt=0)
    weighted: bool = True
    # contiguous share of each subject-day usable for training
    data_ratio: float = Field(1.0, gt=0, le=1.0)

    @property
    def batch_size(self) -> int:
        return self.subjects_per_iter * self.windows_per_subject


@dataclass
class PretextBatch:
    windows: np.ndarray
    # (n, 3) binary flags in TASKS order
    labels: np.ndarray
    provenance: pd.DataFrame = field(repr=False)

    def __len__(self) -> int:
        return self.windows.shape[0]

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.windows)

    def label_tensors(self, tasks: Sequence[str] = TASKS) -> Dict[str, torch.Tensor]:
        return {task: torch.from_numpy(self.labels[:, TASKS.index(task)].astype(np.int64)) for task in tasks}


def _check_tasks(tasks: Sequence[str]) -> Tuple[str, ...]:
    tasks = tuple(tasks)
    if not tasks:
        raise ConfigError("at least one pretext task is required")
    unknown = set(tasks) - set(TASKS)
    if unknown:
        raise ConfigError(f"Unknown pretext tasks {sorted(unknown)}. Available: {list(TASKS)}")
    # keep the canonical order
    return tuple(t for t in TASKS if t in tasks)


# =====================================================
# SAMPLING
# =====================================================
def weighted_sample(
    store: WindowStore,
    subject: str,
    day: int,
    k: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Draw k store indices of one subject-day with replacement, with probability
    proportional to max(intensity, intensity_floor); uniform when cfg.weighted is off.
    """
    candidates = store.indices(subject, day)
    if candidates.size == 0:
        raise SamplingError(f"No windows for subject {subject!r} day {day}")
    if not cfg.weighted:
        return candidates[rng.integers(0, candidates.size, size=k)]
    weights = np.maximum(store.intensities[candidates].astype(np.float64), cfg.intensity_floor)
    return rng.choice(candidates, size=k, replace=True, p=weights / weights.sum())


def restrict_data_ratio(store: WindowStore, ratio: float, rng: np.random.Generator) -> WindowStore:
    """Keep a uniformly placed contiguous share of every subject-day"""
    if ratio >= 1.0:
        return store
    keep = []
    for subject in store.subjects():
        for day in store.days(subject):
            idx = store.indices(subject, day)
            k = max(1, int(round(ratio * idx.size)))
            start = int(rng.integers(0, idx.size - k + 1))
            keep.append(idx[start:start + k])
    kept = np.sort(np.concatenate(keep))
    logger.info(f"Data ratio {ratio}: keeping {kept.size} of {len(store)} windows")
    return store.subset(kept)


def build_pretext_batch(
    store: WindowStore,
    cfg: SamplerConfig,
    tcfg: TransformConfig,
    rng: np.random.Generator,
    tasks: Sequence[str] = TASKS,
) -> PretextBatch:
    """
    Sample subjects, one day each, weighted windows per day; rotate every
    window and then apply the pretext transforms.
    """
    subjects = store.subjects()
    if not subjects:
        raise SamplingError("Cannot build a pretext batch from an empty store")
    tasks = _check_tasks(tasks)
    tcfg.validate_for(store.window_length)
    n_subjects = min(cfg.subjects_per_iter, len(subjects))
    chosen = rng.choice(len(subjects), size=n_subjects, replace=False)

    windows, labels, provenance = [], [], []
    for s in sorted(chosen.tolist()):
        subject = subjects[s]
        days = store.days(subject)
        day = days[int(rng.integers(0, len(days)))]
        for i in weighted_sample(store, subject, day, cfg.windows_per_subject, cfg, rng).tolist():
            w = random_rotation(store.window(i), rng)
            w, label = apply_pretext(w, tcfg, rng, tasks=tasks)
            windows.append(w.samples.astype(np.float32, copy=False))
            labels.append(label.as_tuple())
            provenance.append((subject, day, i))

    return PretextBatch(
        windows=np.stack(windows),
        labels=np.asarray(labels, dtype=np.int64),
        provenance=pd.DataFrame(provenance, columns=["subject_id", "day_index", "window_index"]),
    )


# =====================================================
# EVALUATION
# =====================================================
def _score_batches(
    net: HarNet, batches: Sequence[PretextBatch], tasks: Sequence[str]
) -> Tuple[Dict[str, float], Dict[str, float]]:
    correct = {t: 0 for t in tasks}
    loss_sum = {t: 0.0 for t in tasks}
    total = 0
    net.eval()
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        for batch in batches:
            _, logits = net(batch.tensor().to(dtype), tasks)
            targets = batch.label_tensors(tasks)
            for t in tasks:
                correct[t] += int((logits[t].argmax(dim=1) == targets[t]).sum())
                loss_sum[t] += float(F.cross_entropy(logits[t], targets[t], reduction="sum"))
            total += len(batch)
    if total == 0:
        raise SamplingError("No evaluation windows")
    return {t: correct[t] / total for t in tasks}, {t: loss_sum[t] / total for t in tasks}


def per_task_accuracy(
    net: HarNet, eval_batches: Sequence[PretextBatch], tasks: Sequence[str] = TASKS
) -> Dict[str, float]:
    """Fraction of correct binary predictions per pretext head"""
    return _score_batches(net, eval_batches, _check_tasks(tasks))[0]


def learning_curve_auc(history: pd.DataFrame, task: str, split: str = "test") -> float:
    """Area under accuracy vs epoch"""
    rows = history[(history["task"] == task) & (history["split"] == split)].sort_values("epoch")
    if len(rows) < 2:
        return float(rows["accuracy"].sum())
    return float(auc(rows["epoch"].to_numpy(dtype=float), rows["accuracy"].to_numpy(dtype=float)))


# =====================================================
# PRE-TRAINING
# =====================================================
@dataclass
class PretrainResult:
    checkpoint: NetworkCheckpoint
    history: pd.DataFrame
    train_subjects: List[str]
    test_subjects: List[str]
    best_epoch: int = 0


def split_subjects(subjects: Sequence[str], rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    """8:2 subject-level split"""
    if len(subjects) < 2:
        raise SamplingError(f"Pre-training needs at least 2 subjects for the train/test split, got {len(subjects)}")
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n_test = min(max(1, int(round(SSL_TEST_FRACTION * len(subjects)))), len(subjects) - 1)
    test, train = sorted(order[:n_test]), sorted(order[n_test:])
    require(not set(train) & set(test), f"SSL train/test subjects overlap: {sorted(set(train) & set(test))}")
    return train, test


def pretrain(
    store: WindowStore,
    net_cfg: NetConfig,
    sampler_cfg: SamplerConfig,
    tcfg: TransformConfig,
    epochs: int,
    seed: int = 0,
    tasks: Sequence[str] = TASKS,
    base_lr: float = BASE_LR,
    patience: int = PATIENCE,
    eval_batches: int = 2,
) -> PretrainResult:
    """
    Multi-task self-supervised pre-training with early stopping.

    Args:
        store: Unlabelled (or labelled, labels ignored) window store
        net_cfg: Network configuration
        sampler_cfg: Batch sampling configuration
        tcfg: Pretext transform configuration
        epochs: Maximum number of epochs
        seed: Run seed; every random stream derives from it
        tasks: Active pretext tasks
        base_lr: Adam learning rate before linear scaling
        patience: Epochs without mean test accuracy improvement before stopping
        eval_batches: Fixed held-out batches scored after every epoch

    Returns:
        PretrainResult holding the best checkpoint and the per-epoch history
    """
    tasks = _check_tasks(tasks)
    if len(store) == 0:
        raise SamplingError("Pre-training store is empty")
    tcfg.validate_for(store.window_length)
    train_subjects, test_subjects = split_subjects(store.subjects(), make_rng(seed, "ssl_split"))
    logger.info(f"SSL split: {len(train_subjects)} train / {len(test_subjects)} test subjects, tasks {list(tasks)}")

    net = build_network(net_cfg, make_rng(seed, "ssl_init"))
    opt = make_optimizer(net, base_lr)
    best = NetworkCheckpoint.from_model(net, opt, seed)
    history = pd.DataFrame(columns=HISTORY_COLUMNS)
    if epochs <= 0:
        return PretrainResult(best, history, train_subjects, test_subjects, 0)

    train_store = restrict_data_ratio(
        store.select_subjects(train_subjects), sampler_cfg.data_ratio, make_rng(seed, "ssl_ratio")
    )
    test_store = store.select_subjects(test_subjects)
    batch_size = min(sampler_cfg.subjects_per_iter, len(train_subjects)) * sampler_cfg.windows_per_subject
    n_iter = max(1, math.ceil(len(train_store) / batch_size))

    eval_cfg = sampler_cfg.model_copy(update={"weighted": True})
    eval_rng = make_rng(seed, "ssl_eval")
    test_batches = [build_pretext_batch(test_store, eval_cfg, tcfg, eval_rng, tasks) for _ in range(eval_batches)]
    train_batches = [build_pretext_batch(train_store, sampler_cfg, tcfg, eval_rng, tasks)]

    batch_rng = make_rng(seed, "ssl_batches")
    rows = []
    best_score, best_epoch, wait = -np.inf, 0, 0
    for epoch in range(1, epochs + 1):
        net.train()
        lr = base_lr
        for it in range(n_iter):
            lr = lr_schedule(epoch - 1 + it / n_iter, base_lr, batch_size)
            batch = build_pretext_batch(train_store, sampler_cfg, tcfg, batch_rng, tasks)
            net.train()
            _, grads = loss_and_grad(net, batch.tensor(), batch.label_tensors(tasks), tasks)
            adam_step(opt, grads, lr)

        test_acc, test_loss = _score_batches(net, test_batches, tasks)
        train_acc, train_loss = _score_batches(net, train_batches, tasks)
        for t in tasks:
            rows.append((epoch, t, "train", train_acc[t], train_loss[t], lr))
            rows.append((epoch, t, "test", test_acc[t], test_loss[t], lr))
        score = float(np.mean([test_acc[t] for t in tasks]))
        logger.info(
            f"Epoch {epoch}/{epochs}: "
            + ", ".join(f"{t} {test_acc[t]:.3f}" for t in tasks)
            + f" (mean {score:.3f}, lr {lr:.2e})"
        )
        if score > best_score:
            best_score, best_epoch, wait = score, epoch, 0
            best = NetworkCheckpoint.from_model(net, opt, seed)
        else:
            wait += 1
            if wait >= patience:
                logger.info(f"Early stopping at epoch {epoch}, best epoch {best_epoch}")
                break

    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    return PretrainResult(best, history, train_subjects, test_subjects, best_epoch)
