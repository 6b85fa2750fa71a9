"""
Masking faithfulness: how fast pretext accuracy collapses as timesteps are
replaced by Gaussian noise in relevance, random or temporal order.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch
from sklearn.metrics import auc

from base.errors import ConfigError, UntrainedModelError
from base.explainer_factory import ExplainerFactory
from base.lrp import LrpConfig
from base.neural import HarNet
from base.rng import make_rng
from base.signal_core import batch_intensity
from base.store import WindowStore
from base.transforms import TASKS, TransformConfig, apply_pretext

logger = logging.getLogger(__name__)

ORDERS = ("relevance", "random", "temporal-forward", "temporal-reverse", "temporal")
MASK_FRACTIONS = np.round(np.arange(0, 21) * 0.05, 2)
CHANCE = 0.5
# minimum margin over chance before masking results mean anything
CHANCE_MARGIN = 0.1


@dataclass
class MaskingSet:
    windows: np.ndarray
    # (n, 3) flags in TASKS order
    labels: np.ndarray

    def __len__(self) -> int:
        return self.windows.shape[0]


def _predict_tasks(net: HarNet, windows: np.ndarray, tasks: Sequence[str], batch_size: int = 256) -> np.ndarray:
    net.eval()
    dtype = next(net.parameters()).dtype
    out = []
    with torch.no_grad():
        for start in range(0, len(windows), batch_size):
            _, logits = net(torch.from_numpy(windows[start:start + batch_size]).to(dtype), tasks)
            out.append(np.stack([logits[t].argmax(dim=1).numpy() for t in tasks], axis=1))
    return np.concatenate(out)


def build_masking_set(
    store: WindowStore,
    net: HarNet,
    tcfg: TransformConfig,
    n_pairs: int,
    rng: np.random.Generator,
    intensity_floor: float = 1e-4,
) -> MaskingSet:
    """
    Pairs of an original window and its fully transformed copy, kept only when
    the model gets every task right on both.
    """
    tcfg.validate_for(store.window_length)
    weights = np.maximum(store.intensities.astype(np.float64), intensity_floor)
    kept_windows, kept_labels = [], []
    attempts = 0
    while len(kept_windows) < 2 * n_pairs and attempts < 10 * n_pairs:
        attempts += 1
        i = int(rng.choice(len(store), p=weights / weights.sum()))
        original = store.window(i)
        transformed, label = apply_pretext(original, tcfg, rng, force=True)
        pair = np.stack([original.samples, transformed.samples]).astype(np.float32)
        labels = np.array([(0, 0, 0), label.as_tuple()], dtype=np.int64)
        if (_predict_tasks(net, pair, TASKS) == labels).all():
            kept_windows.extend(pair)
            kept_labels.extend(labels)
    if not kept_windows:
        raise UntrainedModelError(f"Model classified none of {attempts} candidate pairs correctly on every task")
    logger.info(f"Masking set: {len(kept_windows) // 2} pairs kept of {attempts} candidates")
    return MaskingSet(np.stack(kept_windows), np.stack(kept_labels))


def _mask_orders(
    net: HarNet,
    data: MaskingSet,
    order: str,
    method: str,
    task: str,
    lrp_cfg: Optional[LrpConfig],
    rng: np.random.Generator,
) -> np.ndarray:
    """
    (n, T) timestep orders, most-to-be-masked first.

    The relevance order ranks signed relevance: timesteps supporting the
    explained class go first, counter-evidence last.
    """
    n, _, T = data.windows.shape
    if order == "temporal-forward":
        return np.tile(np.arange(T), (n, 1))
    if order == "temporal-reverse":
        return np.tile(np.arange(T)[::-1], (n, 1))
    if order == "random":
        return np.stack([rng.permutation(T) for _ in range(n)])
    column = TASKS.index(task)
    orders = []
    for w, label in zip(data.windows, data.labels):
        relevance = ExplainerFactory.explain(method, net, w.astype(np.float64), task, int(label[column]), lrp_cfg)
        orders.append(np.argsort(-relevance.timestep_relevance(), kind="stable"))
    return np.stack(orders)


def _masked_curve(
    net: HarNet,
    data: MaskingSet,
    orders: np.ndarray,
    noise: np.ndarray,
    fractions: np.ndarray,
) -> pd.DataFrame:
    T = data.windows.shape[2]
    rows = []
    for fraction in fractions:
        k = int(round(fraction * T))
        masked = data.windows.copy()
        for i in range(len(masked)):
            steps = orders[i, :k]
            masked[i][:, steps] = noise[i][:, steps]
        predictions = _predict_tasks(net, masked, TASKS)
        for j, task in enumerate(TASKS):
            rows.append((float(fraction), task, float(np.mean(predictions[:, j] == data.labels[:, j]))))
    return pd.DataFrame(rows, columns=["fraction", "task", "accuracy"])


def mask_faithfulness(
    net: HarNet,
    data: MaskingSet,
    method: str = "lrp-cmp",
    order: str = "relevance",
    noise_sigma: Optional[float] = None,
    task: str = "aot",
    seed: int = 0,
    lrp_cfg: Optional[LrpConfig] = None,
    fractions: np.ndarray = MASK_FRACTIONS,
) -> pd.DataFrame:
    """
    Per-task accuracy as a growing fraction of timesteps is noised out.

    Args:
        net: Trained pretext model
        data: Labelled evaluation windows
        method: Attribution method ordering the timesteps for order="relevance"
        order: relevance | random | temporal-forward | temporal-reverse | temporal
            ("temporal" is the mean of the forward and reverse curves)
        noise_sigma: Noise std; each window's own norm-std when None
        task: Task whose relevance orders the timesteps
        seed: Seeds the noise and random orders
        lrp_cfg: Rule configuration for the LRP methods
        fractions: Mask fractions of the timesteps

    Returns:
        DataFrame with columns fraction, task, accuracy, order, method

    Raises:
        UntrainedModelError: If unmasked accuracy on the explained task is at chance level
    """
    if order not in ORDERS:
        raise ConfigError(f"Unknown masking order {order!r}. Available: {list(ORDERS)}")
    if task not in TASKS:
        raise ConfigError(f"Unknown task {task!r}")
    ExplainerFactory.resolve(method)

    unmasked = np.mean(_predict_tasks(net, data.windows, [task])[:, 0] == data.labels[:, TASKS.index(task)])
    if unmasked < CHANCE + CHANCE_MARGIN:
        raise UntrainedModelError(
            f"Unmasked {task} accuracy {unmasked:.3f} is within {CHANCE_MARGIN} of chance; train the model first"
        )

    rng = make_rng(seed, "masking")
    sigmas = batch_intensity(data.windows) if noise_sigma is None else np.full(len(data), noise_sigma)
    noise = (rng.standard_normal(data.windows.shape) * sigmas[:, None, None]).astype(np.float32)

    if order == "temporal":
        forward = _masked_curve(net, data, _mask_orders(net, data, "temporal-forward", method, task, lrp_cfg, rng), noise, fractions)
        reverse = _masked_curve(net, data, _mask_orders(net, data, "temporal-reverse", method, task, lrp_cfg, rng), noise, fractions)
        curve = forward.copy()
        curve["accuracy"] = (forward["accuracy"].to_numpy() + reverse["accuracy"].to_numpy()) / 2
    else:
        curve = _masked_curve(net, data, _mask_orders(net, data, order, method, task, lrp_cfg, rng), noise, fractions)
    curve["order"] = order
    curve["method"] = method if order == "relevance" else ""
    logger.info(f"Masking ({order}): {task} AUC {masking_auc(curve, task):.3f}")
    return curve


def masking_auc(curve: pd.DataFrame, task: str = "aot") -> float:
    rows = curve[curve["task"] == task].sort_values("fraction")
    return float(auc(rows["fraction"].to_numpy(dtype=float), rows["accuracy"].to_numpy(dtype=float)))
