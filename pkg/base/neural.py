"""
1D pre-activation ResNet trunk, pretext and downstream heads, Adam and the
learning-rate schedule.
"""
import copy
import logging
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from base.errors import ConfigError, LabelError, NonFiniteGradientError, ShapeError
from base.rng import make_rng, seeded_torch, torch_seed
from base.signal_core import N_CHANNELS, SignalWindow
from base.transforms import TASKS
from config.settings import BASE_LR, BURN_IN_EPOCHS, REF_BATCH, WINDOW_LENGTH

logger = logging.getLogger(__name__)

ACTIVITY_HEAD = "activity"
HIDDEN_WIDTH = 512


class NetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    width_base: int = Field(64, ge=1)
    n_stages: int = Field(4, ge=1)
    blocks_per_stage: int = Field(2, ge=1)
    feature_dim: int = Field(1024, ge=1)
    kernel_size: int = Field(5, ge=1)
    input_T: int = Field(WINDOW_LENGTH, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        return self

    @property
    def stage_widths(self) -> List[int]:
        return [self.width_base * 2**i for i in range(self.n_stages)]

    @property
    def output_T(self) -> int:
        t = self.input_T
        for _ in range(self.n_stages - 1):
            t = (t + 1) // 2
        return t

    @classmethod
    def preset(cls, name: str, **overrides) -> "NetConfig":
        if name not in NET_PRESETS:
            raise ConfigError(f"Unknown network preset {name!r}. Available: {sorted(NET_PRESETS)}")
        return cls(**{**NET_PRESETS[name], **overrides})


# Network size presets
NET_PRESETS = {
    "full": {
        "width_base": 64,
        "n_stages": 4,
        "blocks_per_stage": 2,
        "feature_dim": 1024,
        "kernel_size": 5,
    },
    "tiny": {
        "width_base": 8,
        "n_stages": 4,
        "blocks_per_stage": 2,
        "feature_dim": 64,
        "kernel_size": 3,
    },
}


# =====================================================
# LAYERS
# =====================================================
def _conv(c_in: int, c_out: int, kernel_size: int, stride: int = 1) -> nn.Conv1d:
    return nn.Conv1d(c_in, c_out, kernel_size, stride=stride, padding=kernel_size // 2, bias=False)


class PreActBlock(nn.Module):
    """BN -> ReLU -> conv, twice; projection shortcut on the pre-activated input"""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, stride: int):
        super().__init__()
        self.bn1 = nn.BatchNorm1d(c_in)
        self.relu1 = nn.ReLU()
        self.conv1 = _conv(c_in, c_out, kernel_size, stride)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.relu2 = nn.ReLU()
        self.conv2 = _conv(c_out, c_out, kernel_size)
        self.shortcut: Optional[nn.Conv1d] = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv1d(c_in, c_out, 1, stride=stride, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = self.relu1(self.bn1(x))
        skip = x if self.shortcut is None else self.shortcut(a)
        y = self.conv2(self.relu2(self.bn2(self.conv1(a))))
        return skip + y


class Trunk(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        widths = cfg.stage_widths
        self.stem = _conv(N_CHANNELS, widths[0], cfg.kernel_size)
        stages = []
        c_in = widths[0]
        for i, c_out in enumerate(widths):
            blocks = []
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (i > 0 and b == 0) else 1
                blocks.append(PreActBlock(c_in, c_out, cfg.kernel_size, stride))
                c_in = c_out
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.final_bn = nn.BatchNorm1d(c_in)
        self.final_relu = nn.ReLU()
        self.projection = _conv(c_in, cfg.feature_dim, cfg.kernel_size)
        self.out_bn = nn.BatchNorm1d(cfg.feature_dim)
        self.out_relu = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        x = self.out_relu(self.out_bn(self.projection(self.final_relu(self.final_bn(x)))))
        return x.mean(dim=2)


class DownstreamHead(nn.Module):
    """FC-512 -> ReLU -> softmax readout"""

    def __init__(self, feature_dim: int, n_classes: int, hidden: int = HIDDEN_WIDTH):
        super().__init__()
        self.hidden = nn.Linear(feature_dim, hidden)
        self.relu = nn.ReLU()
        self.readout = nn.Linear(hidden, n_classes)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.readout(self.relu(self.hidden(features)))


class HarNet(nn.Module):
    """Shared trunk with one binary head per pretext task and an optional activity classifier"""

    def __init__(self, cfg: NetConfig, n_classes: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg)
        self.pretext_heads = nn.ModuleDict({task: nn.Linear(cfg.feature_dim, 2) for task in TASKS})
        self.classifier: Optional[DownstreamHead] = None
        self.trunk_frozen = False
        if n_classes is not None:
            self.classifier = DownstreamHead(cfg.feature_dim, n_classes)

    @property
    def n_classes(self) -> Optional[int]:
        return None if self.classifier is None else self.classifier.readout.out_features

    @property
    def head_names(self) -> List[str]:
        names = list(self.pretext_heads.keys())
        if self.classifier is not None:
            names.append(ACTIVITY_HEAD)
        return names

    def head(self, name: str) -> nn.Module:
        if name == ACTIVITY_HEAD and self.classifier is not None:
            return self.classifier
        if name in self.pretext_heads:
            return self.pretext_heads[name]
        raise ShapeError(f"Network has no head {name!r}. Attached: {self.head_names}")

    def freeze_trunk(self, frozen: bool = True):
        """Frozen trunk parameters get no gradients and BN running stats stay fixed"""
        self.trunk_frozen = frozen
        for p in self.trunk.parameters():
            p.requires_grad_(not frozen)
        self.train(self.training)
        return self

    def train(self, mode: bool = True):
        super().train(mode)
        if self.trunk_frozen:
            self.trunk.eval()
        return self

    def forward(
        self, x: torch.Tensor, heads: Optional[Iterable[str]] = None
    ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        features = self.trunk(x)
        names = self.head_names if heads is None else list(heads)
        return features, {name: self.head(name)(features) for name in names}


def _init_weights(net: nn.Module):
    for m in net.modules():
        if isinstance(m, (nn.Conv1d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm1d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def _seed_of(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return torch_seed(seed)
    return int(seed)


def build_network(cfg: NetConfig, seed=0, n_classes: Optional[int] = None) -> HarNet:
    """
    Build and He-initialise a network.

    Args:
        cfg: Network configuration
        seed: int or numpy Generator; equal seeds give bit-identical parameters
        n_classes: Attach an activity classifier with this many classes

    Returns:
        HarNet in train mode
    """
    with seeded_torch(_seed_of(seed)):
        net = HarNet(cfg, n_classes)
        _init_weights(net)
    logger.debug(f"Built network with {sum(p.numel() for p in net.parameters())} parameters")
    return net


def attach_classifier(net: HarNet, n_classes: int, seed=0) -> HarNet:
    """Attach a freshly initialised FC-512 + readout head"""
    if n_classes < 2:
        raise LabelError(f"A classifier needs at least 2 classes, got {n_classes}")
    with seeded_torch(_seed_of(seed)):
        head = DownstreamHead(net.cfg.feature_dim, n_classes)
        _init_weights(head)
    net.classifier = head.to(next(net.trunk.parameters()).dtype)
    return net


def parameter_count(cfg: NetConfig) -> int:
    """Trunk + pretext heads + FC-512 layer; the dataset-sized readout is excluded"""
    with seeded_torch(0):
        net = HarNet(cfg, n_classes=2)
    total = sum(p.numel() for p in net.parameters())
    return total - sum(p.numel() for p in net.classifier.readout.parameters())


# =====================================================
# FORWARD / LOSS
# =====================================================
def windows_to_tensor(windows: Sequence[SignalWindow]) -> torch.Tensor:
    return torch.from_numpy(np.stack([w.samples for w in windows]).astype(np.float32))


def as_batch(batch, cfg: NetConfig) -> torch.Tensor:
    if not isinstance(batch, torch.Tensor):
        if len(batch) and isinstance(batch[0], SignalWindow):
            batch = windows_to_tensor(batch)
        else:
            batch = torch.as_tensor(np.asarray(batch, dtype=np.float32))
    if batch.ndim != 3 or batch.shape[1] != N_CHANNELS or batch.shape[2] != cfg.input_T:
        raise ShapeError(
            f"Batch shape {tuple(batch.shape)} does not match (n, {N_CHANNELS}, {cfg.input_T})"
        )
    return batch


def forward(net: HarNet, batch, mode: str = "eval", heads: Optional[Iterable[str]] = None):
    """
    Run the network in train or eval mode.

    Returns:
        (features batch x feature_dim, {head: logits})
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_batch(batch, net.cfg).to(next(net.parameters()).dtype)
    net.train(mode == "train")
    with torch.no_grad() if mode == "eval" else nullcontext():
        return net(x, heads)


def head_logits(net: nn.Module, x: torch.Tensor, heads: Sequence[str]) -> Dict[str, torch.Tensor]:
    """Logits per head; a plain module returning a tensor counts as a single head"""
    if isinstance(net, HarNet):
        return net(x, heads)[1]
    out = net(x)
    return {name: out for name in heads}


def loss_and_grad(
    net: nn.Module,
    batch: torch.Tensor,
    labels: Dict[str, torch.Tensor],
    active_heads: Sequence[str],
    frozen: Sequence[str] = (),
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """
    Equal-weight mean of per-head cross-entropies and its gradients.

    Args:
        net: Network in the mode the caller wants
        batch: (n, 3, T) tensor
        labels: Class-id tensor per active head
        active_heads: Heads contributing to the loss
        frozen: Parameter-name prefixes excluded from the gradients

    Returns:
        (loss, {parameter name: gradient})

    Raises:
        LabelError: If a label is outside the head's class range
    """
    if not active_heads:
        raise ValueError("loss_and_grad needs at least one active head")
    logits = head_logits(net, batch, active_heads)
    losses = []
    for name in active_heads:
        target = torch.as_tensor(labels[name], dtype=torch.long)
        n_out = logits[name].shape[1]
        if target.numel() and (target.min() < 0 or target.max() >= n_out):
            raise LabelError(f"Head {name!r}: labels must lie in [0, {n_out}), got {target.unique().tolist()}")
        losses.append(F.cross_entropy(logits[name], target))
    loss = torch.stack(losses).mean()

    trainable = [
        (n, p) for n, p in net.named_parameters()
        if p.requires_grad and not any(n.startswith(prefix) for prefix in frozen)
    ]
    grads = torch.autograd.grad(loss, [p for _, p in trainable], allow_unused=True)
    gradients = {
        n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(trainable, grads)
    }
    return float(loss.detach()), gradients


# =====================================================
# OPTIMISATION
# =====================================================
@dataclass
class AdamState:
    """Adam over a named parameter set, beta1=0.9, beta2=0.999, eps=1e-8"""
    optimizer: torch.optim.Adam
    params: Dict[str, nn.Parameter] = field(repr=False)

    @property
    def step_count(self) -> int:
        states = [self.optimizer.state[p] for p in self.params.values() if p in self.optimizer.state]
        return int(states[0]["step"]) if states else 0


def make_optimizer(net: nn.Module, lr: float = BASE_LR, frozen: Sequence[str] = ()) -> AdamState:
    params = {
        n: p for n, p in net.named_parameters()
        if p.requires_grad and not any(n.startswith(prefix) for prefix in frozen)
    }
    optimizer = torch.optim.Adam(params.values(), lr=lr, betas=(0.9, 0.999), eps=1e-8)
    return AdamState(optimizer=optimizer, params=params)


def adam_step(state: AdamState, gradients: Dict[str, torch.Tensor], lr: float) -> AdamState:
    """
    One bias-corrected Adam update.

    Raises:
        NonFiniteGradientError: If any gradient holds NaN/Inf; parameters are left untouched
    """
    offenders = {}
    for name, g in gradients.items():
        bad = ~torch.isfinite(g)
        if bad.any():
            offenders[name] = int(bad.sum())
    if offenders:
        logger.error(f"Rejecting Adam step: {offenders}")
        raise NonFiniteGradientError(offenders)

    for name, p in state.params.items():
        g = gradients.get(name)
        p.grad = None if g is None else g.detach().to(p.dtype)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    return state


def lr_schedule(
    epoch: float,
    base_lr: float = BASE_LR,
    batch_size: int = REF_BATCH,
    ref_batch: int = REF_BATCH,
    burn_in: float = BURN_IN_EPOCHS,
) -> float:
    """Linear scaling rule with a linear ramp from base_lr over burn_in epochs"""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    target = base_lr * batch_size / ref_batch
    if burn_in <= 0 or epoch >= burn_in:
        return target
    return base_lr + (target - base_lr) * epoch / burn_in


# =====================================================
# GRADIENT CHECK
# =====================================================
@dataclass
class GradCheckReport:
    per_tensor: Dict[str, float]
    overall: float

    def flagged(self, tol: float = 1e-4) -> List[str]:
        return [name for name, err in self.per_tensor.items() if err >= tol]


def gradient_check(
    cfg: Optional[NetConfig] = None,
    batch_size: int = 2,
    eps: float = 1e-6,
    seed: int = 0,
    model: Optional[nn.Module] = None,
    samples_per_tensor: int = 32,
) -> GradCheckReport:
    """
    Compare loss_and_grad against central differences at 64-bit precision.

    The error of a tensor is max |analytic - numeric| over the sampled
    coordinates divided by the larger of the two max magnitudes. ReLU kinks
    make single step sizes unreliable, so each coordinate is differenced at
    eps, eps/10 and eps/100 and the closest estimate is kept.

    Args:
        cfg: Network configuration used when no model is given
        batch_size: Windows in the random batch
        eps: Largest finite-difference step
        seed: Seeds the network, batch, labels and sampled coordinates
        model: Any module returning (features, logits) or plain logits; checked on a copy
        samples_per_tensor: Coordinates checked per parameter tensor

    Returns:
        GradCheckReport
    """
    if model is None:
        if cfg is None:
            raise ConfigError("gradient_check needs a NetConfig or a model")
        model = build_network(cfg, seed)
    net = copy.deepcopy(model).double()
    net.train()

    rng = make_rng(seed, "gradient_check")
    input_T = cfg.input_T if cfg is not None else net.cfg.input_T if isinstance(net, HarNet) else WINDOW_LENGTH
    x = torch.from_numpy(rng.normal(size=(batch_size, N_CHANNELS, input_T)))
    heads = list(TASKS) if isinstance(net, HarNet) else ["out"]
    with torch.no_grad():
        shapes = head_logits(net, x, heads)
    labels = {
        h: torch.from_numpy(rng.integers(0, shapes[h].shape[1], size=batch_size)) for h in heads
    }

    _, analytic = loss_and_grad(net, x, labels, heads)

    def loss_at() -> float:
        with torch.no_grad():
            logits = head_logits(net, x, heads)
            return float(torch.stack([F.cross_entropy(logits[h], labels[h]) for h in heads]).mean())

    params = dict(net.named_parameters())
    per_tensor = {}
    for name, grad in analytic.items():
        flat = params[name].data.view(-1)
        g = grad.reshape(-1)
        count = min(samples_per_tensor, flat.numel())
        coords = rng.choice(flat.numel(), size=count, replace=False)
        a = g[coords].numpy()
        n = np.empty(count)
        for k, i in enumerate(coords.tolist()):
            original = flat[i].item()
            best = None
            for step in (eps, eps / 10, eps / 100):
                flat[i] = original + step
                plus = loss_at()
                flat[i] = original - step
                minus = loss_at()
                estimate = (plus - minus) / (2 * step)
                if best is None or abs(estimate - a[k]) < abs(best - a[k]):
                    best = estimate
            flat[i] = original
            n[k] = best
        scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
        per_tensor[name] = float(np.abs(a - n).max() / scale)

    overall = max(per_tensor.values()) if per_tensor else 0.0
    logger.info(f"Gradient check over {len(per_tensor)} tensors: max relative error {overall:.3e}")
    return GradCheckReport(per_tensor=per_tensor, overall=overall)


# =====================================================
# EMBEDDINGS
# =====================================================
def extract_embeddings(net: HarNet, windows: torch.Tensor, batch_size: int = 256) -> np.ndarray:
    """Eval-mode trunk features for every window"""
    net.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(windows), batch_size):
            x = as_batch(windows[start:start + batch_size], net.cfg)
            chunks.append(net.trunk(x.to(next(net.parameters()).dtype)).double().numpy())
    if not chunks:
        return np.zeros((0, net.cfg.feature_dim))
    return np.concatenate(chunks)
