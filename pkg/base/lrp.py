"""
Layer-wise relevance propagation for HarNet and plain sequential models.

Batch norms are canonized into per-channel affine layers, then relevance is
pushed backwards with the gradient formulation of the LRP-0 / epsilon / gamma
rules. Residual sums split relevance in proportion to each branch's
contribution.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn

from base.errors import CanonizationError
from base.neural import ACTIVITY_HEAD, HarNet, PreActBlock
from base.signal_core import CHANNEL_NAMES

logger = logging.getLogger(__name__)


class LrpMethod(str, Enum):
    LRP_0 = "lrp-0"
    LRP_EPS = "lrp-eps"
    LRP_CMP = "lrp-cmp"


class LrpConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: LrpMethod = LrpMethod.LRP_CMP
    gamma: float = Field(0.25, ge=0)
    # composite schedule over stages 2..n
    epsilons: Tuple[float, ...] = (1e-9, 1e-3, 10.0)
    # flat rule for LRP-eps
    epsilon: float = Field(1e-3, gt=0)

    @field_validator("epsilons")
    @classmethod
    def _ascending(cls, v):
        if not v:
            raise ValueError("epsilons must not be empty")
        if any(e <= 0 for e in v) or any(b < a for a, b in zip(v, v[1:])):
            raise ValueError(f"epsilons must be positive and ascending, got {v}")
        return tuple(v)


@dataclass(frozen=True, eq=False)
class RelevanceMap:
    scores: np.ndarray
    head: str
    target: int
    method: str
    output: float

    @property
    def total(self) -> float:
        return float(self.scores.sum())

    def timestep_relevance(self) -> np.ndarray:
        return self.scores.sum(axis=0)

    def to_frame(self) -> pd.DataFrame:
        C, T = self.scores.shape
        return pd.DataFrame({
            "t": np.tile(np.arange(T), C),
            "channel": np.repeat(CHANNEL_NAMES[:C], T),
            "value": self.scores.reshape(-1),
        })


@dataclass(frozen=True)
class Rule:
    epsilon: float = 0.0
    gamma: float = 0.0


@dataclass
class LrpTrace:
    """
    Relevance in flight after each propagation step.

    excess holds, for every rule application, the largest amount by which the
    relevance an output neuron sends down exceeds the relevance it received.
    The epsilon rule keeps it at or below zero on a network without additive terms.
    """
    steps: List[Tuple[str, float]] = field(default_factory=list)
    excess: List[Tuple[str, float]] = field(default_factory=list)

    def record(self, name: str, *relevances: torch.Tensor):
        self.steps.append((name, float(sum(r.sum() for r in relevances))))

    def record_messages(self, name: str, sent: torch.Tensor, received: torch.Tensor):
        self.excess.append((name, float((sent.abs() - received.abs()).max())))

    def sums(self) -> np.ndarray:
        return np.array([s for _, s in self.steps])

    def max_excess(self) -> float:
        return max((e for _, e in self.excess), default=0.0)


# =====================================================
# CANONIZATION
# =====================================================
@dataclass
class Affine:
    scale: torch.Tensor
    shift: torch.Tensor

    def __call__(self, a: torch.Tensor) -> torch.Tensor:
        shape = (1, -1) + (1,) * (a.ndim - 2)
        return a * self.scale.view(shape) + self.shift.view(shape)


def canonize(bn: nn.BatchNorm1d) -> Affine:
    """Fold eval-mode batch-norm statistics into scale / shift"""
    if bn.training:
        raise CanonizationError("LRP needs an eval-mode network; batch norm is in training mode")
    if bn.running_mean is None or bn.running_var is None:
        raise CanonizationError("Batch norm without running statistics cannot be canonized")
    weight = bn.weight if bn.weight is not None else torch.ones_like(bn.running_var)
    bias = bn.bias if bn.bias is not None else torch.zeros_like(bn.running_mean)
    scale = weight / torch.sqrt(bn.running_var + bn.eps)
    return Affine(scale=scale.detach(), shift=(bias - bn.running_mean * scale).detach())


# =====================================================
# RULES
# =====================================================
def _stabilize(z: torch.Tensor, epsilon: float) -> torch.Tensor:
    return z + epsilon * torch.where(z >= 0, torch.ones_like(z), -torch.ones_like(z))


def _divide(R: torch.Tensor, z: torch.Tensor, epsilon: float) -> torch.Tensor:
    denom = _stabilize(z, epsilon)
    zero = denom == 0
    return torch.where(zero, torch.zeros_like(R), R / torch.where(zero, torch.ones_like(denom), denom))


def _propagate(
    fn: Callable, a: torch.Tensor, R: torch.Tensor, epsilon: float,
    trace: Optional[LrpTrace] = None, name: str = "",
) -> torch.Tensor:
    """R_in = a * d/da [fn(a) . (R / stabilize(fn(a)))]"""
    a = a.detach().requires_grad_(True)
    z = fn(a)
    s = _divide(R, z.detach(), epsilon)
    (c,) = torch.autograd.grad(z, a, grad_outputs=s)
    if trace is not None:
        # fn is affine in a, so neuron k hands down (z_k - fn(0)_k) * s_k in total
        with torch.no_grad():
            sent = (z.detach() - fn(torch.zeros_like(a))) * s
        trace.record_messages(name, sent, R)
    return (a * c).detach()


def _gamma(w: torch.Tensor, gamma: float) -> torch.Tensor:
    return w + gamma * w.clamp(min=0)


def conv_relevance(
    conv: nn.Conv1d, a: torch.Tensor, R: torch.Tensor, rule: Rule,
    trace: Optional[LrpTrace] = None, name: str = "",
) -> torch.Tensor:
    weight, bias = conv.weight, conv.bias
    if rule.gamma > 0:
        weight = _gamma(weight, rule.gamma)
        bias = None if bias is None else _gamma(bias, rule.gamma)
    fn = lambda x: F.conv1d(x, weight, bias, conv.stride, conv.padding, conv.dilation, conv.groups)
    return _propagate(fn, a, R, rule.epsilon, trace, name)


def linear_relevance(
    linear: nn.Linear, a: torch.Tensor, R: torch.Tensor, rule: Rule,
    trace: Optional[LrpTrace] = None, name: str = "",
) -> torch.Tensor:
    weight, bias = linear.weight, linear.bias
    if rule.gamma > 0:
        weight = _gamma(weight, rule.gamma)
        bias = None if bias is None else _gamma(bias, rule.gamma)
    return _propagate(lambda x: F.linear(x, weight, bias), a, R, rule.epsilon, trace, name)


def affine_relevance(
    affine: Affine, a: torch.Tensor, R: torch.Tensor, rule: Rule,
    trace: Optional[LrpTrace] = None, name: str = "",
) -> torch.Tensor:
    return _propagate(affine, a, R, rule.epsilon, trace, name)


def pool_relevance(
    a: torch.Tensor, R: torch.Tensor, rule: Rule, trace: Optional[LrpTrace] = None, name: str = ""
) -> torch.Tensor:
    return _propagate(lambda x: x.mean(dim=-1), a, R, rule.epsilon, trace, name)


def split_residual(
    skip: torch.Tensor, branch: torch.Tensor, R: torch.Tensor, rule: Rule,
    trace: Optional[LrpTrace] = None, name: str = "",
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Proportional split of a sum node; an exactly zero sum splits 50/50"""
    denom = _stabilize(skip + branch, rule.epsilon)
    zero = denom == 0
    ratio = R / torch.where(zero, torch.ones_like(denom), denom)
    half = R / 2
    R_skip, R_branch = torch.where(zero, half, skip * ratio), torch.where(zero, half, branch * ratio)
    if trace is not None:
        trace.record_messages(name, R_skip + R_branch, R)
    return R_skip, R_branch


# =====================================================
# RULE ASSIGNMENT
# =====================================================
def rule_for(section: str, cfg: LrpConfig, n_stages: int) -> Rule:
    """
    section is "stem", "stage<k>" (1-based), "projection", "pool" or "head".
    """
    if cfg.method == LrpMethod.LRP_0:
        return Rule()
    if cfg.method == LrpMethod.LRP_EPS:
        return Rule(epsilon=cfg.epsilon)
    if section in ("stem", "stage1"):
        return Rule(gamma=cfg.gamma)
    if section.startswith("stage"):
        k = int(section[len("stage"):])
        index = min(len(cfg.epsilons) - 1, (k - 2) * len(cfg.epsilons) // max(1, n_stages - 1))
        return Rule(epsilon=cfg.epsilons[index])
    if section == "projection":
        return Rule(epsilon=cfg.epsilons[-1])
    return Rule()


# =====================================================
# HARNET
# =====================================================
def _head_backward(net: HarNet, head: str, f: torch.Tensor, R: torch.Tensor, rule: Rule, trace: LrpTrace):
    module = net.head(head)
    if head == ACTIVITY_HEAD:
        with torch.no_grad():
            hidden = module.hidden(f)
        R_hidden = linear_relevance(module.readout, module.relu(hidden), R, rule, trace, "head.readout")
        trace.record("head.readout", R_hidden)
        R = linear_relevance(module.hidden, f, R_hidden, rule, trace, "head.hidden")
        trace.record("head.hidden", R)
        return R
    R = linear_relevance(module, f, R, rule, trace, "head")
    trace.record("head", R)
    return R


def _block_backward(
    block: PreActBlock, x: torch.Tensor, R: torch.Tensor, rule: Rule, affine_rule: Rule, name: str, trace: LrpTrace
) -> torch.Tensor:
    aff1, aff2 = canonize(block.bn1), canonize(block.bn2)
    with torch.no_grad():
        a = F.relu(aff1(x))
        c1 = block.conv1(a)
        b = F.relu(aff2(c1))
        y = block.conv2(b)
        skip = x if block.shortcut is None else block.shortcut(a)

    R_skip, R_y = split_residual(skip, y, R, affine_rule, trace, f"{name}.split")
    trace.record(f"{name}.split", R_skip, R_y)
    R_b = conv_relevance(block.conv2, b, R_y, rule, trace, f"{name}.conv2")
    trace.record(f"{name}.conv2", R_skip, R_b)
    R_c1 = affine_relevance(aff2, c1, R_b, affine_rule, trace, f"{name}.bn2")
    trace.record(f"{name}.bn2", R_skip, R_c1)
    R_a = conv_relevance(block.conv1, a, R_c1, rule, trace, f"{name}.conv1")
    trace.record(f"{name}.conv1", R_skip, R_a)
    if block.shortcut is not None:
        R_a = R_a + conv_relevance(block.shortcut, a, R_skip, rule, trace, f"{name}.shortcut")
        trace.record(f"{name}.shortcut", R_a)
        R_x = affine_relevance(aff1, x, R_a, affine_rule, trace, f"{name}.bn1")
    else:
        R_x = R_skip + affine_relevance(aff1, x, R_a, affine_rule, trace, f"{name}.bn1")
    trace.record(f"{name}.bn1", R_x)
    return R_x


def _lrp_harnet(net: HarNet, x: torch.Tensor, head: str, target: int, cfg: LrpConfig, trace: LrpTrace):
    trunk = net.trunk
    n_stages = len(trunk.stages)
    with torch.no_grad():
        inputs = []
        h = trunk.stem(x)
        for stage in trunk.stages:
            for block in stage:
                inputs.append(h)
                h = block(h)
        final_aff, out_aff = canonize(trunk.final_bn), canonize(trunk.out_bn)
        p = F.relu(final_aff(h))
        q = trunk.projection(p)
        r = F.relu(out_aff(q))
        f = r.mean(dim=-1)
        logits = net.head(head)(f)
    if not 0 <= target < logits.shape[1]:
        raise ValueError(f"target {target} outside head {head!r} with {logits.shape[1]} classes")
    output = logits[0, target]
    R = torch.zeros_like(logits)
    R[0, target] = output
    trace.record("output", R)

    R = _head_backward(net, head, f, R, rule_for("head", cfg, n_stages), trace)
    R = pool_relevance(r, R, rule_for("pool", cfg, n_stages), trace, "pool")
    trace.record("pool", R)
    projection_rule = rule_for("projection", cfg, n_stages)
    R = affine_relevance(out_aff, q, R, Rule(epsilon=projection_rule.epsilon), trace, "out_bn")
    trace.record("out_bn", R)
    R = conv_relevance(trunk.projection, p, R, projection_rule, trace, "projection")
    trace.record("projection", R)

    last_stage_rule = rule_for(f"stage{n_stages}", cfg, n_stages)
    R = affine_relevance(final_aff, h, R, Rule(epsilon=last_stage_rule.epsilon), trace, "final_bn")
    trace.record("final_bn", R)

    blocks = [(si, bi, block) for si, stage in enumerate(trunk.stages) for bi, block in enumerate(stage)]
    for (si, bi, block), block_in in zip(reversed(blocks), reversed(inputs)):
        rule = rule_for(f"stage{si + 1}", cfg, n_stages)
        R = _block_backward(block, block_in, R, rule, Rule(epsilon=rule.epsilon), f"stage{si + 1}.{bi}", trace)

    R = conv_relevance(trunk.stem, x, R, rule_for("stem", cfg, n_stages), trace, "stem")
    trace.record("stem", R)
    return R, float(output)


# =====================================================
# SEQUENTIAL MODELS
# =====================================================
def _lrp_sequential(model: nn.Module, x: torch.Tensor, target: int, cfg: LrpConfig, trace: LrpTrace):
    layers = list(model) if isinstance(model, nn.Sequential) else [model]
    inputs = []
    h = x
    with torch.no_grad():
        for layer in layers:
            if not isinstance(layer, (nn.Linear, nn.Conv1d, nn.ReLU, nn.Flatten, nn.BatchNorm1d)):
                raise CanonizationError(f"LRP cannot canonize layer type {type(layer).__name__}")
            inputs.append(h)
            h = canonize(layer)(h) if isinstance(layer, nn.BatchNorm1d) else layer(h)
    output = h[0, target]
    R = torch.zeros_like(h)
    R[0, target] = output
    trace.record("output", R)
    rule = Rule() if cfg.method == LrpMethod.LRP_0 else Rule(epsilon=cfg.epsilon)
    for i in reversed(range(len(layers))):
        layer, a = layers[i], inputs[i]
        if isinstance(layer, nn.Linear):
            R = linear_relevance(layer, a, R, rule, trace, f"layer{i}")
        elif isinstance(layer, nn.Conv1d):
            R = conv_relevance(layer, a, R, rule, trace, f"layer{i}")
        elif isinstance(layer, nn.BatchNorm1d):
            R = affine_relevance(canonize(layer), a, R, rule, trace, f"layer{i}")
        elif isinstance(layer, nn.Flatten):
            R = R.reshape(a.shape)
        trace.record(f"layer{i}", R)
    return R, float(output)


# =====================================================
# ENTRY POINT
# =====================================================
def lrp(
    net: nn.Module,
    window: np.ndarray | torch.Tensor,
    head: str = "aot",
    target: int = 1,
    cfg: LrpConfig = LrpConfig(),
    trace: Optional[LrpTrace] = None,
) -> RelevanceMap:
    """
    Explain one output logit of an eval-mode network.

    Args:
        net: HarNet or a sequential stack of Linear / Conv1d / ReLU / Flatten / BatchNorm1d
        window: (3, T) samples
        head: Explained head (ignored for sequential models)
        target: Explained class of that head
        cfg: Rule configuration
        trace: Receives the relevance total after every step when given

    Returns:
        RelevanceMap with scores aligned to the window

    Raises:
        CanonizationError: On a training-mode network or an unsupported layer
    """
    if net.training:
        raise CanonizationError("LRP needs an eval-mode network; call net.eval() first")
    trace = trace if trace is not None else LrpTrace()
    dtype = next(net.parameters()).dtype
    if hasattr(window, "samples"):
        window = window.samples
    x = torch.as_tensor(np.asarray(window) if not isinstance(window, torch.Tensor) else window).to(dtype)
    x = x.unsqueeze(0) if x.ndim == 2 else x
    if isinstance(net, HarNet):
        R, output = _lrp_harnet(net, x, head, target, cfg, trace)
    else:
        R, output = _lrp_sequential(net, x, target, cfg, trace)
    scores = R[0].double().numpy()
    if not np.isfinite(scores).all():
        raise CanonizationError(f"LRP produced non-finite relevance for head {head!r}")
    return RelevanceMap(scores=scores, head=head, target=int(target), method=cfg.method.value, output=output)
