"""
Gradient-based comparators: saliency, guided backpropagation, integrated gradients
"""
import logging
from typing import Optional

import numpy as np
import torch
from torch import nn

from base.lrp import RelevanceMap
from base.neural import head_logits

logger = logging.getLogger(__name__)


def _input(net: nn.Module, window) -> torch.Tensor:
    if hasattr(window, "samples"):
        window = window.samples
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(np.asarray(window) if not isinstance(window, torch.Tensor) else window).to(dtype)
    return x.unsqueeze(0) if x.ndim == 2 else x


def _target_output(net: nn.Module, x: torch.Tensor, head: str, target: int) -> torch.Tensor:
    """Explained logit for every row of x"""
    return head_logits(net, x, [head])[head][:, target]


def _input_gradient(net: nn.Module, x: torch.Tensor, head: str, target: int):
    x = x.detach().requires_grad_(True)
    out = _target_output(net, x, head, target)
    (grad,) = torch.autograd.grad(out.sum(), x)
    return grad.detach(), float(out[0].detach())


def saliency(net: nn.Module, window, head: str = "aot", target: int = 1) -> RelevanceMap:
    """|d logit / d x_i|"""
    net.eval()
    grad, output = _input_gradient(net, _input(net, window), head, target)
    return RelevanceMap(grad[0].abs().double().numpy(), head, int(target), "saliency", output)


def guided_backprop(net: nn.Module, window, head: str = "aot", target: int = 1) -> RelevanceMap:
    """Input gradient with every ReLU passing back only non-negative gradients at active units"""
    net.eval()
    handles = [
        m.register_full_backward_hook(lambda module, grad_in, grad_out: (grad_in[0].clamp(min=0),))
        for m in net.modules() if isinstance(m, nn.ReLU)
    ]
    try:
        grad, output = _input_gradient(net, _input(net, window), head, target)
    finally:
        for h in handles:
            h.remove()
    return RelevanceMap(grad[0].double().numpy(), head, int(target), "gbp", output)


def integrated_gradients(
    net: nn.Module,
    window,
    head: str = "aot",
    target: int = 1,
    steps: int = 256,
    baseline: Optional[np.ndarray] = None,
    batch_size: int = 64,
) -> RelevanceMap:
    """
    Midpoint Riemann sum of the path integral from baseline (zero window by
    default) to the input, so that sum(R) ~= f(x) - f(baseline).
    """
    if steps < 1:
        raise ValueError(f"integrated_gradients needs steps >= 1, got {steps}")
    net.eval()
    x = _input(net, window)
    base = torch.zeros_like(x) if baseline is None else _input(net, baseline)
    delta = x - base
    alphas = (torch.arange(steps, dtype=x.dtype) + 0.5) / steps

    total = torch.zeros_like(x[0])
    for start in range(0, steps, batch_size):
        a = alphas[start:start + batch_size].view(-1, 1, 1)
        path = base + a * delta
        grad, _ = _input_gradient(net, path, head, target)
        total += grad.sum(dim=0)

    with torch.no_grad():
        output = float(_target_output(net, x, head, target)[0])
    scores = (total / steps * delta[0]).double().numpy()
    return RelevanceMap(scores, head, int(target), "ig", output)
