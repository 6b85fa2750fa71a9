"""
Explainer Factory - Dispatch attribution methods (LRP variants, saliency, GBP, IG)
"""
import logging
from enum import Enum
from typing import Optional

from torch import nn

from base.attribution import guided_backprop, integrated_gradients, saliency
from base.errors import ConfigError
from base.lrp import LrpConfig, LrpMethod, RelevanceMap, lrp

logger = logging.getLogger(__name__)


class AttributionMethod(Enum):
    """Available attribution methods"""
    LRP_0 = "lrp-0"
    LRP_EPS = "lrp-eps"
    LRP_CMP = "lrp-cmp"
    SALIENCY = "saliency"
    GBP = "gbp"
    IG = "ig"


class ExplainerFactory:
    """Factory for relevance maps by method name"""

    @staticmethod
    def explain(
        method: str | AttributionMethod,
        net: nn.Module,
        window,
        head: str = "aot",
        target: int = 1,
        lrp_cfg: Optional[LrpConfig] = None,
        ig_steps: int = 256,
    ) -> RelevanceMap:
        """
        Explain one logit of a network for one window

        Args:
            method: Attribution method ('lrp-0', 'lrp-eps', 'lrp-cmp', 'saliency', 'gbp', 'ig')
            net: Eval-mode network
            window: SignalWindow or (3, T) samples
            head: Explained head
            target: Explained class
            lrp_cfg: Rule configuration for the LRP methods; the method field is overridden
            ig_steps: Path steps for integrated gradients

        Returns:
            RelevanceMap

        Raises:
            ConfigError: If the method is not supported
        """
        method = ExplainerFactory.resolve(method)

        if method in (AttributionMethod.LRP_0, AttributionMethod.LRP_EPS, AttributionMethod.LRP_CMP):
            cfg = (lrp_cfg or LrpConfig()).model_copy(update={"method": LrpMethod(method.value)})
            return lrp(net, window, head, target, cfg)

        elif method == AttributionMethod.SALIENCY:
            return saliency(net, window, head, target)

        elif method == AttributionMethod.GBP:
            return guided_backprop(net, window, head, target)

        else:
            return integrated_gradients(net, window, head, target, steps=ig_steps)

    @staticmethod
    def resolve(method: str | AttributionMethod) -> AttributionMethod:
        if isinstance(method, AttributionMethod):
            return method
        try:
            return AttributionMethod(method.lower())
        except ValueError:
            raise ConfigError(
                f"Unsupported attribution method: {method}. Supported: {', '.join(m.value for m in AttributionMethod)}"
            )


def get_attribution_method_info() -> dict:
    """Get information about available attribution methods"""
    return {
        "lrp-0": {
            "name": "LRP-0",
            "description": "Plain relevance redistribution; conserves relevance on bias-free networks",
        },
        "lrp-eps": {
            "name": "LRP-epsilon",
            "description": "LRP with one stabilising epsilon on every layer",
            "optional_params": ["epsilon"],
        },
        "lrp-cmp": {
            "name": "LRP composite",
            "description": "Gamma rule on the stem and first stage, ascending epsilons deeper, LRP-0 on the head",
            "optional_params": ["gamma", "epsilons"],
        },
        "saliency": {
            "name": "Saliency",
            "description": "Absolute input gradient of the explained logit",
        },
        "gbp": {
            "name": "Guided Backpropagation",
            "description": "Input gradient with negative gradients blocked at every ReLU",
        },
        "ig": {
            "name": "Integrated Gradients",
            "description": "Path-averaged gradient times input from a zero baseline",
            "optional_params": ["ig_steps"],
        },
    }
