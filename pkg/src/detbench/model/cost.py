"""Analytic FLOPs / memory / parameter accounting for a detector configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .layers import BYTES_PER_ELEMENT


@dataclass(frozen=True)
class LayerCost:
    name: str
    flops: int
    activation_bytes: int
    params: int
    per_proposal: bool = False


@dataclass(frozen=True)
class CostReport:
    """Costs of one forward pass; per-proposal rows are counted once per proposal.

    Memory is total usage (every activation plus every parameter, summed),
    not peak usage.
    """

    layers: tuple[LayerCost, ...] = field(default_factory=tuple)
    num_proposals: int = 0
    input_bytes: int = 0

    @property
    def fixed_flops(self) -> int:
        return sum(l.flops for l in self.layers if not l.per_proposal)

    @property
    def per_proposal_flops(self) -> int:
        return sum(l.flops for l in self.layers if l.per_proposal)

    @property
    def total_flops(self) -> int:
        return self.fixed_flops + self.num_proposals * self.per_proposal_flops

    @property
    def params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def fixed_bytes(self) -> int:
        act = sum(l.activation_bytes for l in self.layers if not l.per_proposal)
        return self.input_bytes + act + self.params * BYTES_PER_ELEMENT

    @property
    def per_proposal_bytes(self) -> int:
        return sum(l.activation_bytes for l in self.layers if l.per_proposal)

    @property
    def memory_bytes(self) -> int:
        return self.fixed_bytes + self.num_proposals * self.per_proposal_bytes

    def with_proposals(self, n: int) -> "CostReport":
        return CostReport(self.layers, n, self.input_bytes)

    def summary(self) -> dict:
        return {
            "flops": self.total_flops,
            "fixed_flops": self.fixed_flops,
            "per_proposal_flops": self.per_proposal_flops,
            "memory_bytes": self.memory_bytes,
            "params": self.params,
            "num_proposals": self.num_proposals,
        }


def shape_bytes(shape) -> int:
    return math.prod(shape) * BYTES_PER_ELEMENT


def cost_model(cfg, num_proposals: int | None = None) -> CostReport:
    """Cost of ``cfg`` without running it. ``num_proposals`` defaults to the config's."""
    from .detector import Detector

    return Detector(cfg).cost(num_proposals)
