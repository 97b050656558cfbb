from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass

from ..geometry import Scheme
from ..losses import LocationLoss, LossConfig
from ..matching import Strategy
from .extractors import EXTRACTORS

MAX_PROPOSALS = 300
SMALL_M = 64
LARGE_M = 128


class MetaArch(str, enum.Enum):
    SSD = "ssd"
    FASTER_RCNN = "faster_rcnn"
    RFCN = "rfcn"


def _tuple(x):
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class DetectorConfig:
    """One point in the sweep space.

    Anchor base sizes are tied to feature strides: SSD layer ``l`` uses
    ``stride_l * ssd_base_factor`` pixels, the RPN uses ``stride * rpn_base_factor``.
    ``head_depth > 0`` inserts a trainable 3x3 ReLU layer of that width before
    each dense predictor, which then becomes 1x1.
    """

    meta_arch: MetaArch = MetaArch.SSD
    extractor: str = "dense_tiny"
    resolution: int = SMALL_M
    stride: int = 16
    num_proposals: int = MAX_PROPOSALS
    num_classes: int = 3
    box_scheme: Scheme = Scheme.SCALED_RESIDUAL
    matcher: Strategy = Strategy.ARGMAX
    alpha: float = 1.0
    beta: float = 1.0
    location_loss: LocationLoss = LocationLoss.SMOOTH_L1
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    ssd_anchor_scales: tuple[float, ...] = (1.0, 1.5)
    ssd_base_factor: float = 1.0
    ssd_extra_layers: int = 2
    head_depth: int = 0
    rpn_anchor_scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    rpn_base_factor: float = 2.0
    rpn_nms_threshold: float = 0.7
    crop_size: int = 8
    ps_bins: int = 3
    ps_samples: int = 2
    weight_seed: int = 0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("meta_arch", MetaArch(self.meta_arch))
        set_("box_scheme", Scheme(self.box_scheme))
        set_("matcher", Strategy(self.matcher))
        set_("location_loss", LocationLoss(self.location_loss))
        for name in ("anchor_ratios", "ssd_anchor_scales", "rpn_anchor_scales"):
            set_(name, _tuple(getattr(self, name)))
        if self.extractor not in EXTRACTORS:
            raise ValueError(f"unknown extractor {self.extractor!r}")
        if self.stride not in (8, 16):
            raise ValueError("stride must be 8 or 16")
        if self.resolution < 32 or self.resolution % 16:
            raise ValueError("resolution must be a multiple of 16, at least 32")
        if not 1 <= self.num_proposals <= MAX_PROPOSALS:
            raise ValueError(f"num_proposals must lie in [1, {MAX_PROPOSALS}]")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.ps_bins < 1 or self.ps_samples < 1:
            raise ValueError("ps_bins and ps_samples must be >= 1")
        if self.crop_size < 2 or self.crop_size % 2:
            raise ValueError("crop_size must be even and >= 2")
        if self.head_depth < 0:
            raise ValueError("head_depth must be >= 0")
        if self.ssd_extra_layers < 0:
            raise ValueError("ssd_extra_layers must be >= 0")

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.alpha, self.beta, self.location_loss, self.num_classes)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.value if isinstance(v, enum.Enum) else list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown detector config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "DetectorConfig":
        return dataclasses.replace(self, **changes)

    @property
    def config_id(self) -> str:
        d = self.to_dict()
        if self.meta_arch is MetaArch.SSD:
            d.pop("num_proposals")
        digest = hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:8]
        parts = [self.meta_arch.value, self.extractor, f"M{self.resolution}", f"s{self.stride}"]
        if self.meta_arch is not MetaArch.SSD:
            parts.append(f"n{self.num_proposals}")
        return "-".join(parts + [digest])
