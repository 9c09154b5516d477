"""Minimal anchor-free three-scale detector hosting the temporal neck.

Backbone: five stride-2 3x3 convs producing a stride-8/16/32 pyramid with
one extra 3x3 block per level (~300k parameters at default widths). Heads
are per-level: a shared hidden conv, then 1x1 classification and 1x1 box
regression (4 channels: centre offset dx/dy and log-ish width/height).
Streams are processed one frame at a time; the temporal neck sits between
the pyramid and the heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import mstf
from ..mstf import FlowState, LookupConfig
from ..numerics.ops import conv2d, leaky_relu
from ..numerics.tensor import FLOAT32, ShapeError, Tensor
from ..rng import component_rng, he_normal

STRIDES = (8, 16, 32)

# classification bias prior: start every cell at ~1% object probability
CLS_BIAS_PRIOR = -4.59511985013459


@dataclass(frozen=True)
class DetectorConfig:
    input_size: int = 256
    stem_widths: tuple = (16, 32)
    level_widths: tuple = (40, 56, 80)
    num_classes: int = 8
    lookup: LookupConfig = field(default_factory=LookupConfig)
    fusion_start_epoch: int = 4
    augment: tuple = (2.0, 0.2, 1e-4)  # degree, scale, perspective

    def __post_init__(self):
        if self.input_size % 32:
            raise ValueError(f"input_size must be a multiple of 32, got {self.input_size}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.fusion_start_epoch < 0:
            raise ValueError("fusion_start_epoch must be non-negative")
        if len(self.level_widths) != 3:
            raise ValueError(f"three pyramid widths required, got {self.level_widths}")

    def grid_shapes(self):
        return tuple((self.input_size // s, self.input_size // s) for s in STRIDES)


class Detector:
    """Parameter container plus functional forward passes."""

    def __init__(self, config: DetectorConfig, seed: int = 0, dtype=FLOAT32, with_mstf: bool = True):
        self.config = config
        self.seed = seed
        self.dtype = dtype
        self.layers = {}
        self._build(seed, dtype)
        self.mstf_params = None
        if with_mstf and config.lookup.motion_enabled:
            self.mstf_params = mstf.init_params(config.level_widths, config.lookup, seed=seed, dtype=dtype)

    # -- construction ------------------------------------------------------

    def _conv(self, name: str, kh: int, cin: int, cout: int, bias_fill: float = 0.0):
        rng = component_rng(self.seed, f"det.{name}")
        w = Tensor(he_normal(rng, (kh, kh, cin, cout), kh * kh * cin, self.dtype), requires_grad=True)
        b = Tensor(np.full(cout, bias_fill, dtype=self.dtype), requires_grad=True)
        self.layers[name] = (w, b)

    def _build(self, seed, dtype):
        s0, s1 = self.config.stem_widths
        widths = self.config.level_widths
        self._conv("stem0", 3, 3, s0)
        self._conv("stem1", 3, s0, s1)
        cin = s1
        for lvl, cw in enumerate(widths):
            self._conv(f"down{lvl}", 3, cin, cw)
            self._conv(f"block{lvl}", 3, cw, cw)
            cin = cw
        for lvl, cw in enumerate(widths):
            self._conv(f"head{lvl}.hid", 3, cw, cw)
            self._conv(f"head{lvl}.cls", 1, cw, self.config.num_classes, bias_fill=CLS_BIAS_PRIOR)
            self._conv(f"head{lvl}.box", 1, cw, 4)

    # -- parameters --------------------------------------------------------

    def named_parameters(self) -> dict:
        out = {}
        for name, (w, b) in sorted(self.layers.items()):
            out[f"det.{name}.w"] = w
            out[f"det.{name}.b"] = b
        if self.mstf_params is not None:
            out.update(self.mstf_params.named_tensors())
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def load_named(self, tensors: dict) -> None:
        for name, t in self.named_parameters().items():
            if name not in tensors:
                raise KeyError(f"checkpoint missing tensor {name}")
            if tuple(tensors[name].shape) != t.shape:
                raise ShapeError(f"{name}: checkpoint shape {tensors[name].shape} != {t.shape}")
            t.data = np.ascontiguousarray(tensors[name], dtype=self.dtype)

    # -- forward -----------------------------------------------------------

    def _apply(self, name: str, x: Tensor, stride: int = 1, padding: int = 1, act: bool = True) -> Tensor:
        w, b = self.layers[name]
        out = conv2d(x, w, b, stride=stride, padding=padding)
        return leaky_relu(out) if act else out

    def backbone(self, x: Tensor):
        t = self._apply("stem0", x, stride=2)
        t = self._apply("stem1", t, stride=2)
        levels = []
        for lvl in range(3):
            t = self._apply(f"down{lvl}", t, stride=2)
            t = self._apply(f"block{lvl}", t)
            levels.append(t)
        return levels

    def heads(self, levels):
        preds = []
        for lvl, g in enumerate(levels):
            hid = self._apply(f"head{lvl}.hid", g)
            cls = self._apply(f"head{lvl}.cls", hid, padding=0, act=False)
            box = self._apply(f"head{lvl}.box", hid, padding=0, act=False)
            preds.append((cls, box))
        return preds

    def forward_frame(self, frame, state: FlowState | None = None, fuse: bool = True):
        """One frame of one stream -> (per-level predictions, state, step info).

        Frames of a clip must come from a single stream in temporal order;
        the caller owns one state per stream.
        """
        if isinstance(frame, Tensor):
            x = frame
        else:
            # zero-centred input keeps the normalization-free stack well scaled
            x = Tensor(np.asarray(frame, dtype=self.dtype) - np.asarray(0.5, dtype=self.dtype))
        if x.shape[0] != self.config.input_size or x.shape[1] != self.config.input_size:
            raise ShapeError(f"frame shape {x.shape} does not match input_size {self.config.input_size}")
        pyramid = self.backbone(x)
        info = None
        if self.mstf_params is not None and fuse:
            if state is None:
                state = FlowState.initial()
            pyramid, state, info = mstf.step(self.mstf_params, state, pyramid)
        return self.heads(pyramid), state, info

    def forward_clip(self, frames, state: FlowState | None = None, fuse: bool = True):
        """Ordered frames of one stream -> per-frame predictions plus state."""
        preds = []
        infos = []
        for frame in frames:
            p, state, info = self.forward_frame(frame, state, fuse=fuse)
            preds.append(p)
            infos.append(info)
        return preds, state, infos
