"""Temporal fusion neck: flow-guided multi-scale lookup over the correlation
pyramid and a convolutional-GRU joint update of features and flow.

Per video stream a :class:`FlowState` persists the per-level displacement
fields and the previous frame's feature pyramid. Each step builds the
all-pairs correlation pyramid, samples a (2r+1)^2 window around every
pixel's flow-displaced position in every previous-frame level, and lets the
GRU rewrite only the motion-designated channel slice of the current
features while emitting a flow increment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import DEFAULT_MAX_VOLUME_ELEMENTS, CorrelationPyramid, build_pyramid
from .numerics.ops import GruParams, add, avgpool2x, concat, conv2d, gru_cell, mul, reshape, split, upsample2x
from .numerics.tensor import FLOAT32, ShapeError, Tensor
from .rng import component_rng, he_normal

STRIDES = (8, 16, 32)

FINE_TO_COARSE = "fine_to_coarse"
COARSE_TO_FINE = "coarse_to_fine"


@dataclass(frozen=True)
class LookupConfig:
    """Sampling and fusion knobs for the temporal neck."""

    radii: tuple = (4, 4, 4)
    flow_iterations: int = 1
    flow_levels: tuple = (8, 16, 32)  # strides receiving flow-guided fusion
    split_ratio: tuple = (3, 1)       # static:motion channel split
    corr_channels: int = 64
    scale_correlation: bool = True
    pairs: tuple | None = None        # None -> all (l, k) pairs
    interp_direction: str = FINE_TO_COARSE
    max_volume_elements: int = DEFAULT_MAX_VOLUME_ELEMENTS

    def __post_init__(self):
        if any(r < 0 for r in self.radii):
            raise ValueError(f"radii must be non-negative, got {self.radii}")
        if self.flow_iterations < 1:
            raise ValueError(f"flow_iterations must be >= 1, got {self.flow_iterations}")
        if not set(self.flow_levels) <= set(STRIDES):
            raise ValueError(f"flow_levels must be a subset of {STRIDES}, got {self.flow_levels}")
        a, b = self.split_ratio
        if a < 1 or b < 0:
            raise ValueError(f"split_ratio must be (static>=1):(motion>=0), got {self.split_ratio}")
        if self.interp_direction not in (FINE_TO_COARSE, COARSE_TO_FINE):
            raise ValueError(f"unknown interp_direction {self.interp_direction!r}")

    @property
    def num_levels(self) -> int:
        return len(self.radii)

    def window_size(self, level: int) -> int:
        return (2 * self.radii[level] + 1) ** 2

    def motion_feature_channels(self, level: int) -> int:
        return self.num_levels * self.window_size(level)

    def fused_level_indices(self) -> tuple:
        return tuple(i for i, s in enumerate(STRIDES[: self.num_levels]) if s in self.flow_levels)

    def split_channels(self, channels: int) -> tuple:
        """Contiguous (static, motion) channel counts for one level."""
        a, b = self.split_ratio
        motion = (channels * b) // (a + b)
        static = channels - motion
        if b > 0 and motion == 0:
            raise ShapeError(f"split {a}:{b} leaves no motion channels out of {channels}")
        if static == 0:
            raise ShapeError(f"split {a}:{b} leaves no static channels out of {channels}")
        return static, motion

    @property
    def motion_enabled(self) -> bool:
        return self.split_ratio[1] > 0 and bool(self.fused_level_indices())

    def interp_source(self, level: int) -> int | None:
        """Index of the already-processed adjacent level feeding this one."""
        fused = self.fused_level_indices()
        src = level - 1 if self.interp_direction == FINE_TO_COARSE else level + 1
        return src if src in fused else None

    def update_order(self) -> tuple:
        fused = self.fused_level_indices()
        return fused if self.interp_direction == FINE_TO_COARSE else tuple(reversed(fused))


@dataclass
class FlowState:
    """Per-stream recurrent state: flow fields, previous pyramid, counter."""

    flows: list | None = None
    prev_pyramid: list | None = None
    frame_count: int = 0

    @classmethod
    def initial(cls) -> "FlowState":
        return cls()

    @property
    def fresh(self) -> bool:
        return self.prev_pyramid is None

    def detached(self) -> "FlowState":
        """Cut the recorded graph at a clip boundary."""
        return FlowState(
            flows=None if self.flows is None else [f.detach() for f in self.flows],
            prev_pyramid=None if self.prev_pyramid is None else [g.detach() for g in self.prev_pyramid],
            frame_count=self.frame_count,
        )


def reset(state: FlowState) -> FlowState:
    """Zero flow, drop the previous frame, restart the counter."""
    return FlowState.initial()


@dataclass
class LevelParams:
    gru: GruParams
    flow_w: Tensor
    flow_b: Tensor
    motion_w: Tensor
    motion_b: Tensor


@dataclass
class MstfParams:
    proj_w: list
    proj_b: list
    levels: dict  # level index -> LevelParams
    config: LookupConfig
    level_channels: tuple

    def named_tensors(self, prefix: str = "mstf") -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.proj_w, self.proj_b)):
            out[f"{prefix}.proj{i}.w"] = w
            out[f"{prefix}.proj{i}.b"] = b
        for lvl, p in sorted(self.levels.items()):
            for name, t in p.gru.tensors().items():
                out[f"{prefix}.level{lvl}.gru.{name}"] = t
            out[f"{prefix}.level{lvl}.flow.w"] = p.flow_w
            out[f"{prefix}.level{lvl}.flow.b"] = p.flow_b
            out[f"{prefix}.level{lvl}.motion.w"] = p.motion_w
            out[f"{prefix}.level{lvl}.motion.b"] = p.motion_b
        return out

    def parameters(self) -> list:
        return list(self.named_tensors().values())


def gru_input_channels(config: LookupConfig, level: int) -> int:
    ch = config.motion_feature_channels(level) + 2  # looked-up samples + flow
    src = config.interp_source(level)
    if src is not None:
        ch += config.motion_feature_channels(src)
    return ch


def init_params(level_channels, config: LookupConfig, seed: int = 0, dtype=FLOAT32) -> MstfParams:
    """Create projection, GRU and head parameters for every fused level."""
    level_channels = tuple(level_channels)
    if len(level_channels) != config.num_levels:
        raise ShapeError(f"{len(level_channels)} level widths for {config.num_levels} correlation levels")
    proj_w, proj_b = [], []
    for i, ch in enumerate(level_channels):
        rng = component_rng(seed, f"mstf.proj{i}")
        proj_w.append(Tensor(he_normal(rng, (1, 1, ch, config.corr_channels), ch, dtype), requires_grad=True))
        proj_b.append(Tensor(np.zeros(config.corr_channels, dtype=dtype), requires_grad=True))

    levels = {}
    if config.split_ratio[1] > 0:
        for lvl in config.fused_level_indices():
            cm = config.split_channels(level_channels[lvl])[1]
            cin = gru_input_channels(config, lvl) + cm
            rng = component_rng(seed, f"mstf.level{lvl}")

            def gate():
                return Tensor(he_normal(rng, (3, 3, cin, cm), 9 * cin, dtype), requires_grad=True)

            gru = GruParams(
                wz=gate(), bz=Tensor(np.zeros(cm, dtype=dtype), requires_grad=True),
                wr=gate(), br=Tensor(np.zeros(cm, dtype=dtype), requires_grad=True),
                wh=gate(), bh=Tensor(np.zeros(cm, dtype=dtype), requires_grad=True),
            )
            levels[lvl] = LevelParams(
                gru=gru,
                # zero flow head: streams start with no displacement updates
                flow_w=Tensor(np.zeros((3, 3, cm, 2), dtype=dtype), requires_grad=True),
                flow_b=Tensor(np.zeros(2, dtype=dtype), requires_grad=True),
                motion_w=Tensor(he_normal(rng, (3, 3, cm, cm), 9 * cm, dtype), requires_grad=True),
                motion_b=Tensor(np.zeros(cm, dtype=dtype), requires_grad=True),
            )
    return MstfParams(proj_w=proj_w, proj_b=proj_b, levels=levels, config=config, level_channels=level_channels)


def load_into_params(params: MstfParams, tensors: dict, prefix: str = "mstf") -> None:
    for name, tensor in params.named_tensors(prefix).items():
        if name not in tensors:
            raise KeyError(f"checkpoint missing tensor {name}")
        if tuple(tensors[name].shape) != tensor.shape:
            raise ShapeError(f"{name}: checkpoint shape {tensors[name].shape} != {tensor.shape}")
        tensor.data = tensors[name].astype(tensor.dtype)


# ---------------------------------------------------------------------------
# lookup

def _window_offsets(radius: int, dtype) -> np.ndarray:
    span = np.arange(-radius, radius + 1, dtype=dtype)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=-1)  # (S, 2), dy-major


def _base_grid(height: int, width: int, dtype) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(height, dtype=dtype), np.arange(width, dtype=dtype), indexing="ij")
    return np.stack([xs, ys], axis=-1)  # (H, W, 2) as (x, y)


def lookup(pyramid: CorrelationPyramid, level: int, flow: Tensor, config: LookupConfig) -> Tensor:
    """Sample flow-displaced similarity windows from every previous-frame level.

    Returns an (H_l, W_l, num_levels * (2r+1)^2) map; previous-frame levels
    are concatenated in ascending order, each window flattened row-major.
    """
    if not np.isfinite(flow.data).all():
        raise ValueError("lookup: flow field contains non-finite values")
    radius = config.radii[level]
    height, width = flow.shape[:2]
    dtype = flow.dtype
    offsets = _window_offsets(radius, dtype).reshape(1, 1, -1, 2)
    base = _base_grid(height, width, dtype)

    centers = add(Tensor(base[:, :, None, :]), reshape(flow, (height, width, 1, 2)))
    parts = []
    for k in range(pyramid.num_levels):
        volume = pyramid.volume(level, k).values
        # flow-displaced centre scaled into level-k coordinates, window applied there
        scaled = mul(centers, Tensor(np.asarray(2.0 ** (level - k), dtype=dtype)))
        coords = add(scaled, Tensor(offsets))
        from .numerics.ops import lookup_volume
        parts.append(lookup_volume(volume, coords))
    return concat(parts, axis=-1)


# ---------------------------------------------------------------------------
# update

def update(g_t_l: Tensor, g_prev_l: Tensor, f_l: Tensor, f_lower_interp: Tensor | None,
           flow_l: Tensor, level_params: LevelParams, config: LookupConfig) -> tuple:
    """One GRU update at a level: returns (fused features, flow delta).

    ``g_prev_l`` is part of the update contract; its content reaches the GRU
    only through the looked-up similarities in ``f_l``.
    """
    channels = g_t_l.shape[2]
    static_n, motion_n = config.split_channels(channels)
    static, motion = split(g_t_l, [static_n, motion_n], axis=-1)

    pieces = [f_l]
    if f_lower_interp is not None:
        pieces.append(f_lower_interp)
    pieces.append(flow_l)
    gru_in = concat(pieces, axis=-1)

    hidden = gru_cell(motion, gru_in, level_params.gru)
    dphi = conv2d(hidden, level_params.flow_w, level_params.flow_b, stride=1, padding=1)
    transformed = conv2d(hidden, level_params.motion_w, level_params.motion_b, stride=1, padding=1)
    fused = concat([static, add(transformed, motion)], axis=-1)
    return fused, dphi


# ---------------------------------------------------------------------------
# per-frame step

@dataclass
class StepInfo:
    deltas: dict = field(default_factory=dict)  # level -> list of (H,W,2) arrays
    lookups: int = 0


def _resample_interp(f_src: Tensor, direction: str) -> Tensor:
    if direction == FINE_TO_COARSE:
        return avgpool2x(f_src)
    return upsample2x(f_src, mode="bilinear")


def step(params: MstfParams, state: FlowState, pyramid, config: LookupConfig | None = None) -> tuple:
    """Fuse one frame's pyramid and advance the stream state.

    On the first frame of a stream the input pyramid is returned untouched
    and the state is seeded with zero flow. With a zero motion share the
    neck degenerates to an exact pass-through.
    """
    config = config or params.config
    pyramid = list(pyramid)
    if len(pyramid) != config.num_levels:
        raise ShapeError(f"{len(pyramid)} pyramid levels, config expects {config.num_levels}")
    dtype = pyramid[0].dtype

    if not state.fresh:
        for lvl, (cur, prev) in enumerate(zip(pyramid, state.prev_pyramid)):
            if cur.shape != prev.shape:
                raise ShapeError(
                    f"shape drift mid-stream at level {lvl}: {cur.shape} vs stored {prev.shape}")

    if state.fresh or not config.motion_enabled:
        flows = state.flows
        if flows is None:
            flows = [Tensor(np.zeros(g.shape[:2] + (2,), dtype=dtype)) for g in pyramid]
        new_state = FlowState(flows=flows, prev_pyramid=pyramid, frame_count=state.frame_count + 1)
        return pyramid, new_state, StepInfo()

    proj_cur = [conv2d(g, params.proj_w[i], params.proj_b[i]) for i, g in enumerate(pyramid)]
    proj_prev = [conv2d(g, params.proj_w[i], params.proj_b[i]) for i, g in enumerate(state.prev_pyramid)]
    corr = build_pyramid(proj_cur, proj_prev, pairs=config.pairs,
                         scale=config.scale_correlation, max_elements=config.max_volume_elements)

    flows = list(state.flows)
    fused = list(pyramid)
    info = StepInfo(deltas={lvl: [] for lvl in config.fused_level_indices()})
    order = config.update_order()
    for _ in range(config.flow_iterations):
        round_feats = {}
        for lvl in order:
            f_l = lookup(corr, lvl, flows[lvl], config)
            info.lookups += 1
            round_feats[lvl] = f_l
            src = config.interp_source(lvl)
            interp = _resample_interp(round_feats[src], config.interp_direction) if src in round_feats else None
            fused[lvl], dphi = update(fused[lvl], state.prev_pyramid[lvl], f_l, interp,
                                      flows[lvl], params.levels[lvl], config)
            flows[lvl] = add(flows[lvl], dphi)
            info.deltas[lvl].append(np.array(dphi.data, copy=True))

    new_state = FlowState(flows=flows, prev_pyramid=pyramid, frame_count=state.frame_count + 1)
    return fused, new_state, info
