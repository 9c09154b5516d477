"""All-pairs inter-frame similarity volumes and the multi-scale pyramid.

A volume for level pair (l, k) holds the channel dot product between every
pixel of the current frame's level-l features and every pixel of the
previous frame's level-k features, so its extents are
``H/2^l x W/2^l x H/2^k x W/2^k``. Volumes are optionally scaled by
``1/sqrt(channels)`` to keep magnitudes stable across channel widths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics.tensor import ShapeError, Tensor, record

# Cap on total volume elements per pyramid; all-pairs construction is
# O((HW)^2) and silently ballooning at high resolution helps nobody.
DEFAULT_MAX_VOLUME_ELEMENTS = 1 << 26


class MemoryBudgetError(RuntimeError):
    """Raised when a pyramid would exceed the configured element budget."""


@dataclass
class CorrelationVolume:
    level_pair: tuple[int, int]
    values: Tensor  # (H_l, W_l, H_k, W_k)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class CorrelationPyramid:
    """Complete map of volumes over the configured (l, k) pairs."""

    volumes: dict
    num_levels: int

    def volume(self, l: int, k: int) -> CorrelationVolume:
        return self.volumes[(l, k)]

    def total_elements(self) -> int:
        return sum(int(np.prod(v.shape)) for v in self.volumes.values())


def correlate_pair(g_t_l: Tensor, g_prev_k: Tensor, scale: bool = True,
                   level_pair: tuple[int, int] = (0, 0)) -> CorrelationVolume:
    """Dot-product similarity of every pixel pair between two feature maps."""
    if g_t_l.data.ndim != 3 or g_prev_k.data.ndim != 3:
        raise ShapeError(f"feature maps must be (H,W,C), got {g_t_l.shape} and {g_prev_k.shape}")
    ha, wa, ca = g_t_l.shape
    hb, wb, cb = g_prev_k.shape
    if ca != cb:
        raise ShapeError(f"channel mismatch: {g_t_l.shape} vs {g_prev_k.shape}")
    factor = 1.0 / np.sqrt(ca) if scale else 1.0

    amat = g_t_l.data.reshape(ha * wa, ca)
    bmat = g_prev_k.data.reshape(hb * wb, cb)
    out = (amat @ bmat.T).reshape(ha, wa, hb, wb)
    if scale:
        out = out * factor

    def backward(g):
        gmat = g.reshape(ha * wa, hb * wb) * factor
        da = (gmat @ bmat).reshape(ha, wa, ca)
        db = (gmat.T @ amat).reshape(hb, wb, cb)
        return da, db

    values = record(out, (g_t_l, g_prev_k), backward)
    return CorrelationVolume(level_pair=level_pair, values=values)


def validate_pyramid_levels(levels) -> None:
    """Feature pyramid levels must halve spatially (integer division)."""
    for idx in range(1, len(levels)):
        ph, pw = levels[idx - 1].shape[:2]
        h, w = levels[idx].shape[:2]
        if (ph // 2, pw // 2) != (h, w):
            raise ShapeError(
                f"pyramid level {idx} has extent {h}x{w}, expected {ph // 2}x{pw // 2} from level {idx - 1}")


def build_pyramid(g_t_levels, g_prev_levels, pairs=None, scale: bool = True,
                  max_elements: int = DEFAULT_MAX_VOLUME_ELEMENTS) -> CorrelationPyramid:
    """Construct one volume per (l, k) pair from two same-shape pyramids."""
    g_t_levels = list(g_t_levels)
    g_prev_levels = list(g_prev_levels)
    if len(g_t_levels) != len(g_prev_levels):
        raise ShapeError(f"level count mismatch: {len(g_t_levels)} vs {len(g_prev_levels)}")
    validate_pyramid_levels(g_t_levels)
    validate_pyramid_levels(g_prev_levels)

    m1 = len(g_t_levels)
    if pairs is None:
        pairs = [(l, k) for l in range(m1) for k in range(m1)]

    total = 0
    for l, k in pairs:
        ha, wa = g_t_levels[l].shape[:2]
        hb, wb = g_prev_levels[k].shape[:2]
        total += ha * wa * hb * wb
    if total > max_elements:
        raise MemoryBudgetError(
            f"correlation pyramid needs {total} elements, budget is {max_elements}")

    volumes = {}
    for l, k in pairs:
        volumes[(l, k)] = correlate_pair(g_t_levels[l], g_prev_levels[k], scale=scale, level_pair=(l, k))
    return CorrelationPyramid(volumes=volumes, num_levels=m1)


# ---------------------------------------------------------------------------
# debug dump: 4 extents as little-endian uint32, then float64 LE data

def dump_volume(volume: CorrelationVolume, path) -> None:
    data = np.asarray(volume.values.data, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", *data.shape))
        fh.write(data.tobytes(order="C"))


def load_volume_dump(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    extents = struct.unpack("<4I", raw[:16])
    values = np.frombuffer(raw[16:], dtype="<f8")
    return values.reshape(extents)
