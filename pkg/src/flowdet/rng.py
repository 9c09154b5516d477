"""Deterministic per-component random streams.

Seeding each named component independently keeps parameter draws stable
when unrelated components are added or removed (e.g. a network with the
temporal neck deleted still initializes its backbone identically).
"""

from __future__ import annotations

import zlib

import numpy as np


def component_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]))


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 2.0) -> np.ndarray:
    std = np.sqrt(gain / max(fan_in, 1))
    return (rng.standard_normal(shape) * std).astype(dtype)
