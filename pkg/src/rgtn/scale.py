"""Coarse-graining ladder: pooling, mask pooling, upsampling, network refinement.

Scale ``s`` pools every spatial mode by mean over windows of ``2**s``
(trailing partial windows averaged over their actual size).  Non-spatial
modes are never touched.  By default, modes of size >= 16 count as spatial;
small modes (color channels, angular indices) are left alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import TNGraph

__all__ = [
    "ScaleLevel",
    "default_spatial_modes",
    "coarse_grain",
    "coarse_grain_mask",
    "upsample",
    "refine_network",
]

SPATIAL_MIN_SIZE = 16


def default_spatial_modes(shape) -> tuple[int, ...]:
    return tuple(k for k, s in enumerate(shape) if s >= SPATIAL_MIN_SIZE)


@dataclass(frozen=True)
class ScaleLevel:
    """One rung of the ladder: scale index ``s`` over a fixed base shape."""

    base_shape: tuple
    s: int
    spatial_modes: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "base_shape", tuple(int(x) for x in self.base_shape))
        if self.s < 0:
            raise ValueError("scale index must be >= 0")
        sm = self.spatial_modes
        if sm is None:
            sm = default_spatial_modes(self.base_shape)
        object.__setattr__(self, "spatial_modes", tuple(sorted(int(m) for m in sm)))
        for m in self.spatial_modes:
            if not 0 <= m < len(self.base_shape):
                raise ValueError(f"spatial mode {m} out of range")

    @property
    def factor(self) -> int:
        return 2 ** self.s

    def pooled_shape(self) -> tuple:
        return tuple(
            math.ceil(sz / self.factor) if k in self.spatial_modes else sz
            for k, sz in enumerate(self.base_shape)
        )


def _pool_axis(t: np.ndarray, axis: int, window: int) -> np.ndarray:
    n = t.shape[axis]
    starts = np.arange(0, n, window)
    pooled = np.add.reduceat(t, starts, axis=axis)
    counts = np.minimum(starts + window, n) - starts
    shape = [1] * t.ndim
    shape[axis] = len(starts)
    return pooled / counts.reshape(shape)


def coarse_grain(t: np.ndarray, level: ScaleLevel) -> np.ndarray:
    """Average-pool each spatial mode with window ``2**s``."""
    out = np.asarray(t, dtype=np.float64)
    if level.factor == 1:
        return out.copy()
    for ax in level.spatial_modes:
        out = _pool_axis(out, ax, level.factor)
    return out


def coarse_grain_mask(mask: np.ndarray, level: ScaleLevel) -> np.ndarray:
    """Pool an observation mask: a cell counts as observed when at least
    half of its window was observed."""
    mask = np.asarray(mask, dtype=np.float64)
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("mask entries must be 0 or 1")
    frac = coarse_grain(mask, level)
    return (frac >= 0.5).astype(np.float64)


def _interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Linear-interpolation weights (n_dst x n_src) on [0, 1] sample grids
    with clamped endpoints; exact on constants."""
    if n_src == 1:
        return np.ones((n_dst, 1))
    src = np.linspace(0.0, 1.0, n_src)
    dst = np.linspace(0.0, 1.0, n_dst) if n_dst > 1 else np.array([0.0])
    w = np.zeros((n_dst, n_src))
    idx = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, n_src - 2)
    frac = (dst - src[idx]) / (src[idx + 1] - src[idx])
    rows = np.arange(n_dst)
    w[rows, idx] = 1.0 - frac
    w[rows, idx + 1] = frac
    return w


def upsample(t: np.ndarray, level: ScaleLevel, target_shape) -> np.ndarray:
    """Linearly interpolate each spatial mode back up to ``target_shape``."""
    t = np.asarray(t, dtype=np.float64)
    target_shape = tuple(int(x) for x in target_shape)
    expected = tuple(
        math.ceil(target_shape[k] / level.factor) if k in level.spatial_modes else target_shape[k]
        for k in range(len(target_shape))
    )
    if t.shape != expected:
        raise ValueError(f"input shape {t.shape} does not match pooled {expected}")
    out = t
    for ax in level.spatial_modes:
        if out.shape[ax] == target_shape[ax]:
            continue
        w = _interp_matrix(out.shape[ax], target_shape[ax])
        out = np.moveaxis(np.tensordot(w, out, axes=([1], [ax])), 0, ax)
    return out


def refine_network(g: TNGraph, from_level: ScaleLevel, to_level: ScaleLevel) -> TNGraph:
    """Carry a network one rung finer: interpolate every spatial physical
    leg of every core to the finer pooled size.  Topology, bond dimensions,
    gates, and diagonal factors are untouched."""
    if to_level.s != from_level.s - 1:
        raise ValueError("refine_network requires adjacent scales")
    if from_level.base_shape != to_level.base_shape:
        raise ValueError("scale levels must share a base shape")
    src_shape = from_level.pooled_shape()
    dst_shape = to_level.pooled_shape()
    out = g.copy()
    for v in out.nodes():
        t = out.core(v)
        nb = len(out.incident_edges(v))
        for k, mode in enumerate(out.physical_modes(v)):
            ax = nb + k
            if t.shape[ax] != src_shape[mode]:
                raise ValueError(f"core {v} leg sized {t.shape[ax]}, expected {src_shape[mode]}")
            if dst_shape[mode] == src_shape[mode]:
                continue
            w = _interp_matrix(src_shape[mode], dst_shape[mode])
            t = np.moveaxis(np.tensordot(w, t, axes=([1], [ax])), 0, ax)
        out.set_core(v, t)
    out.external_shape = dst_shape
    out.validate()
    return out
