"""Ground-truth network generation, observation masks, and noise injection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import TNGraph, reconstruct

__all__ = [
    "TruthSpec",
    "gen_structure",
    "realize",
    "gen_mask",
    "add_noise",
    "PRESETS",
    "preset_spec",
    "video_preset",
]

SATURATED_WEIGHT = 5.0
HARD_TAU = 1e-3


@dataclass(frozen=True)
class TruthSpec:
    """Recipe for a random ground-truth network with fixed topology."""

    dims: tuple
    edges: tuple              # node pairs over nodes 0..N-1, one node per mode
    bond_range: tuple = (2, 3)  # inclusive integer range
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "edges", tuple(tuple(sorted(int(x) for x in e)) for e in self.edges))
        object.__setattr__(self, "bond_range", tuple(int(b) for b in self.bond_range))
        n = len(self.dims)
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < v < n):
                raise ValueError(f"edge ({u},{v}) invalid for {n} nodes")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
        lo, hi = self.bond_range
        if lo < 1 or hi < lo:
            raise ValueError("bond_range must be an inclusive range within [1, inf)")


def gen_structure(spec: TruthSpec) -> TNGraph:
    """One core per mode, bond dims drawn uniformly from the range, entries
    i.i.d. normal scaled by 1/sqrt(prod of incident bonds), gates hard on."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.bond_range
    bond = {e: int(rng.integers(lo, hi + 1)) for e in sorted(spec.edges)}
    g = TNGraph(spec.dims)
    for v in range(len(spec.dims)):
        inc = sorted(e for e in spec.edges if v in e)
        shape = [bond[e] for e in inc] + [spec.dims[v]]
        scale = 1.0 / math.sqrt(max(np.prod([bond[e] for e in inc], dtype=np.int64), 1))
        g.add_core(rng.standard_normal(shape) * scale, [v], node_id=v)
    for e in sorted(spec.edges):
        g.add_edge(*e, bond_dim=bond[e], weight=SATURATED_WEIGHT)
    g.validate()
    return g


def realize(g: TNGraph) -> np.ndarray:
    """Dense ground-truth tensor: plain contraction with saturated gates."""
    return reconstruct(g, HARD_TAU)


def gen_mask(shape, missing_fraction: float, seed: int = 0) -> np.ndarray:
    """Indicator tensor with exactly round((1-f)*numel) observed entries."""
    if not 0.0 <= missing_fraction < 1.0:
        raise ValueError("missing fraction must be in [0, 1)")
    shape = tuple(int(x) for x in shape)
    numel = int(np.prod(shape, dtype=np.int64))
    n_obs = int(round((1.0 - missing_fraction) * numel))
    rng = np.random.default_rng(seed)
    idx = rng.choice(numel, size=n_obs, replace=False)
    mask = np.zeros(numel)
    mask[idx] = 1.0
    return mask.reshape(shape)


def add_noise(t: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Add Gaussian noise rescaled so the noise tensor's Frobenius norm is
    exactly ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    t = np.asarray(t, dtype=np.float64)
    if sigma == 0.0:
        return t.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(t.shape)
    noise *= sigma / np.linalg.norm(noise)
    return t + noise


def _smooth_axis(x: np.ndarray, axis: int, passes: int = 2) -> np.ndarray:
    """Cheap moving-average smoothing along one axis (for video-like cores)."""
    out = x
    for _ in range(passes):
        lo = np.roll(out, 1, axis=axis)
        hi = np.roll(out, -1, axis=axis)
        sl0 = [slice(None)] * out.ndim
        sl0[axis] = slice(0, 1)
        sln = [slice(None)] * out.ndim
        sln[axis] = slice(-1, None)
        lo[tuple(sl0)] = out[tuple(sl0)]
        hi[tuple(sln)] = out[tuple(sln)]
        out = (lo + out + hi) / 3.0
    return out


def video_preset(seed: int = 0, shape=(20, 32, 32, 3), ranks=(3, 4, 4, 2)) -> TNGraph:
    """Smooth low-rank ring over (T, H, W, C): a stand-in video tensor.

    Cores are drawn i.i.d. then moving-average smoothed along the temporal
    and spatial legs, keeping the tensor exactly low rank but video-like.
    """
    n = len(shape)
    rank_of = {(k, k + 1): int(ranks[k]) for k in range(n - 1)}
    rank_of[(0, n - 1)] = int(ranks[n - 1])
    g = TNGraph(shape)
    rng = np.random.default_rng(seed)
    for v in range(n):
        inc = sorted(e for e in rank_of if v in e)
        dims = [rank_of[e] for e in inc] + [int(shape[v])]
        core = rng.standard_normal(dims) / math.sqrt(np.prod(dims[:-1], dtype=np.int64))
        if shape[v] >= 16 or v == 0:  # smooth T, H, W legs; leave the color leg alone
            core = _smooth_axis(core, core.ndim - 1, passes=3)
        g.add_core(core, [v], node_id=v)
    for e in sorted(rank_of):
        g.add_edge(*e, bond_dim=rank_of[e], weight=SATURATED_WEIGHT)
    g.validate()
    return g


PRESETS = {
    # five 4th-order topologies for the structure-revealing experiment
    "order4_ring": TruthSpec((7, 8, 7, 8), ((0, 1), (1, 2), (2, 3), (0, 3)), name="order4_ring"),
    "order4_chain": TruthSpec((7, 8, 7, 8), ((0, 1), (1, 2), (2, 3)), name="order4_chain"),
    "order4_star": TruthSpec((7, 8, 7, 8), ((0, 1), (0, 2), (0, 3)), name="order4_star"),
    "order4_chord": TruthSpec((7, 8, 7, 8), ((0, 1), (1, 2), (2, 3), (0, 2)), name="order4_chord"),
    "order4_ring_chord": TruthSpec((7, 8, 7, 8), ((0, 1), (1, 2), (2, 3), (0, 3), (0, 2)),
                                   name="order4_ring_chord"),
    # 6th-order protocol: (7,8,7,8,7,8) with 6 edges, bonds in {2,3}
    "order6": TruthSpec((7, 8, 7, 8, 7, 8),
                        ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)), name="order6"),
    # 8th-order stand-in: similar construction with 8 edges
    "order8": TruthSpec((7, 8, 7, 8, 7, 8, 7, 8),
                        ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 4)),
                        name="order8"),
}


def preset_spec(name: str, seed: int | None = None) -> TruthSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[name]
    if seed is not None:
        spec = TruthSpec(spec.dims, spec.edges, spec.bond_range, seed, spec.name)
    return spec
