"""Multi-scale expansion/compression structure search.

The driver walks scales from coarsest to finest.  At each scale it runs
expansion rounds (split the highest-tension node, keep the edit only if the
total loss strictly improves after a short optimization), then compression
rounds (re-derive or merge across the lowest-information-flow edge under the
same acceptance rule), then refines the network one rung finer and optimizes
again.  A global step clock drives the gate temperature throughout.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    TNGraph,
    compression_ratio,
    default_partition,
    edge_truncate,
    gate,
    merge_nodes,
    param_count,
    reconstruct,
    split_node,
)
from .objective import CouplingConstants, couplings_at_scale, data_gradients, loss_and_grad, total_loss
from .scale import ScaleLevel, coarse_grain, coarse_grain_mask, default_spatial_modes, refine_network

__all__ = [
    "RGConfig",
    "ProposalRecord",
    "RGReport",
    "node_tension",
    "schmidt_entropy",
    "edge_flow",
    "propose_expansion",
    "propose_compression",
    "learning_rates",
    "temperature",
    "optimize",
    "initial_graph",
    "rg_search",
    "warm_start",
]


@dataclass
class RGConfig:
    """Schedules and thresholds for one search run.

    ``expand_steps``/``compress_steps`` may be a flat int or a list indexed
    by scale ``s``.  Pooling modes default to the size>=16 rule; the loss
    smoothness modes are configured separately on the run functions.
    """

    scales: int = 2
    expand_steps: int | list = 20
    compress_steps: int | list = 20
    epochs_expand: int = 30
    epochs_compress: int = 30
    epochs_refine: int = 100
    eta0_cores: float = 0.001
    s0: float = 2.0
    eta0_struct: float = 0.0001
    s1: float = 3.0
    tau0: float = 0.5
    t0: float = 100.0
    tau_floor: float = 1e-3
    svd_threshold: float = 1e-3
    truncate_threshold: float | None = None  # compression probes; svd_threshold when unset
    tension_percentile: float = 80.0
    flow_percentile: float = 20.0
    eps_diag: float = 0.01
    delta_gate: float = 0.5
    max_rank: int | None = None
    seed: int = 0
    init_topology: str = "ring"
    init_bond_dim: int = 2
    init_gate_weight: float = 2.0
    init_values: str = "spectral"  # spectral (sequential truncated SVD) | random
    epochs_warmup: int | None = None  # coarsest-scale fit before proposing; epochs_refine when unset
    als_refit: bool = True  # closed-form core refits (full observation only)
    pool_modes: tuple | None = None

    def steps_at(self, name: str, s: int) -> int:
        val = getattr(self, name)
        if isinstance(val, (list, tuple)):
            return int(val[s]) if s < len(val) else int(val[-1])
        return int(val)


@dataclass
class ProposalRecord:
    kind: str            # "expand" | "compress"
    target: object       # node id or edge key
    score: float         # tension or flow
    loss_before: float
    loss_after: float
    accepted: bool
    scale: int
    step: int
    best_after: float = math.nan  # running best total within the scale


@dataclass
class RGReport:
    proposals: list = field(default_factory=list)
    milestones: list = field(default_factory=list)  # dicts: scale/step/params/re/wall
    wall: dict = field(default_factory=dict)
    total_steps: int = 0
    aborted: bool = False
    best_re: float = math.inf
    best_params: int = 0
    best_milestone: int = -1
    bound_best: dict = field(default_factory=dict)  # re bound -> (graph, params, cr, re)


def learning_rates(s: int, cfg: RGConfig) -> tuple[float, float]:
    """Scale-dependent rates: cores decay toward coarse scales, structural
    parameters get more aggressive there."""
    if s < 0:
        raise ValueError("scale must be >= 0")
    eta_cores = cfg.eta0_cores * math.exp(-s / cfg.s0)
    eta_struct = cfg.eta0_struct * (1.0 + s / cfg.s1)
    return eta_cores, eta_struct


def temperature(t: int, cfg: RGConfig) -> float:
    """Annealed gate temperature, floored to keep sigma(w/tau) finite."""
    if t < 0:
        raise ValueError("step must be >= 0")
    return max(cfg.tau0 * math.exp(-t / cfg.t0), cfg.tau_floor)


def node_tension(g: TNGraph, grads: dict) -> dict:
    """Frobenius norm of the data-term core gradient times the degree."""
    return {v: float(np.linalg.norm(grads[v])) * g.degree(v) for v in g.nodes()}


def schmidt_entropy(g: TNGraph, e) -> float:
    """Entropy of the normalized squared singular spectrum across the edge
    (effective cores contracted over the bond, gate excluded)."""
    u, v = e
    tu = g.effective(u)
    tv = g.effective(v)
    t = np.tensordot(tu, tv, axes=([g.axis_of(u, e)], [g.axis_of(v, e)]))
    rows = int(np.prod(t.shape[: tu.ndim - 1], dtype=np.int64)) if tu.ndim > 1 else 1
    mat = t.reshape(rows, -1)
    s = np.linalg.svd(mat, compute_uv=False)
    total = float(np.sum(s ** 2))
    if total <= 0.0:
        return 0.0
    p = (s ** 2) / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def edge_flow(g: TNGraph, tau: float) -> dict:
    return {e: gate(g.edge_weight(e), tau) * schmidt_entropy(g, e) for e in g.edges()}


def propose_expansion(g: TNGraph, tensions: dict, percentile: float = 80.0):
    """Highest-tension splittable node, if strictly above the percentile of
    all node tensions; ties break toward the lowest node id."""
    if not tensions:
        return None
    thresh = float(np.percentile(list(tensions.values()), percentile))
    splittable = [v for v in g.nodes() if g.core(v).ndim >= 2]
    if not splittable:
        return None
    best = min(splittable, key=lambda v: (-tensions[v], v))
    return best if tensions[best] > thresh else None


def propose_compression(g: TNGraph, flows: dict, percentile: float = 20.0):
    """Lowest-flow edge, if strictly below the percentile of all edge flows;
    ties break toward the lowest edge key."""
    if not flows:
        return None
    thresh = float(np.percentile(list(flows.values()), percentile))
    best = min(sorted(flows), key=lambda e: (flows[e], e))
    return best if flows[best] < thresh else None


class _Adam:
    """Moment state for one optimize() call, grouped cores vs structure."""

    def __init__(self, g: TNGraph):
        self.m_core = {v: np.zeros_like(g.core(v)) for v in g.nodes()}
        self.v_core = {v: np.zeros_like(g.core(v)) for v in g.nodes()}
        self.m_diag = {}
        self.v_diag = {}
        for v in g.nodes():
            for e in g.incident_edges(v):
                self.m_diag[(v, e)] = np.zeros(g.bond_dim(e))
                self.v_diag[(v, e)] = np.zeros(g.bond_dim(e))
        self.m_gate = {e: 0.0 for e in g.edges()}
        self.v_gate = {e: 0.0 for e in g.edges()}
        self.t = 0

    def step(self, g: TNGraph, bundle, eta_cores: float, eta_struct: float,
             beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        bc1 = 1.0 - beta1 ** self.t
        bc2 = 1.0 - beta2 ** self.t
        for v in g.nodes():
            gr = bundle.cores[v]
            m = self.m_core[v]
            vv = self.v_core[v]
            m *= beta1
            m += (1 - beta1) * gr
            vv *= beta2
            vv += (1 - beta2) * gr * gr
            g.core(v)[...] -= eta_cores * (m / bc1) / (np.sqrt(vv / bc2) + eps)
        for key, gr in sorted(bundle.diagonals.items()):
            m = self.m_diag[key]
            vv = self.v_diag[key]
            m *= beta1
            m += (1 - beta1) * gr
            vv *= beta2
            vv += (1 - beta2) * gr * gr
            g.diagonal(*key)[...] -= eta_struct * (m / bc1) / (np.sqrt(vv / bc2) + eps)
        for e in sorted(bundle.gates):
            gr = bundle.gates[e]
            self.m_gate[e] = beta1 * self.m_gate[e] + (1 - beta1) * gr
            self.v_gate[e] = beta2 * self.v_gate[e] + (1 - beta2) * gr * gr
            upd = eta_struct * (self.m_gate[e] / bc1) / (math.sqrt(self.v_gate[e] / bc2) + eps)
            g.set_edge_weight(e, g.edge_weight(e) - upd)


def optimize(g: TNGraph, data, mask, couplings: CouplingConstants, epochs: int,
             s: int, cfg: RGConfig, t_start: int = 0,
             temporal_mode=None, spatial_modes=None):
    """Run full-gradient Adam for ``epochs`` steps at scale ``s``.

    Returns (graph, final LossBreakdown, steps consumed, loss trace, ok).
    A non-finite loss aborts and returns the last finite state (ok=False).
    """
    g = g.copy()
    eta_cores, eta_struct = learning_rates(s, cfg)
    if epochs <= 0:
        tau = temperature(t_start, cfg)
        lb = total_loss(g, data, mask, couplings, tau, temporal_mode, spatial_modes)
        return g, lb, 0, [lb.total], True
    adam = _Adam(g)
    trace = []
    lb = None
    prev = g.copy()
    for i in range(epochs):
        tau = temperature(t_start + i, cfg)
        lb, bundle = loss_and_grad(g, data, mask, couplings, tau, temporal_mode, spatial_modes)
        if not math.isfinite(lb.total):
            return prev, total_loss(prev, data, mask, couplings, tau, temporal_mode, spatial_modes), i, trace, False
        trace.append(lb.total)
        prev = g.copy()
        adam.step(g, bundle, eta_cores, eta_struct)
    return g, lb, epochs, trace, True


def _preset_edges(topology: str, n: int) -> list:
    if topology == "ring":
        edges = [(k, (k + 1) % n) for k in range(n)] if n > 2 else ([(0, 1)] if n == 2 else [])
    elif topology == "chain":
        edges = [(k, k + 1) for k in range(n - 1)]
    elif topology == "full":
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        raise ValueError(f"unknown init topology {topology!r}")
    return sorted(tuple(sorted(e)) for e in set(edges))


def _chain_svd_cores(x: np.ndarray, cap: int) -> list:
    """Sequential truncated SVD down the mode order: cores
    (I0, r0), (r0, I1, r1), ..., (r_last, I_last)."""
    from .dense import svd_truncated

    n = x.ndim
    shape = x.shape
    cores = []
    carry = x.reshape(shape[0], -1)
    r_prev = 1
    for k in range(n - 1):
        rows = r_prev * shape[k]
        ts = svd_truncated(carry.reshape(rows, -1), 0.0, max_rank=cap)
        core = ts.left.reshape((r_prev, shape[k], ts.rank)) if k else ts.left.reshape((shape[k], ts.rank))
        cores.append(core)
        carry = ts.singular[:, None] * ts.right
        r_prev = ts.rank
    cores.append(carry.reshape(r_prev, shape[-1]))
    return cores


def initial_graph(shape, cfg: RGConfig, rng: np.random.Generator,
                  data=None, mask=None) -> TNGraph:
    """Preset starting network over one node per external mode.

    Topologies: ring (default), chain, or fully connected.  With spectral
    values (and data available) the backbone chain 0-1-...-N-1 is initialized
    by sequential truncated SVD of the data so the starting network is
    already a good fit; bonds outside the backbone carry the identity slot
    plus small noise.  Random values are i.i.d. normal rescaled so the
    reconstruction norm matches the (mask-extrapolated) data norm.
    """
    shape = tuple(int(x) for x in shape)
    n = len(shape)
    edges = _preset_edges(cfg.init_topology, n)
    b = int(cfg.init_bond_dim)

    spectral = cfg.init_values == "spectral" and data is not None and n >= 2
    chain_cores = None
    if spectral:
        x = np.asarray(data, dtype=np.float64)
        if mask is not None:
            x = x * np.asarray(mask, dtype=np.float64)
        chain_cores = _chain_svd_cores(x, b)

    g = TNGraph(shape)
    backbone = {tuple(sorted((k, k + 1))) for k in range(n - 1)}
    bond_of = {}
    for e in edges:
        if spectral and e in backbone:
            bond_of[e] = chain_cores[e[0]].shape[-1]
        else:
            bond_of[e] = b

    noise_scale = 1e-2
    for v in range(n):
        inc = sorted(e for e in edges if v in e)
        dims = [bond_of[e] for e in inc] + [shape[v]]
        if spectral:
            # place the chain core with all content in slot 0 of any extra
            # bond, plus small symmetry-breaking noise
            cc = chain_cores[v]
            src3 = cc.reshape((1,) + cc.shape) if v == 0 else cc
            src3 = src3.reshape(src3.shape + (1,)) if v == n - 1 else src3
            src_pn = np.moveaxis(src3, 1, 2)  # (prev bond, next bond, leg)
            base = np.zeros(dims)
            sel = []
            vshape = []
            for ax, e in enumerate(inc):
                if e == (v - 1, v):
                    sel.append(slice(None))
                    vshape.append(src_pn.shape[0])
                elif e == (v, v + 1):
                    sel.append(slice(None))
                    vshape.append(src_pn.shape[1])
                else:
                    sel.append(0)
            sel.append(slice(None))
            vshape.append(shape[v])
            # prev sorts before next among a node's edges, so a reshape lands
            # the axes in view order (size-1 absent bonds drop out)
            base[tuple(sel)] = src_pn.reshape(vshape)
            core_norm = max(float(np.linalg.norm(cc)), 1e-12)
            base += rng.standard_normal(dims) * (noise_scale * core_norm / math.sqrt(base.size))
            g.add_core(base, [v], node_id=v)
        else:
            scale = 1.0 / math.sqrt(max(np.prod([bond_of[e] for e in inc], dtype=np.int64), 1))
            g.add_core(rng.standard_normal(dims) * scale, [v], node_id=v)
    for e in edges:
        g.add_edge(*e, bond_dim=bond_of[e], weight=cfg.init_gate_weight)
    g.validate()

    if not spectral and data is not None and n >= 1:
        data = np.asarray(data, dtype=np.float64)
        if mask is not None:
            nobs = float(np.sum(mask))
            target = float(np.linalg.norm(data * mask)) * math.sqrt(data.size / max(nobs, 1.0))
        else:
            target = float(np.linalg.norm(data))
        cur = float(np.linalg.norm(reconstruct(g, cfg.tau0)))
        if cur > 0 and target > 0:
            factor = (target / cur) ** (1.0 / n)
            for v in g.nodes():
                g.core(v)[...] *= factor
    return g


def _masked_re(g: TNGraph, data, mask, tau: float) -> float:
    recon = reconstruct(g, tau)
    if mask is None:
        denom = float(np.linalg.norm(data))
        return float(np.linalg.norm(recon - data)) / max(denom, 1e-300)
    denom = float(np.linalg.norm(data * mask))
    return float(np.linalg.norm((recon - data) * mask)) / max(denom, 1e-300)


def rg_search(data, mask, cfg: RGConfig, init: TNGraph | None = None,
              couplings: CouplingConstants | None = None, rho: dict | None = None,
              temporal_mode=None, spatial_loss_modes=None,
              re_bounds=None):
    """Full coarse-to-fine structure search (returns best graph and report).

    The best graph is tracked at the finest scale by masked relative error.
    When ``re_bounds`` is given, the lowest-parameter finest-scale state
    meeting each bound is snapshotted into ``report.bound_best``.
    """
    data = np.asarray(data, dtype=np.float64)
    couplings = couplings or CouplingConstants()
    pool = cfg.pool_modes if cfg.pool_modes is not None else default_spatial_modes(data.shape)
    levels = {s: ScaleLevel(data.shape, s, pool) for s in range(cfg.scales + 1)}
    rng = np.random.default_rng(cfg.seed)
    report = RGReport()

    s_top = cfg.scales
    data_s = coarse_grain(data, levels[s_top])
    mask_s = coarse_grain_mask(mask, levels[s_top]) if mask is not None else None
    if init is None:
        g = initial_graph(data_s.shape, cfg, rng, data_s, mask_s)
    else:
        g = init.copy()
        if g.external_shape != data_s.shape:
            raise ValueError(
                f"init shape {g.external_shape} does not match coarsest data {data_s.shape}")

    t_clock = 0
    best = None

    def refit(graph, data_at, mask_at):
        if cfg.als_refit and mask_at is None:
            from .als import als_sweeps
            return als_sweeps(graph, data_at, temperature(t_clock, cfg), sweeps=2)
        return graph

    def consider_best(graph, scale):
        nonlocal best
        if scale != 0:
            return
        tau = temperature(t_clock, cfg)
        re = _masked_re(graph, data, mask, tau)
        params = param_count(graph)
        report.milestones.append(
            {"scale": scale, "step": t_clock, "params": params, "re": re})
        if re < report.best_re:
            report.best_re = re
            report.best_params = params
            report.best_milestone = len(report.milestones) - 1
            best = graph.copy()
        if re_bounds:
            for bound in re_bounds:
                if re <= bound:
                    cur = report.bound_best.get(bound)
                    if cur is None or params < cur[1]:
                        report.bound_best[bound] = (graph.copy(), params,
                                                    compression_ratio(graph, data.shape), re)

    for s in range(s_top, -1, -1):
        data_s = coarse_grain(data, levels[s])
        mask_s = coarse_grain_mask(mask, levels[s]) if mask is not None else None
        c_s = couplings_at_scale(couplings, s, rho)
        best_in_scale = math.inf

        if s == s_top:
            # fit the incumbent before the first proposal so acceptance
            # measures structural benefit, not optimization progress
            warmup = cfg.epochs_refine if cfg.epochs_warmup is None else cfg.epochs_warmup
            t_phase = time.perf_counter()
            g, _, steps, _, ok = optimize(
                g, data_s, mask_s, c_s, warmup, s, cfg, t_clock,
                temporal_mode, spatial_loss_modes)
            t_clock += steps
            g = refit(g, data_s, mask_s)
            if not ok:
                report.aborted = True
            consider_best(g, s)
            report.wall["warmup"] = time.perf_counter() - t_phase

        t_phase = time.perf_counter()
        for _ in range(cfg.steps_at("expand_steps", s)):
            tau = temperature(t_clock, cfg)
            tensions = node_tension(g, data_gradients(g, data_s, mask_s, tau))
            v = propose_expansion(g, tensions, cfg.tension_percentile)
            if v is None:
                continue
            try:
                prop = split_node(g, v, default_partition(g, v), cfg.svd_threshold, cfg.max_rank)
            except ValueError:
                continue
            prop = refit(prop, data_s, mask_s)
            prop, _, steps, _, ok = optimize(
                prop, data_s, mask_s, c_s, cfg.epochs_expand, s, cfg, t_clock,
                temporal_mode, spatial_loss_modes)
            t_clock += steps
            tau = temperature(t_clock, cfg)
            after = total_loss(prop, data_s, mask_s, c_s, tau, temporal_mode, spatial_loss_modes).total
            before = total_loss(g, data_s, mask_s, c_s, tau, temporal_mode, spatial_loss_modes).total
            accepted = bool(ok and math.isfinite(after) and after < before)
            if accepted:
                g = prop
                best_in_scale = min(best_in_scale, after)
                consider_best(g, s)
            report.proposals.append(ProposalRecord(
                "expand", v, tensions[v], before, after, accepted, s, t_clock,
                best_after=best_in_scale if accepted else math.nan))
            if not ok:
                report.aborted = True
        report.wall["expand"] = report.wall.get("expand", 0.0) + time.perf_counter() - t_phase

        t_phase = time.perf_counter()
        for _ in range(cfg.steps_at("compress_steps", s)):
            tau = temperature(t_clock, cfg)
            flows = edge_flow(g, tau)
            # skip irreducible bonds (already rank 1 between two physical
            # cores): re-propose against the remaining candidates
            e = None
            while flows:
                e = propose_compression(g, flows, cfg.flow_percentile)
                if e is None:
                    break
                if bool(g.physical_modes(e[0])) and bool(g.physical_modes(e[1])) \
                        and g.bond_dim(e) == 1:
                    del flows[e]
                    e = None
                    continue
                break
            if e is None:
                continue
            both_physical = bool(g.physical_modes(e[0])) and bool(g.physical_modes(e[1]))
            trunc = cfg.svd_threshold if cfg.truncate_threshold is None else cfg.truncate_threshold
            if both_physical:
                prop = edge_truncate(g, e, trunc, tau)
            else:
                prop = merge_nodes(g, e[0], e[1], cfg.svd_threshold, tau)
            prop = refit(prop, data_s, mask_s)
            prop, _, steps, _, ok = optimize(
                prop, data_s, mask_s, c_s, cfg.epochs_compress, s, cfg, t_clock,
                temporal_mode, spatial_loss_modes)
            t_clock += steps
            tau = temperature(t_clock, cfg)
            after = total_loss(prop, data_s, mask_s, c_s, tau, temporal_mode, spatial_loss_modes).total
            before = total_loss(g, data_s, mask_s, c_s, tau, temporal_mode, spatial_loss_modes).total
            accepted = bool(ok and math.isfinite(after) and after < before)
            if accepted:
                g = prop
                best_in_scale = min(best_in_scale, after)
                consider_best(g, s)
            report.proposals.append(ProposalRecord(
                "compress", e, flows[e], before, after, accepted, s, t_clock,
                best_after=best_in_scale if accepted else math.nan))
            if not ok:
                report.aborted = True
        report.wall["compress"] = report.wall.get("compress", 0.0) + time.perf_counter() - t_phase

        t_phase = time.perf_counter()
        if s > 0:
            g = refine_network(g, levels[s], levels[s - 1])
            data_f = coarse_grain(data, levels[s - 1])
            mask_f = coarse_grain_mask(mask, levels[s - 1]) if mask is not None else None
            c_f = couplings_at_scale(couplings, s - 1, rho)
            g = refit(g, data_f, mask_f)
            g, _, steps, _, ok = optimize(
                g, data_f, mask_f, c_f, cfg.epochs_refine, s - 1, cfg, t_clock,
                temporal_mode, spatial_loss_modes)
        else:
            g, _, steps, _, ok = optimize(
                g, data_s, mask_s, c_s, cfg.epochs_refine, s, cfg, t_clock,
                temporal_mode, spatial_loss_modes)
        t_clock += steps
        if not ok:
            report.aborted = True
        consider_best(g, max(s - 1, 0) if s > 0 else 0)
        report.wall["refine"] = report.wall.get("refine", 0.0) + time.perf_counter() - t_phase

    report.total_steps = t_clock
    if best is None:
        best = g.copy()
        report.best_re = _masked_re(g, data, mask, temperature(t_clock, cfg))
        report.best_params = param_count(g)
    return best, report


def warm_start(data, mask, cfg: RGConfig, couplings: CouplingConstants | None = None,
               **kwargs) -> TNGraph:
    """Coarse-to-fine search used purely as an initializer for a downstream
    optimizer; returns the finest-scale best graph."""
    best, _ = rg_search(data, mask, cfg, couplings=couplings, **kwargs)
    return best
