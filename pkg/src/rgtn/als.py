"""Closed-form core refits for the full-observation case.

``reconstruct`` is linear in each core, so each core solves a ridge
least-squares problem against the data with every other core held fixed.
The normal equations are solved matrix-free by conjugate gradient, using
one reconstruction einsum and one environment einsum per iteration.
"""

from __future__ import annotations

import numpy as np

from .graph import TNGraph, _engine_arrays, _reconstruct_from, core_environment, effective_core

__all__ = ["solve_core", "als_sweeps"]


def _matvec(g: TNGraph, v: int, gates, absorbed, diags, y: np.ndarray) -> np.ndarray:
    """(A^T A) y for the raw core of ``v``: reconstruct with the core set to
    ``y``, then take the environment of the result."""
    saved = absorbed[v]
    y_eff = effective_core(y, diags)
    # v owns some bond operators in the absorbed representation; reapply them
    from .graph import bond_matrix, _absorb
    h = y_eff
    for ax, e in enumerate(g.incident_edges(v)):
        if e[0] == v and gates[e] != 1.0:
            h = _absorb(h, ax, bond_matrix(gates[e], g.bond_dim(e)))
    absorbed[v] = h
    recon = _reconstruct_from(g, absorbed)
    absorbed[v] = saved
    env = core_environment(g, v, gates, absorbed, recon)
    return effective_core(env, diags)


def solve_core(g: TNGraph, v: int, data: np.ndarray, tau: float,
               iters: int = 40, ridge: float = 1e-8) -> np.ndarray:
    """Ridge least-squares solve for core ``v`` (full observation)."""
    eff, gates, absorbed = _engine_arrays(g, tau)
    diags = [g.diagonal(v, e) for e in g.incident_edges(v)]
    b = effective_core(core_environment(g, v, gates, absorbed, np.asarray(data, dtype=np.float64)),
                       diags)
    scale = max(float(np.abs(b).max()), 1e-300)
    lam = ridge * scale

    x = g.core(v).copy()
    r = b - _matvec(g, v, gates, absorbed, diags, x) - lam * x
    p = r.copy()
    rs = float(np.vdot(r, r))
    b_norm = float(np.linalg.norm(b))
    tol2 = (1e-10 * max(b_norm, 1e-300)) ** 2
    for _ in range(iters):
        if rs <= tol2:
            break
        ap = _matvec(g, v, gates, absorbed, diags, p) + lam * p
        alpha = rs / max(float(np.vdot(p, ap)), 1e-300)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r))
        p = r + (rs_new / max(rs, 1e-300)) * p
        rs = rs_new
    return x


def als_sweeps(g: TNGraph, data, tau: float, sweeps: int = 2,
               iters: int = 40, ridge: float = 1e-8) -> TNGraph:
    """A few rounds of sequential closed-form core refits; returns a copy."""
    g = g.copy()
    data = np.asarray(data, dtype=np.float64)
    for _ in range(sweeps):
        for v in g.nodes():
            g.set_core(v, solve_core(g, v, data, tau, iters, ridge))
    return g
