"""Shared brute-force oracles, kept independent of the library code paths."""

import itertools

import numpy as np
import pytest


def unfold_oracle(t: np.ndarray, mode: int) -> np.ndarray:
    """Index-enumeration unfolding: row = index in `mode`, columns ordered by
    the remaining modes ascending with the last varying fastest."""
    shape = t.shape
    rest = [ax for ax in range(t.ndim) if ax != mode]
    out = np.zeros((shape[mode], int(np.prod([shape[ax] for ax in rest], dtype=np.int64))))
    for idx in itertools.product(*(range(s) for s in shape)):
        col = 0
        for ax in rest:
            col = col * shape[ax] + idx[ax]
        out[idx[mode], col] = t[idx]
    return out


def contract_oracle(a: np.ndarray, modes_a, b: np.ndarray, modes_b) -> np.ndarray:
    """Naive nested-loop contraction."""
    modes_a = list(modes_a)
    modes_b = list(modes_b)
    free_a = [ax for ax in range(a.ndim) if ax not in modes_a]
    free_b = [ax for ax in range(b.ndim) if ax not in modes_b]
    out_shape = [a.shape[ax] for ax in free_a] + [b.shape[ax] for ax in free_b]
    out = np.zeros(out_shape if out_shape else ())
    paired_sizes = [a.shape[ax] for ax in modes_a]
    for out_idx in itertools.product(*(range(s) for s in out_shape)):
        ia = list(out_idx[: len(free_a)])
        ib = list(out_idx[len(free_a):])
        total = 0.0
        for kidx in itertools.product(*(range(s) for s in paired_sizes)):
            full_a = [0] * a.ndim
            for ax, v in zip(free_a, ia):
                full_a[ax] = v
            for ax, v in zip(modes_a, kidx):
                full_a[ax] = v
            full_b = [0] * b.ndim
            for ax, v in zip(free_b, ib):
                full_b[ax] = v
            for ax, v in zip(modes_b, kidx):
                full_b[ax] = v
            total += a[tuple(full_a)] * b[tuple(full_b)]
        if out_shape:
            out[out_idx] = total
        else:
            out = np.asarray(total)
    return out


def bond_matrix(g: float, r: int) -> np.ndarray:
    """Explicit gated bond operator g*I + (1-g)/r * J."""
    return g * np.eye(r) + (1.0 - g) / r * np.ones((r, r))


def reconstruct_oracle(graph, tau: float) -> np.ndarray:
    """Materialize every diagonal factor and bond operator explicitly and
    contract the whole network with the naive pairwise engine.

    Walks cores in node order, accumulating into one big tensor whose open
    axes are tracked by (kind, key) tags; contracts bond pairs as both ends
    become available.
    """
    from rgtn.graph import gate

    acc = None
    acc_tags = []
    for nid in sorted(graph.nodes()):
        core = graph.core(nid).copy()
        tags = []
        for e in graph.incident_edges(nid):
            d = graph.diagonal(nid, e)
            ax = len(tags)
            shape_bc = [1] * core.ndim
            shape_bc[ax] = core.shape[ax]
            core = core * d.reshape(shape_bc)
            tags.append(("bond", e, nid))
        for pm in graph.physical_modes(nid):
            tags.append(("phys", pm))
        if acc is None:
            acc, acc_tags = core, tags
        else:
            acc = np.tensordot(acc, core, axes=0)
            acc_tags = acc_tags + tags
        # close bonds whose both endpoints are present: insert B then trace
        changed = True
        while changed:
            changed = False
            for i, tag in enumerate(acc_tags):
                if tag[0] != "bond":
                    continue
                e = tag[1]
                for j in range(i + 1, len(acc_tags)):
                    if acc_tags[j][0] == "bond" and acc_tags[j][1] == e:
                        r = acc.shape[i]
                        b = bond_matrix(gate(graph.edge_weight(e), tau), r)
                        acc = np.tensordot(acc, b, axes=([i], [0]))
                        # contracted axis moved to the end; pair it with j-1 shift
                        acc_tags = acc_tags[:i] + acc_tags[i + 1:] + [("tmp",)]
                        jj = j - 1
                        acc = np.trace(acc, axis1=jj, axis2=acc.ndim - 1)
                        acc_tags = [t for k, t in enumerate(acc_tags) if k != jj and t != ("tmp",)]
                        changed = True
                        break
                if changed:
                    break
    order = np.argsort([t[1] for t in acc_tags])
    assert all(t[0] == "phys" for t in acc_tags)
    return np.transpose(acc, order)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def fd_check(g, data, mask, c, tau, temporal_mode=None, spatial_modes=None,
             h=1e-5, rtol=1e-4, atol=1e-6):
    """Central-difference check of every gradient entry; returns the list of
    (name, analytic, fd) triples that violate the tolerance."""
    from rgtn.objective import loss_and_grad, total_loss

    _, bundle = loss_and_grad(g, data, mask, c, tau, temporal_mode, spatial_modes)

    def loss_of(graph):
        return total_loss(graph, data, mask, c, tau, temporal_mode, spatial_modes).total

    bad = []

    def check(name, analytic, plus, minus):
        fd = (plus - minus) / (2 * h)
        if abs(analytic - fd) > rtol * max(abs(analytic), abs(fd)) + atol:
            bad.append((name, analytic, fd))

    for v in g.nodes():
        t = g.core(v)
        for idx in np.ndindex(t.shape):
            gp = g.copy()
            gp.core(v)[idx] += h
            gm = g.copy()
            gm.core(v)[idx] -= h
            check(f"core[{v}]{idx}", bundle.cores[v][idx], loss_of(gp), loss_of(gm))
    for v in g.nodes():
        for e in g.incident_edges(v):
            d = g.diagonal(v, e)
            for j in range(d.shape[0]):
                gp = g.copy()
                gp.diagonal(v, e)[j] += h
                gm = g.copy()
                gm.diagonal(v, e)[j] -= h
                check(f"diag[{v},{e}][{j}]", bundle.diagonals[(v, e)][j], loss_of(gp), loss_of(gm))
    for e in g.edges():
        gp = g.copy()
        gp.set_edge_weight(e, g.edge_weight(e) + h)
        gm = g.copy()
        gm.set_edge_weight(e, g.edge_weight(e) - h)
        check(f"gate[{e}]", bundle.gates[e], loss_of(gp), loss_of(gm))
    return bad
