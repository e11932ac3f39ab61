"""Gated tensor-network graph: cores, edges, diagonal factors, edits.

A ``TNGraph`` owns one core tensor per node.  Core axes follow a fixed
convention: incident bond axes first, sorted by edge key ``(u, v)`` with
``u < v``, then physical axes sorted by external mode index.  Every edge
carries a bond dimension and a learnable gate weight ``w``; every
(node, edge) pair carries a diagonal reweighting vector.

Contraction inserts the bond operator ``B(g) = g*I + (1-g)/R * J`` on every
edge, where ``g = sigmoid(w / tau)``.  At ``g=1`` this is plain contraction;
at ``g=0`` the bond transmits only the uniform rank-1 component, i.e. the
edge degenerates to an outer-product coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dense import svd_truncated

__all__ = [
    "Edge",
    "TNGraph",
    "StructureSignature",
    "gate",
    "bond_matrix",
    "effective_core",
    "reconstruct",
    "param_count",
    "compression_ratio",
    "split_node",
    "merge_nodes",
    "edge_truncate",
    "harden",
    "finalize",
    "default_partition",
]

EdgeKey = tuple[int, int]


def gate(w: float, tau: float) -> float:
    """Logistic gate sigma(w / tau) in (0, 1); saturates cleanly in float64."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return float(expit(w / tau))


def bond_matrix(g: float, r: int) -> np.ndarray:
    return g * np.eye(r) + (1.0 - g) / r * np.ones((r, r))


def effective_core(tensor: np.ndarray, diags) -> np.ndarray:
    """Scale the leading bond axes of ``tensor`` by the diagonal vectors."""
    out = tensor
    for ax, d in enumerate(diags):
        d = np.asarray(d)
        if d.shape[0] != tensor.shape[ax]:
            raise ValueError(f"diagonal length {d.shape[0]} != bond size {tensor.shape[ax]}")
        shape = [1] * out.ndim
        shape[ax] = d.shape[0]
        out = out * d.reshape(shape)
    return out


@dataclass
class Edge:
    bond_dim: int
    weight: float


def _ekey(u: int, v: int) -> EdgeKey:
    return (u, v) if u < v else (v, u)


def _absorb(tensor: np.ndarray, ax: int, m: np.ndarray) -> np.ndarray:
    """Multiply matrix ``m`` into ``tensor`` along ``ax`` (axis stays put)."""
    return np.moveaxis(np.tensordot(tensor, m, axes=([ax], [0])), -1, ax)


class TNGraph:
    """Mutable tensor network; copy before speculative edits."""

    def __init__(self, external_shape):
        self.external_shape = tuple(int(s) for s in external_shape)
        self._tensors: dict[int, np.ndarray] = {}
        self._phys: dict[int, tuple[int, ...]] = {}
        self._edges: dict[EdgeKey, Edge] = {}
        self._diags: dict[tuple[int, EdgeKey], np.ndarray] = {}
        self._next = 0

    # -- construction ------------------------------------------------------

    def add_core(self, tensor: np.ndarray, physical_modes=(), node_id: int | None = None) -> int:
        nid = self._next if node_id is None else int(node_id)
        if nid in self._tensors:
            raise ValueError(f"node {nid} already exists")
        self._next = max(self._next, nid + 1)
        self._tensors[nid] = np.asarray(tensor, dtype=np.float64)
        self._phys[nid] = tuple(sorted(int(m) for m in physical_modes))
        return nid

    def add_edge(self, u: int, v: int, bond_dim: int, weight: float,
                 diag_u=None, diag_v=None) -> EdgeKey:
        e = _ekey(u, v)
        if e in self._edges:
            raise ValueError(f"edge {e} already exists (simple graph)")
        self._edges[e] = Edge(int(bond_dim), float(weight))
        self._diags[(e[0], e)] = np.ones(bond_dim) if diag_u is None else np.asarray(diag_u, dtype=np.float64)
        self._diags[(e[1], e)] = np.ones(bond_dim) if diag_v is None else np.asarray(diag_v, dtype=np.float64)
        return e

    # -- accessors ---------------------------------------------------------

    def nodes(self) -> list[int]:
        return sorted(self._tensors)

    def edges(self) -> list[EdgeKey]:
        return sorted(self._edges)

    def core(self, v: int) -> np.ndarray:
        return self._tensors[v]

    def set_core(self, v: int, tensor: np.ndarray) -> None:
        self._tensors[v] = tensor

    def physical_modes(self, v: int) -> tuple[int, ...]:
        return self._phys[v]

    def incident_edges(self, v: int) -> list[EdgeKey]:
        return sorted(e for e in self._edges if v in e)

    def degree(self, v: int) -> int:
        return sum(1 for e in self._edges if v in e)

    def bond_dim(self, e: EdgeKey) -> int:
        return self._edges[e].bond_dim

    def edge_weight(self, e: EdgeKey) -> float:
        return self._edges[e].weight

    def set_edge_weight(self, e: EdgeKey, w: float) -> None:
        self._edges[e].weight = float(w)

    def diagonal(self, v: int, e: EdgeKey) -> np.ndarray:
        return self._diags[(v, e)]

    def set_diagonal(self, v: int, e: EdgeKey, values: np.ndarray) -> None:
        self._diags[(v, e)] = values

    def axis_of(self, v: int, e: EdgeKey) -> int:
        return self.incident_edges(v).index(e)

    def effective(self, v: int) -> np.ndarray:
        diags = [self._diags[(v, e)] for e in self.incident_edges(v)]
        return effective_core(self._tensors[v], diags)

    def copy(self) -> "TNGraph":
        g = TNGraph(self.external_shape)
        g._tensors = {v: t.copy() for v, t in self._tensors.items()}
        g._phys = dict(self._phys)
        g._edges = {e: Edge(ed.bond_dim, ed.weight) for e, ed in self._edges.items()}
        g._diags = {k: d.copy() for k, d in self._diags.items()}
        g._next = self._next
        return g

    def structure_key(self):
        """Hashable topology + shape key (used for contraction path caching)."""
        return (
            tuple((v, self._tensors[v].shape, self._phys[v]) for v in self.nodes()),
            tuple((e, self._edges[e].bond_dim) for e in self.edges()),
            self.external_shape,
        )

    def validate(self) -> None:
        """Assert the leg/bond consistency invariants; raises on violation."""
        seen_modes: list[int] = []
        for v in self.nodes():
            inc = self.incident_edges(v)
            phys = self._phys[v]
            t = self._tensors[v]
            if t.ndim != len(inc) + len(phys):
                raise AssertionError(f"node {v}: order {t.ndim} != {len(inc)} bonds + {len(phys)} legs")
            for ax, e in enumerate(inc):
                if t.shape[ax] != self._edges[e].bond_dim:
                    raise AssertionError(f"node {v} axis {ax}: size {t.shape[ax]} != bond {e}")
                if self._diags[(v, e)].shape[0] != self._edges[e].bond_dim:
                    raise AssertionError(f"diagonal ({v},{e}) length mismatch")
            for k, m in enumerate(phys):
                if t.shape[len(inc) + k] != self.external_shape[m]:
                    raise AssertionError(f"node {v} leg {m}: size mismatch")
            seen_modes.extend(phys)
        if sorted(seen_modes) != list(range(len(self.external_shape))):
            raise AssertionError("external modes not covered exactly once")
        for (u, v) in self._edges:
            if u not in self._tensors or v not in self._tensors or u >= v:
                raise AssertionError(f"bad edge ({u},{v})")

    # -- internal surgery helpers -------------------------------------------

    def _axis_tags(self, v: int) -> list:
        return [("e", e) for e in self.incident_edges(v)] + [("p", m) for m in self._phys[v]]

    @staticmethod
    def _tag_sort_key(tag):
        kind, val = tag
        return (0, val) if kind == "e" else (1, (val, val))

    def _set_core_with_tags(self, v: int, tensor: np.ndarray, tags: list) -> None:
        """Install ``tensor`` whose axes are described by ``tags`` (edge keys
        and physical modes in arbitrary order), permuting into convention."""
        order = sorted(range(len(tags)), key=lambda i: self._tag_sort_key(tags[i]))
        if order != list(range(len(tags))):
            tensor = np.ascontiguousarray(np.transpose(tensor, order))
        self._tensors[v] = tensor
        self._phys[v] = tuple(val for kind, val in (tags[i] for i in order) if kind == "p")

    def _rekey_edge(self, e: EdgeKey, old_node: int, new_node: int) -> EdgeKey:
        """Re-key edge ``e`` replacing endpoint ``old_node`` by ``new_node``;
        fixes the unchanged endpoint's axis order.  The renamed endpoint's
        tensor/tags are the caller's responsibility."""
        x = e[0] if e[1] == old_node else e[1]
        ne = _ekey(new_node, x)
        if ne == e:
            return e
        tags_x = [("e", ne) if t == ("e", e) else t for t in self._axis_tags(x)]
        self._edges[ne] = self._edges.pop(e)
        self._diags[(x, ne)] = self._diags.pop((x, e))
        self._diags[(new_node, ne)] = self._diags.pop((old_node, e))
        self._set_core_with_tags(x, self._tensors[x], tags_x)
        return ne

    def _rename_node(self, old: int, new: int) -> None:
        if old == new:
            return
        if new in self._tensors:
            raise ValueError(f"node {new} already exists")
        tags = self._axis_tags(old)
        new_tags = []
        for t in tags:
            if t[0] == "e":
                new_tags.append(("e", self._rekey_edge(t[1], old, new)))
            else:
                new_tags.append(t)
        tensor = self._tensors.pop(old)
        phys = self._phys.pop(old)
        self._tensors[new] = tensor
        self._phys[new] = phys
        self._set_core_with_tags(new, tensor, new_tags)
        self._next = max(self._next, new + 1)


@dataclass(frozen=True)
class StructureSignature:
    """Hardened discrete topology: which edges survive and at what rank."""

    nodes: tuple            # ((node_id, physical_modes_tuple), ...)
    adjacency: frozenset    # surviving edge keys
    ranks: tuple            # ((edge_key, effective_rank), ...) for surviving edges

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def rank_of(self, e: EdgeKey) -> int:
        return dict(self.ranks)[e]


# -- reconstruction engine ----------------------------------------------------

_PATH_CACHE: dict = {}

# einsum_path's default memory cap (largest input/output) rejects pairwise
# intermediates on dense graphs and degenerates to one nested-loop pass;
# allow intermediates up to ~1e8 elements instead.
_PATH_MEMORY_LIMIT = int(1e8)


def _labels(g: TNGraph):
    lab = {}
    nxt = 0
    for e in g.edges():
        lab[("e", e)] = nxt
        nxt += 1
    for v in g.nodes():
        for m in g.physical_modes(v):
            lab[("p", m)] = nxt
            nxt += 1
    return lab, nxt


def _cached_einsum(key, operands, label_lists, out_labels):
    interleaved = []
    for op, ls in zip(operands, label_lists):
        interleaved.extend((op, ls))
    interleaved.append(out_labels)
    path = _PATH_CACHE.get(key)
    if path is None:
        path = np.einsum_path(*interleaved, optimize=("greedy", _PATH_MEMORY_LIMIT))[0]
        if len(_PATH_CACHE) > 4096:
            _PATH_CACHE.clear()
        _PATH_CACHE[key] = path
    return np.einsum(*interleaved, optimize=path)


def _engine_arrays(g: TNGraph, tau: float):
    """Effective cores, gate values, and cores with the bond operators of
    their owned edges absorbed (owner = smaller endpoint; skipped at g=1)."""
    eff = {v: g.effective(v) for v in g.nodes()}
    gates = {e: gate(g.edge_weight(e), tau) for e in g.edges()}
    absorbed = {}
    for v in g.nodes():
        h = eff[v]
        for ax, e in enumerate(g.incident_edges(v)):
            if e[0] == v and gates[e] != 1.0:
                h = _absorb(h, ax, bond_matrix(gates[e], g.bond_dim(e)))
        absorbed[v] = h
    return eff, gates, absorbed


def _reconstruct_from(g: TNGraph, absorbed) -> np.ndarray:
    lab, _ = _labels(g)
    ops, lls = [], []
    for v in g.nodes():
        ops.append(absorbed[v])
        lls.append([lab[t] for t in g._axis_tags(v)])
    out = [lab[("p", m)] for m in range(len(g.external_shape))]
    return _cached_einsum(("recon", g.structure_key()), ops, lls, out)


def reconstruct(g: TNGraph, tau: float) -> np.ndarray:
    """Contract the whole network with gated bond operators in place."""
    _, _, absorbed = _engine_arrays(g, tau)
    return _reconstruct_from(g, absorbed)


def core_environment(g: TNGraph, v: int, gates, absorbed, cotangent: np.ndarray) -> np.ndarray:
    """d<cotangent, reconstruction> / d(effective core of v)."""
    lab, nxt = _labels(g)
    ops, lls, out = [], [], []
    for t in g._axis_tags(v):
        if t[0] == "e" and t[1][0] == v and gates[t[1]] != 1.0:
            e = t[1]
            fresh = nxt
            nxt += 1
            ops.append(bond_matrix(gates[e], g.bond_dim(e)))
            lls.append([fresh, lab[t]])
            out.append(fresh)
        else:
            out.append(lab[t])
    for w in g.nodes():
        if w != v:
            ops.append(absorbed[w])
            lls.append([lab[t] for t in g._axis_tags(w)])
    ops.append(cotangent)
    lls.append([lab[("p", m)] for m in range(len(g.external_shape))])
    key = ("env", v, g.structure_key(), tuple(e for e in g.edges() if gates[e] != 1.0))
    return _cached_einsum(key, ops, lls, out)


def bond_environment(g: TNGraph, e: EdgeKey, eff, gates, absorbed, cotangent: np.ndarray) -> np.ndarray:
    """d<cotangent, reconstruction> / dB_e as an (R, R) matrix."""
    lab, nxt = _labels(g)
    u, v = e
    alpha, beta = nxt, nxt + 1
    ops, lls = [], []
    for w in g.nodes():
        if w == u:
            # expose the raw side of e; absorb u's *other* owned bond operators
            h = eff[u]
            labels_u = []
            for ax, t in enumerate(g._axis_tags(u)):
                if t == ("e", e):
                    labels_u.append(alpha)
                else:
                    if t[0] == "e" and t[1][0] == u and gates[t[1]] != 1.0:
                        h = _absorb(h, ax, bond_matrix(gates[t[1]], g.bond_dim(t[1])))
                    labels_u.append(lab[t])
            ops.append(h)
            lls.append(labels_u)
        elif w == v:
            # v never owns e (u < v): its absorbed operand leaves e's axis raw
            ops.append(absorbed[v])
            lls.append([beta if t == ("e", e) else lab[t] for t in g._axis_tags(v)])
        else:
            ops.append(absorbed[w])
            lls.append([lab[t] for t in g._axis_tags(w)])
    ops.append(cotangent)
    lls.append([lab[("p", m)] for m in range(len(g.external_shape))])
    key = ("benv", e, g.structure_key(), tuple(x for x in g.edges() if gates[x] != 1.0))
    return _cached_einsum(key, ops, lls, [alpha, beta])


# -- parameter accounting -------------------------------------------------------


def param_count(g: TNGraph) -> int:
    """Total core entries.  Gates and diagonals are search-time scaffolding,
    absorbed by :func:`finalize` before reporting, so they are not counted."""
    return int(sum(g.core(v).size for v in g.nodes()))


def compression_ratio(g: TNGraph, shape=None) -> float:
    shape = g.external_shape if shape is None else tuple(shape)
    return 100.0 * param_count(g) / float(np.prod(shape, dtype=np.float64))


# -- structural edits -------------------------------------------------------------


def default_partition(g: TNGraph, v: int):
    """Default split bipartition of ``v``'s axes.

    Physical legs go to side A together with the bond subset minimizing the
    larger matricized dimension; the first minimizer in ascending bitmask
    order over bonds (sorted by edge key) wins.  Internal nodes split their
    bonds into two nonempty halves under the same rule.
    """
    t = g.core(v)
    nb = len(g.incident_edges(v))
    bond_sizes = [t.shape[i] for i in range(nb)]
    phys_axes = list(range(nb, t.ndim))
    phys_size = int(np.prod([t.shape[i] for i in phys_axes], dtype=np.int64)) if phys_axes else 1
    best = None
    for mask in range(2 ** nb):
        side_a = [i for i in range(nb) if mask >> i & 1]
        side_b = [i for i in range(nb) if not mask >> i & 1]
        if not side_b or (not phys_axes and not side_a):
            continue
        pa = phys_size * int(np.prod([bond_sizes[i] for i in side_a], dtype=np.int64) if side_a else 1)
        pb = int(np.prod([bond_sizes[i] for i in side_b], dtype=np.int64))
        score = max(pa, pb)
        if best is None or score < best[0]:
            best = (score, side_a + phys_axes, side_b)
    if best is None:
        raise ValueError(f"node {v} has no valid split partition")
    return best[1], best[2]


def split_node(g: TNGraph, v: int, partition, threshold: float,
               max_rank: int | None = None, new_edge_weight: float = 2.0) -> TNGraph:
    """Split ``v`` into two cores joined by a fresh SVD-derived bond.

    ``partition`` is a pair of axis-position lists covering ``v``'s axes,
    both nonempty.  Singular values split as sqrt to each side; the new edge
    starts decisively on (weight +2) with unit diagonals.
    """
    g = g.copy()
    part_a, part_b = [list(p) for p in partition]
    t = g.core(v)
    if sorted(part_a + part_b) != list(range(t.ndim)) or not part_a or not part_b:
        raise ValueError(f"invalid partition {partition} for order-{t.ndim} core")
    tags = g._axis_tags(v)
    tags_a = [tags[i] for i in part_a]
    tags_b = [tags[i] for i in part_b]

    dims_a = [t.shape[i] for i in part_a]
    dims_b = [t.shape[i] for i in part_b]
    m = np.transpose(t, part_a + part_b).reshape(
        int(np.prod(dims_a, dtype=np.int64)), int(np.prod(dims_b, dtype=np.int64)))
    ts = svd_truncated(m, threshold, max_rank)
    root = np.sqrt(ts.singular)
    core_a = (ts.left * root).reshape(dims_a + [ts.rank])
    core_b = np.moveaxis((root[:, None] * ts.right).reshape([ts.rank] + dims_b), 0, -1)

    ia = g._next
    ib = g._next + 1
    g._next += 2
    del g._tensors[v]
    del g._phys[v]

    def _rewire(tag_list, home):
        out = []
        for tg in tag_list:
            if tg[0] == "e":
                out.append(("e", g._rekey_edge(tg[1], v, home)))
            else:
                out.append(tg)
        return out

    # placeholders so _rekey_edge's diag moves land on real nodes
    g._tensors[ia] = core_a
    g._phys[ia] = ()
    g._tensors[ib] = core_b
    g._phys[ib] = ()
    new_tags_a = _rewire(tags_a, ia)
    new_tags_b = _rewire(tags_b, ib)

    enew = _ekey(ia, ib)
    g._edges[enew] = Edge(ts.rank, float(new_edge_weight))
    g._diags[(ia, enew)] = np.ones(ts.rank)
    g._diags[(ib, enew)] = np.ones(ts.rank)
    g._set_core_with_tags(ia, core_a, new_tags_a + [("e", enew)])
    g._set_core_with_tags(ib, core_b, new_tags_b + [("e", enew)])
    g.validate()
    return g


def merge_nodes(g: TNGraph, u: int, v: int, threshold: float, tau: float = 1e-3) -> TNGraph:
    """Contract ``u`` and ``v`` across their edge into one core.

    The shared edge's gate and both diagonal factors are absorbed exactly.
    Parallel bonds to a common neighbour are fused into one bond of product
    dimension (their scaffolding absorbed first).  Every remaining bond of
    the merged core is then re-derived: the effective crossing content is
    SVD-truncated at ``threshold``, the orthogonal factor folded into the
    neighbour, and the bond's scaffolding reset (weight +2, unit diagonals).
    Reconstruction change is bounded by the discarded spectra.
    """
    g = g.copy()
    e0 = _ekey(u, v)
    if e0 not in g._edges:
        raise ValueError(f"no edge between {u} and {v}")

    tags_u = [t for t in g._axis_tags(u) if t != ("e", e0)]
    tags_v = [t for t in g._axis_tags(v) if t != ("e", e0)]

    m0 = g.diagonal(u, e0)[:, None] \
        * bond_matrix(gate(g.edge_weight(e0), tau), g.bond_dim(e0)) \
        * g.diagonal(v, e0)[None, :]
    h = np.tensordot(g.core(u), m0, axes=([g.axis_of(u, e0)], [0]))
    w_t = np.tensordot(h, g.core(v), axes=([h.ndim - 1], [g.axis_of(v, e0)]))
    cur_tags = tags_u + tags_v  # old edge keys; owner tracked via tags_u membership

    wid = g._next
    g._next += 1
    del g._edges[e0], g._diags[(u, e0)], g._diags[(v, e0)]
    del g._tensors[u], g._tensors[v], g._phys[u], g._phys[v]
    g._tensors[wid] = w_t
    g._phys[wid] = ()

    # group surviving connections by neighbour; fuse where u and v both link x
    by_x: dict[int, list] = {}
    for t in cur_tags:
        if t[0] != "e":
            continue
        owner = u if t in tags_u else v
        e = t[1]
        x = e[0] if e[1] == owner else e[1]
        by_x.setdefault(x, []).append((t, owner, e))

    for x in sorted(by_x):
        entries = by_x[x]
        if len(entries) == 1:
            t, owner, e = entries[0]
            ne = _ekey(wid, x)
            tags_x = [("e", ne) if tg == ("e", e) else tg for tg in g._axis_tags(x)]
            g._edges[ne] = g._edges.pop(e)
            g._diags[(x, ne)] = g._diags.pop((x, e))
            g._diags[(wid, ne)] = g._diags.pop((owner, e))
            g._set_core_with_tags(x, g._tensors[x], tags_x)
            cur_tags[cur_tags.index(t)] = ("e", ne)
        else:
            (t1, o1, e1), (t2, o2, e2) = entries
            # absorb both edges' scaffolding into the merged tensor
            for t, o, e in entries:
                m = g._diags[(o, e)][:, None] \
                    * bond_matrix(gate(g._edges[e].weight, tau), g._edges[e].bond_dim) \
                    * g._diags[(x, e)][None, :]
                w_t = _absorb(w_t, cur_tags.index(t), m)
            p1, p2 = cur_tags.index(t1), cur_tags.index(t2)
            r1, r2 = g._edges[e1].bond_dim, g._edges[e2].bond_dim
            moved = np.moveaxis(w_t, [p1, p2], [0, 1])
            w_t = moved.reshape((r1 * r2,) + moved.shape[2:])
            # neighbour combines its two axes in the same (e1, e2) order
            tags_x = g._axis_tags(x)
            q1, q2 = tags_x.index(("e", e1)), tags_x.index(("e", e2))
            tx = np.moveaxis(g._tensors[x], [q1, q2], [0, 1])
            tx = tx.reshape((r1 * r2,) + tx.shape[2:])
            rest_x = [tg for tg in tags_x if tg not in (("e", e1), ("e", e2))]
            del g._edges[e1], g._edges[e2]
            del g._diags[(o1, e1)], g._diags[(x, e1)], g._diags[(o2, e2)], g._diags[(x, e2)]
            ne = _ekey(wid, x)
            g._edges[ne] = Edge(r1 * r2, 2.0)
            g._diags[(wid, ne)] = np.ones(r1 * r2)
            g._diags[(x, ne)] = np.ones(r1 * r2)
            g._set_core_with_tags(x, tx, [("e", ne)] + rest_x)
            cur_tags = [("e", ne)] + [tg for tg in cur_tags if tg not in (t1, t2)]

    g._set_core_with_tags(wid, w_t, cur_tags)

    for e in list(g.incident_edges(wid)):
        _retruncate_bond(g, wid, e, threshold, tau)
    g.validate()
    return g


def _retruncate_bond(g: TNGraph, wid: int, e: EdgeKey, threshold: float, tau: float) -> None:
    """Re-derive bond ``e`` of node ``wid``: SVD the effective crossing
    content, fold the orthogonal factor into the neighbour, reset the bond's
    gate weight (+2) and diagonals (ones)."""
    x = e[0] if e[1] == wid else e[1]
    ax_w = g.axis_of(wid, e)
    t = g.core(wid)
    r_old = t.shape[ax_w]
    k_mat = np.moveaxis(t, ax_w, 0).reshape(r_old, -1)
    m = g.diagonal(x, e)[:, None] \
        * bond_matrix(gate(g.edge_weight(e), tau), r_old) \
        * g.diagonal(wid, e)[None, :]
    ts = svd_truncated(m @ k_mat, threshold)

    ax_x = g.axis_of(x, e)
    g._tensors[x] = np.moveaxis(np.tensordot(g._tensors[x], ts.left, axes=([ax_x], [0])), -1, ax_x)
    rest_shape = tuple(s for i, s in enumerate(t.shape) if i != ax_w)
    g._tensors[wid] = np.moveaxis(
        (ts.singular[:, None] * ts.right).reshape((ts.rank,) + rest_shape), 0, ax_w)
    g._edges[e].bond_dim = ts.rank
    g._edges[e].weight = 2.0
    g._diags[(wid, e)] = np.ones(ts.rank)
    g._diags[(x, e)] = np.ones(ts.rank)


def edge_truncate(g: TNGraph, e: EdgeKey, threshold: float, tau: float = 1e-3) -> TNGraph:
    """Re-derive the bond on ``e``: contract the endpoint pair across it
    (gate and diagonals absorbed) and split back along the original core
    boundary with a truncated SVD.

    Topology, node identities, and all other bonds are unchanged; the bond
    dimension of ``e`` weakly decreases; reconstruction change is bounded by
    the discarded spectrum.  The re-derived bond restarts decisively on
    (weight +2) with unit diagonals.
    """
    u, v = e
    if e not in g._edges:
        raise ValueError(f"no edge between {u} and {v}")
    g = g.copy()

    tags_u = [t for t in g._axis_tags(u) if t != ("e", e)]
    tags_v = [t for t in g._axis_tags(v) if t != ("e", e)]
    m0 = g.diagonal(u, e)[:, None] \
        * bond_matrix(gate(g.edge_weight(e), tau), g.bond_dim(e)) \
        * g.diagonal(v, e)[None, :]
    h = np.tensordot(g.core(u), m0, axes=([g.axis_of(u, e)], [0]))
    w_t = np.tensordot(h, g.core(v), axes=([h.ndim - 1], [g.axis_of(v, e)]))

    na = len(tags_u)
    mat = w_t.reshape(int(np.prod(w_t.shape[:na], dtype=np.int64)) if na else 1,
                      int(np.prod(w_t.shape[na:], dtype=np.int64)) if w_t.ndim > na else 1)
    ts = svd_truncated(mat, threshold)
    root = np.sqrt(ts.singular)
    core_u = (ts.left * root).reshape(tuple(w_t.shape[:na]) + (ts.rank,))
    core_v = np.moveaxis((root[:, None] * ts.right).reshape((ts.rank,) + tuple(w_t.shape[na:])), 0, -1)

    g._edges[e] = Edge(ts.rank, 2.0)
    g._diags[(u, e)] = np.ones(ts.rank)
    g._diags[(v, e)] = np.ones(ts.rank)
    g._set_core_with_tags(u, core_u, tags_u + [("e", e)])
    g._set_core_with_tags(v, core_v, tags_v + [("e", e)])
    g.validate()
    return g


def harden(g: TNGraph, eps_diag: float, delta_gate: float, tau: float) -> StructureSignature:
    """Threshold gates and diagonals into a discrete signature.

    An edge survives iff its gate value is >= ``delta_gate``; a surviving
    edge's effective rank counts bond indices whose diagonal magnitude is
    >= ``eps_diag`` on both endpoints, floored at 1.
    """
    surviving = []
    ranks = []
    for e in g.edges():
        if gate(g.edge_weight(e), tau) >= delta_gate:
            du = np.abs(g.diagonal(e[0], e))
            dv = np.abs(g.diagonal(e[1], e))
            r = int(np.sum(np.minimum(du, dv) >= eps_diag))
            surviving.append(e)
            ranks.append((e, max(r, 1)))
    nodes = tuple((v, g.physical_modes(v)) for v in g.nodes())
    return StructureSignature(nodes, frozenset(surviving), tuple(ranks))


def finalize(g: TNGraph, delta_gate: float, tau: float) -> TNGraph:
    """Absorb scaffolding into cores for reporting: diagonals multiplied in,
    bond operators of kept edges contracted into the smaller endpoint, edges
    gated below ``delta_gate`` dropped to their uniform rank-1 component."""
    out = g.copy()
    for v in out.nodes():
        out._tensors[v] = out.effective(v)
        for e in out.incident_edges(v):
            out._diags[(v, e)] = np.ones(out.bond_dim(e))
    for e in out.edges():
        ge = gate(out.edge_weight(e), tau)
        u, v = e
        r = out.bond_dim(e)
        if ge >= delta_gate:
            if ge != 1.0:
                out._tensors[u] = _absorb(out.core(u), out.axis_of(u, e), bond_matrix(ge, r))
        else:
            vec = np.ones((r, 1)) / np.sqrt(r)
            for side in (u, v):
                out._tensors[side] = _absorb(out.core(side), out.axis_of(side, e), vec)
            out._edges[e].bond_dim = 1
            out._diags[(u, e)] = np.ones(1)
            out._diags[(v, e)] = np.ones(1)
        out._edges[e].weight = 5.0
    out.validate()
    return out
