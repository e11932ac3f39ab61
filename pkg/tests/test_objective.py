import math

import numpy as np
import pytest

from rgtn.graph import TNGraph, reconstruct
from rgtn.objective import (
    CouplingConstants,
    binary_entropy,
    couplings_at_scale,
    data_gradients,
    grad_total_loss,
    loss_and_grad,
    soft_threshold,
    tnn,
    total_loss,
)

from conftest import fd_check
from test_graph import random_graph


def small_graph(rng, n_modes=3):
    dims = [int(rng.integers(2, 4)) for _ in range(n_modes)]
    g = TNGraph(dims)
    bonds = {}
    for v in range(n_modes):
        prev = (v - 1) % n_modes
        bonds.setdefault(tuple(sorted((prev, v))), int(rng.integers(1, 3)))
    for v in range(n_modes):
        inc = sorted(e for e in bonds if v in e)
        g.add_core(rng.standard_normal([bonds[e] for e in inc] + [dims[v]]), [v], node_id=v)
    for e, b in sorted(bonds.items()):
        g.add_edge(*e, bond_dim=b, weight=float(rng.normal(0.5, 0.8)),
                   diag_u=rng.uniform(0.4, 1.6, b), diag_v=rng.uniform(0.4, 1.6, b))
    g.validate()
    return g


class TestBinaryEntropy:
    def test_maximum(self):
        assert binary_entropy(0.5) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_limits(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_value_at_09(self):
        # -0.9 ln 0.9 - 0.1 ln 0.1
        assert binary_entropy(0.9) == pytest.approx(0.32508297339144845, abs=1e-10)

    def test_domain(self):
        with pytest.raises(ValueError):
            binary_entropy(1.1)


class TestTnn:
    def test_zero(self):
        assert tnn(np.zeros((3, 4, 2))) == 0.0

    def test_homogeneous(self, rng):
        x = rng.standard_normal((3, 4, 2))
        c = -2.7
        assert tnn(c * x) == pytest.approx(abs(c) * tnn(x), rel=1e-12)

    def test_uniform_weights_match_spectrum_oracle(self, rng):
        x = rng.standard_normal((4, 4, 4))
        want = sum(np.linalg.svd(np.moveaxis(x, k, 0).reshape(4, -1), compute_uv=False).sum()
                   for k in range(3)) / 3.0
        assert tnn(x) == pytest.approx(want, rel=1e-10)

    def test_bad_weights(self, rng):
        with pytest.raises(ValueError):
            tnn(rng.standard_normal((2, 2)), weights=[1.0])


class TestSoftThreshold:
    def test_basic(self):
        assert soft_threshold(5.0, 2.0) == 3.0

    def test_dead_zone(self):
        assert soft_threshold(-1.0, 2.0) == 0.0

    def test_zero_theta_identity(self, rng):
        z = rng.standard_normal(10)
        assert np.array_equal(soft_threshold(z, 0.0), z)

    def test_is_proximal_operator(self, rng):
        # grid minimization of 1/2 (x - z)^2 + theta |x|
        grid_step = 1e-3
        for _ in range(20):
            z = float(rng.uniform(-4, 4))
            theta = float(rng.uniform(0, 3))
            xs = np.arange(-6.0, 6.0, grid_step)
            obj = 0.5 * (xs - z) ** 2 + theta * np.abs(xs)
            xstar = xs[np.argmin(obj)]
            assert abs(soft_threshold(z, theta) - xstar) <= grid_step


class TestCouplings:
    def test_flat_defaults(self):
        base = CouplingConstants()
        out = couplings_at_scale(base, 5)
        assert (out.alpha, out.beta, out.gamma, out.delta, out.epsilon) == (0.0, 0.0, 0.01, 0.001, 0.1)

    def test_geometric_running(self):
        base = CouplingConstants(gamma=0.01)
        out = couplings_at_scale(base, 3, rho={"gamma": 2.0})
        assert out.gamma == pytest.approx(0.08)

    def test_scale_zero_is_base(self):
        base = CouplingConstants(alpha=0.3, beta=0.2)
        out = couplings_at_scale(base, 0, rho={"alpha": 7.0})
        assert out == base


class TestTotalLoss:
    def test_exact_fit_zero_couplings(self, rng):
        g = random_graph(rng, max_nodes=3)
        data = reconstruct(g, 1e-3)
        c = CouplingConstants(gamma=0, delta=0, epsilon=0)
        lb = total_loss(g, data, None, c, 1e-3)
        assert lb.total == pytest.approx(0.0, abs=1e-18)

    def test_data_term_arithmetic(self):
        g = TNGraph((2, 2))
        g.add_core(np.zeros((2, 2)), [0, 1], node_id=0)
        c = CouplingConstants(gamma=0, delta=0, epsilon=0)
        lb = total_loss(g, np.ones((2, 2)), np.ones((2, 2)), c, 1e-3)
        assert lb.data == pytest.approx(2.0)
        assert lb.total == pytest.approx(2.0)

    def test_terms_match_formula_oracle(self, rng):
        g = small_graph(rng, 3)
        data = rng.standard_normal(g.external_shape)
        mask = (rng.random(g.external_shape) < 0.6).astype(float)
        c = CouplingConstants(alpha=0.2, beta=0.15, gamma=0.01, delta=0.001, epsilon=0.1)
        tau = 0.5
        lb = total_loss(g, data, mask, c, tau, temporal_mode=0, spatial_modes=(1, 2))
        x = reconstruct(g, tau)

        want_data = 0.5 * np.sum((mask * (x - data)) ** 2)
        want_temporal = sum(np.linalg.norm(x[t + 1] - x[t]) for t in range(x.shape[0] - 1))
        want_spatial = (np.linalg.norm(np.diff(x, axis=1)) + np.linalg.norm(np.diff(x, axis=2)))
        want_diag = sum(np.abs(g.diagonal(v, e)).sum()
                        for v in g.nodes() for e in g.incident_edges(v))
        from rgtn.graph import gate
        want_entropy = sum(binary_entropy(gate(g.edge_weight(e), tau)) for e in g.edges())
        want_tnn = tnn(x)

        assert lb.data == pytest.approx(want_data, rel=1e-10)
        assert lb.temporal == pytest.approx(want_temporal, rel=1e-10)
        assert lb.spatial == pytest.approx(want_spatial, rel=1e-10)
        assert lb.diag_sparsity == pytest.approx(want_diag, rel=1e-10)
        assert lb.edge_entropy == pytest.approx(want_entropy, rel=1e-10)
        assert lb.tnn == pytest.approx(want_tnn, rel=1e-10)

    def test_total_reassembles_from_parts(self, rng):
        g = small_graph(rng, 3)
        data = rng.standard_normal(g.external_shape)
        c = CouplingConstants(alpha=0.2, beta=0.15, gamma=0.01, delta=0.001, epsilon=0.1)
        lb = total_loss(g, data, None, c, 0.5, temporal_mode=0, spatial_modes=(1, 2))
        want = (lb.data + c.alpha * lb.temporal + c.beta * lb.spatial
                + c.gamma * lb.diag_sparsity + c.delta * lb.edge_entropy + c.epsilon * lb.tnn)
        assert lb.total == pytest.approx(want, abs=1e-12)

    def test_invariant_under_node_relabeling(self, rng):
        dims = (3, 4)
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((2, 4))
        du, dv = rng.uniform(0.5, 1.5, 2), rng.uniform(0.5, 1.5, 2)
        data = rng.standard_normal(dims)

        g1 = TNGraph(dims)
        g1.add_core(a, [0], node_id=0)
        g1.add_core(b, [1], node_id=1)
        g1.add_edge(0, 1, 2, weight=0.7, diag_u=du, diag_v=dv)

        g2 = TNGraph(dims)
        g2.add_core(b, [1], node_id=3)
        g2.add_core(a, [0], node_id=7)
        g2.add_edge(3, 7, 2, weight=0.7, diag_u=dv, diag_v=du)

        c = CouplingConstants()
        l1 = total_loss(g1, data, None, c, 0.5)
        l2 = total_loss(g2, data, None, c, 0.5)
        assert l1.total == pytest.approx(l2.total, rel=1e-12)

    def test_diag_term_piecewise_linear(self, rng):
        g = small_graph(rng, 3)
        data = rng.standard_normal(g.external_shape)
        c = CouplingConstants()
        l1 = total_loss(g, data, None, c, 0.5)
        for v in g.nodes():
            for e in g.incident_edges(v):
                g.set_diagonal(v, e, 2.0 * g.diagonal(v, e))
        l2 = total_loss(g, data, None, c, 0.5)
        assert l2.diag_sparsity == pytest.approx(2.0 * l1.diag_sparsity, rel=1e-12)

    def test_shape_mismatch(self, rng):
        g = small_graph(rng, 3)
        with pytest.raises(ValueError):
            total_loss(g, np.zeros((9, 9, 9)), None, CouplingConstants(), 0.5)


class TestGradients:
    def test_stationary_at_exact_fit(self, rng):
        g = random_graph(rng, max_nodes=3)
        data = reconstruct(g, 1e-3)
        c = CouplingConstants(gamma=0, delta=0, epsilon=0)
        bundle = grad_total_loss(g, data, None, c, 1e-3)
        for v in g.nodes():
            assert np.abs(bundle.cores[v]).max() < 1e-10

    def test_matches_finite_differences(self, rng):
        failures = []
        for trial in range(6):
            g = small_graph(rng, n_modes=3)
            data = rng.standard_normal(g.external_shape)
            mask = (rng.random(g.external_shape) < 0.7).astype(float)
            c = CouplingConstants(alpha=0.2, beta=0.15, gamma=0.01, delta=0.001, epsilon=0.1)
            bad = fd_check(g, data, mask, c, tau=0.5, temporal_mode=0, spatial_modes=(1, 2))
            failures.extend((trial, *b) for b in bad)
        assert not failures, failures[:10]

    def test_fd_with_saturated_gates(self, rng):
        g = small_graph(rng, 3)
        for e in g.edges():
            g.set_edge_weight(e, 3.0)
        data = rng.standard_normal(g.external_shape)
        c = CouplingConstants(gamma=0.01, delta=0.001, epsilon=0.0)
        bad = fd_check(g, data, None, c, tau=1e-3)
        assert not bad, bad[:10]

    def test_gate_gradient_on_rank_one_cut(self, rng):
        # an edge whose cut content is exactly rank 1 transmits the same
        # through B(g) for every g, so only the entropy term moves the gate
        g = TNGraph((4, 5))
        u = rng.standard_normal((1, 4))
        v = rng.standard_normal((1, 5))
        pad_u = np.zeros((3, 4))
        pad_v = np.zeros((3, 5))
        cu = np.concatenate([u, pad_u], axis=0)
        cv = np.concatenate([v, pad_v], axis=0)
        # make the single used direction the uniform one so B(g) acts as identity on it
        q = np.ones(4) / 2.0
        basis = np.linalg.qr(np.column_stack([q, rng.standard_normal((4, 3))]))[0]
        cu = basis @ cu
        cv = basis @ cv
        g.add_core(cu, [0], node_id=0)
        g.add_core(cv, [1], node_id=1)
        g.add_edge(0, 1, 4, weight=0.0)
        data = rng.standard_normal((4, 5))
        tau = 0.5
        c = CouplingConstants(gamma=0.0, delta=1.0, epsilon=0.0)
        bundle = grad_total_loss(g, data, None, c, tau)
        # analytic entropy derivative at w=0: -(w/tau) * sigma' = 0
        assert abs(bundle.gates[(0, 1)]) < 1e-8

    def test_data_gradients_are_data_term_only(self, rng):
        g = small_graph(rng, 3)
        data = rng.standard_normal(g.external_shape)
        c = CouplingConstants(gamma=0, delta=0, epsilon=0)
        full = grad_total_loss(g, data, None, c, 0.5)
        dg = data_gradients(g, data, None, 0.5)
        for v in g.nodes():
            assert np.allclose(full.cores[v], dg[v], rtol=1e-12)

    def test_loss_and_grad_consistent(self, rng):
        g = small_graph(rng, 3)
        data = rng.standard_normal(g.external_shape)
        c = CouplingConstants()
        lb1, bundle = loss_and_grad(g, data, None, c, 0.5)
        lb2 = total_loss(g, data, None, c, 0.5)
        assert lb1 == lb2
        assert set(bundle.cores) == set(g.nodes())
        assert set(bundle.gates) == set(g.edges())
