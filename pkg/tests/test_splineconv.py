import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normmatch import KeypointGraph, ParameterStore, build_graph, grad_check, spline_basis
from normmatch.gradcheck import all_passed
from normmatch.splineconv import (
    gnn_refine,
    gnn_refine_backward,
    init_gnn_params,
    spline_conv_backward,
    spline_conv_forward,
)


def _manual_graph(num_nodes, arcs, pseudo):
    return KeypointGraph(
        num_nodes=num_nodes,
        arcs=np.asarray(arcs, dtype=np.intp).reshape(-1, 2),
        pseudo=np.asarray(pseudo, dtype=np.float64).reshape(-1, 2),
        self_loops=True,
    )


class TestSplineBasis:
    def test_origin_corner_is_single_knot(self):
        assert spline_basis(np.array([0.0, 0.0]), 5) == [((0, 0), 1.0)]

    def test_center_hits_exact_knot(self):
        assert spline_basis(np.array([0.5, 0.5]), 5) == [((2, 2), 1.0)]

    def test_far_corner_clamps_to_last_knot(self):
        assert spline_basis(np.array([1.0, 1.0]), 3) == [((2, 2), 1.0)]

    def test_mixed_coordinate_splits_weight(self):
        pairs = spline_basis(np.array([0.3, 0.0]), 5)
        assert [idx for idx, _ in pairs] == [(1, 0), (2, 0)]
        weights = [w for _, w in pairs]
        np.testing.assert_allclose(weights, [0.8, 0.2], atol=1e-12)

    def test_interior_point_activates_four_knots(self):
        pairs = spline_basis(np.array([0.3, 0.7]), 5)
        assert len(pairs) == 4
        assert {idx for idx, _ in pairs} == {(1, 2), (1, 3), (2, 2), (2, 3)}

    @given(
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.integers(2, 8),
    )
    @settings(max_examples=200, deadline=None)
    def test_partition_of_unity(self, u1, u2, kernel_size):
        pairs = spline_basis(np.array([u1, u2]), kernel_size)
        assert 1 <= len(pairs) <= 4
        total = 0.0
        for (i1, i2), w in pairs:
            assert 0 <= i1 < kernel_size
            assert 0 <= i2 < kernel_size
            assert w > 0.0
            total += w
        assert abs(total - 1.0) < 1e-12

    def test_outside_domain_rejected(self):
        with pytest.raises(ValueError):
            spline_basis(np.array([1.0001, 0.0]), 5)
        with pytest.raises(ValueError):
            spline_basis(np.array([0.5, -0.0001]), 5)

    def test_kernel_size_below_two_rejected(self):
        with pytest.raises(ValueError):
            spline_basis(np.array([0.5, 0.5]), 1)


def _dense_reference(features, graph, weight, bias, apply_relu):
    """Per-arc dense (K^2, in, out) contraction, then max, bias, ReLU."""
    k2, _, out_dim = weight.shape
    kernel = int(round(np.sqrt(k2)))
    best = np.full((graph.num_nodes, out_dim), -np.inf)
    for arc_idx in range(len(graph.arcs)):
        u, v = graph.arcs[arc_idx]
        dense = np.zeros(k2)
        s = graph.pseudo[arc_idx] * (kernel - 1)
        lo = np.minimum(s.astype(int), kernel - 2)
        frac = s - lo
        for a, wa in ((0, 1.0 - frac[0]), (1, frac[0])):
            for b, wb in ((0, 1.0 - frac[1]), (1, frac[1])):
                dense[(lo[0] + a) * kernel + (lo[1] + b)] = wa * wb
        msg = np.einsum("b,i,bio->o", dense, features[u], weight)
        best[v] = np.maximum(best[v], msg)
    out = best + bias
    return np.maximum(out, 0.0) if apply_relu else out


class TestSplineConv:
    def test_identity_kernel_single_node(self):
        graph = _manual_graph(1, [(0, 0)], [(0.5, 0.5)])
        weight = np.zeros((25, 2, 2))
        weight[2 * 5 + 2] = np.eye(2)  # the knot that (0.5, 0.5) activates
        out, _ = spline_conv_forward(
            np.array([[1.0, -1.0]]), graph, weight, np.zeros(2), apply_relu=True
        )
        np.testing.assert_allclose(out, [[1.0, 0.0]])

    def test_zero_weights_output_relu_of_bias(self):
        graph = _manual_graph(2, [(0, 1), (1, 0), (0, 0), (1, 1)], [(0.2, 0.9)] * 4)
        weight = np.zeros((9, 3, 2))
        bias = np.array([0.5, -0.25])
        feats = np.arange(6.0).reshape(2, 3)
        out, _ = spline_conv_forward(feats, graph, weight, bias, apply_relu=True)
        np.testing.assert_allclose(out, [[0.5, 0.0], [0.5, 0.0]])

    @pytest.mark.parametrize("apply_relu", [False, True])
    def test_matches_dense_contraction_reference(self, apply_relu):
        rng = np.random.default_rng(11)
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        graph = build_graph(pts)
        feats = rng.standard_normal((4, 3))
        weight = rng.standard_normal((25, 3, 4))
        bias = rng.standard_normal(4)
        out, _ = spline_conv_forward(feats, graph, weight, bias, apply_relu)
        ref = _dense_reference(feats, graph, weight, bias, apply_relu)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_matches_dense_reference_on_random_graphs(self):
        for seed in range(6):
            rng = np.random.default_rng(500 + seed)
            m = int(rng.integers(3, 9))
            graph = build_graph(rng.uniform(0.0, 8.0, size=(m, 2)))
            feats = rng.standard_normal((m, 5))
            weight = rng.standard_normal((16, 5, 3))
            bias = rng.standard_normal(3)
            out, _ = spline_conv_forward(feats, graph, weight, bias, apply_relu=True)
            ref = _dense_reference(feats, graph, weight, bias, apply_relu=True)
            np.testing.assert_allclose(out, ref, atol=1e-12, err_msg=f"seed {seed}")

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        m = 6
        graph = build_graph(rng.uniform(0.0, 5.0, size=(m, 2)))
        feats = rng.standard_normal((m, 4))
        weight = rng.standard_normal((9, 4, 4))
        bias = rng.standard_normal(4)
        out1, _ = spline_conv_forward(feats, graph, weight, bias, apply_relu=True)

        perm = rng.permutation(m)
        reorder = rng.permutation(len(graph.arcs))
        relabeled = KeypointGraph(
            num_nodes=m,
            arcs=perm[graph.arcs][reorder],
            pseudo=graph.pseudo[reorder],
            self_loops=True,
        )
        feats_perm = np.empty_like(feats)
        feats_perm[perm] = feats
        out2, _ = spline_conv_forward(feats_perm, relabeled, weight, bias, apply_relu=True)
        np.testing.assert_allclose(out2[perm], out1, atol=1e-12)

    def test_isolated_vertex_rejected(self):
        graph = _manual_graph(2, [(0, 0)], [(0.5, 0.5)])
        with pytest.raises(ValueError, match="isolated"):
            spline_conv_forward(np.ones((2, 2)), graph, np.zeros((4, 2, 2)), np.zeros(2), True)

    def test_width_mismatch_rejected(self):
        graph = _manual_graph(1, [(0, 0)], [(0.5, 0.5)])
        with pytest.raises(ValueError, match="width"):
            spline_conv_forward(np.ones((1, 3)), graph, np.zeros((4, 2, 2)), np.zeros(2), True)

    def test_max_tie_routes_gradient_to_lowest_arc(self):
        # nodes 0 and 1 send identical messages to node 2; the subgradient
        # must pick the (0 -> 2) arc because it comes first
        graph = _manual_graph(
            3,
            [(0, 2), (1, 2), (0, 0), (1, 1), (2, 2)],
            [(0.5, 0.5)] * 5,
        )
        weight = np.zeros((9, 2, 2))
        weight[4] = np.eye(2)  # (0.5, 0.5) with K=3 activates knot (1,1)
        feats = np.array([[1.0, 1.0], [1.0, 1.0], [-5.0, -5.0]])
        out, cache = spline_conv_forward(feats, graph, weight, np.zeros(2), apply_relu=False)
        np.testing.assert_allclose(out[2], [1.0, 1.0])
        g_feats, _, _ = spline_conv_backward(cache, np.ones((3, 2)))
        # node 0 receives gradient from its self-loop and from node 2's pick;
        # node 1 only from its own self-loop
        np.testing.assert_allclose(g_feats[0], [2.0, 2.0])
        np.testing.assert_allclose(g_feats[1], [1.0, 1.0])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(42)
        m = 5
        graph = build_graph(rng.uniform(0.0, 6.0, size=(m, 2)))
        feats = rng.standard_normal((m, 3))
        weight = rng.standard_normal((9, 3, 4))
        bias = rng.standard_normal(4)
        probe = rng.standard_normal((m, 4))

        def scalar(f, w, b):
            out, _ = spline_conv_forward(f, graph, w, b, apply_relu=True)
            return float((out * probe).sum())

        _, cache = spline_conv_forward(feats, graph, weight, bias, apply_relu=True)
        g_feats, g_weight, g_bias = spline_conv_backward(cache, probe)

        eps = 1e-6
        for arr, grad, name in ((feats, g_feats, "f"), (weight, g_weight, "w"), (bias, g_bias, "b")):
            flat = arr.ravel()
            coords = rng.choice(flat.size, size=min(20, flat.size), replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + eps
                hi = scalar(feats, weight, bias)
                flat[c] = orig - eps
                lo = scalar(feats, weight, bias)
                flat[c] = orig
                numeric = (hi - lo) / (2 * eps)
                analytic = grad.ravel()[c]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                assert rel < 1e-4, f"{name}[{c}]: analytic {analytic}, numeric {numeric}"


class TestGnnRefine:
    def _setup(self, m=5, in_dim=32, d_model=16, kernel_size=5, seed=0):
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        init_gnn_params(store, rng, in_dim, d_model, kernel_size)
        graph = build_graph(rng.uniform(0.0, 10.0, size=(m, 2)))
        feats = rng.standard_normal((m, in_dim))
        return store, graph, feats

    def test_shapes_and_unit_rows(self):
        store, graph, feats = self._setup()
        out, _ = gnn_refine(feats, graph, store)
        assert out.shape == (5, 16)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)

    def test_width_mismatch_raises(self):
        store, graph, feats = self._setup()
        with pytest.raises(ValueError, match="width"):
            gnn_refine(feats[:, :-1], graph, store)

    def test_permutation_equivariance(self):
        store, graph, feats = self._setup(m=7)
        rng = np.random.default_rng(9)
        out1, _ = gnn_refine(feats, graph, store)

        perm = rng.permutation(7)
        reorder = rng.permutation(len(graph.arcs))
        relabeled = KeypointGraph(
            num_nodes=7,
            arcs=perm[graph.arcs][reorder],
            pseudo=graph.pseudo[reorder],
            self_loops=True,
        )
        feats_perm = np.empty_like(feats)
        feats_perm[perm] = feats
        out2, _ = gnn_refine(feats_perm, relabeled, store)
        np.testing.assert_allclose(out2[perm], out1, atol=1e-12)

    def test_parameter_gradients_pass_check(self):
        store, graph, feats = self._setup(m=4, in_dim=6, d_model=8, kernel_size=3, seed=1)
        rng = np.random.default_rng(2)
        probe = rng.standard_normal((4, 8))

        def forward(params):
            out, cache = gnn_refine(feats, graph, params)
            gnn_refine_backward(cache, probe, params)
            return float((out * probe).sum())

        reports = grad_check(forward, store, rng=np.random.default_rng(3))
        assert all_passed(reports), "\n".join(str(r) for r in reports)

    def test_feature_gradient_matches_finite_differences(self):
        store, graph, feats = self._setup(m=4, in_dim=6, d_model=8, kernel_size=3, seed=1)
        rng = np.random.default_rng(4)
        probe = rng.standard_normal((4, 8))
        _, cache = gnn_refine(feats, graph, store)
        g_feats = gnn_refine_backward(cache, probe, store)

        eps = 1e-6
        flat = feats.ravel()
        for c in rng.choice(flat.size, size=12, replace=False):
            orig = flat[c]
            flat[c] = orig + eps
            hi = float((gnn_refine(feats, graph, store)[0] * probe).sum())
            flat[c] = orig - eps
            lo = float((gnn_refine(feats, graph, store)[0] * probe).sum())
            flat[c] = orig
            numeric = (hi - lo) / (2 * eps)
            analytic = g_feats.ravel()[c]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            assert rel < 1e-4
