import numpy as np
import pytest

from psilon.linalg import make_rng
from psilon.metrics import near_sparsity, network_sparsity
from psilon.nets import NetSpec, effective_weights, init_network
from psilon.reparam import L1WN, NONE


class TestNearSparsity:
    def test_zero_vector(self):
        assert near_sparsity(np.zeros(4)) == 1.0

    def test_bit_vector_matches_exact_sparsity(self):
        assert near_sparsity(np.array([1.0, 1.0, 0.0, 0.0])) == pytest.approx(0.5)

    def test_uniform_vector(self):
        for c in [1.0, -3.5, 0.01]:
            assert near_sparsity(np.full(4, c)) == pytest.approx(0.0, abs=1e-15)

    def test_all_bit_vectors(self):
        # the continuous extension agrees with 1 - popcount/d on every bit pattern
        d = 6
        for bits in range(1, 2**d):
            v = np.array([(bits >> i) & 1 for i in range(d)], dtype=np.float64)
            assert near_sparsity(v) == pytest.approx(1.0 - v.sum() / d, abs=1e-12)

    def test_invariances(self):
        rng = make_rng(0)
        for _ in range(50):
            v = rng.standard_normal(7)
            base = near_sparsity(v)
            assert near_sparsity(v[rng.permutation(7)]) == pytest.approx(base, rel=1e-12)
            assert near_sparsity(-v) == pytest.approx(base, rel=1e-12)
            assert near_sparsity(3.7 * v) == pytest.approx(base, rel=1e-12)
            signs = np.where(rng.uniform(size=7) < 0.5, -1.0, 1.0)
            assert near_sparsity(signs * v) == pytest.approx(base, rel=1e-12)

    def test_range_and_one_hot_extreme(self):
        rng = make_rng(1)
        d = 8
        for _ in range(100):
            v = rng.standard_normal(d)
            ns = near_sparsity(v)
            assert 0.0 <= ns <= 1.0 - 1.0 / d + 1e-12
        one_hot = np.zeros(d)
        one_hot[3] = -2.0
        assert near_sparsity(one_hot) == pytest.approx(1.0 - 1.0 / d)

    def test_two_hot_example(self):
        v = np.zeros(20)
        v[[3, 11]] = [1.0, -1.0]
        assert near_sparsity(v) == pytest.approx(0.9)


class TestNetworkSparsity:
    def test_one_hot_rows(self):
        spec = NetSpec(kind="mlp", d_in=4, d_out=4, hidden=[4], mode=NONE)
        net = init_network(spec, make_rng(2))
        for layer in net.layers():
            layer.raw[:] = np.eye(4)
        report = network_sparsity(net)
        assert report.network_nsparsity == pytest.approx(1.0 - 1.0 / 4)
        assert report.exact_sparsity == pytest.approx(0.75)
        assert all(0.0 <= x <= 1.0 for x in report.per_vector)

    def test_uniform_rows(self):
        spec = NetSpec(kind="mlp", d_in=4, d_out=4, hidden=[4], mode=NONE)
        net = init_network(spec, make_rng(3))
        for layer in net.layers():
            layer.raw[:] = 1.0
        report = network_sparsity(net)
        assert report.network_nsparsity == pytest.approx(0.0, abs=1e-12)
        assert report.exact_sparsity == 0.0

    def test_counts_both_pair_matrices(self):
        spec = NetSpec(kind="crelu_resnet", d_in=3, d_out=2, hidden=[4, 4], mode=L1WN)
        net = init_network(spec, make_rng(4))
        report = network_sparsity(net)
        n_rows = sum(w.shape[0] for w in effective_weights(net))
        assert len(report.per_vector) == n_rows
        # interior blocks sit at zero length at init: their rows are all-zero
        assert any(x == 1.0 for x in report.per_vector)
