import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqel import numcore as nc
from vqel.errors import ConfigError, DegenerateInputError, DimensionError, ParameterError
from vqel.numcore import Tensor
from vqel.vq import AssignmentBatch, Codebook, commitment_loss, sample_categorical


def scan_nearest(codes, z, metric):
    """Exhaustive loop over codes, first strict minimum wins."""
    out = []
    for row in z:
        best, best_d = 0, np.inf
        for k, e in enumerate(codes):
            if metric == "Cosine":
                d = 1.0 - row @ e / (np.linalg.norm(row) * np.linalg.norm(e))
            else:
                d = float(((row - e) ** 2).sum())
            if d < best_d:
                best, best_d = k, d
        out.append(best)
    return np.array(out)


class TestHardAssignment:
    @pytest.mark.parametrize("metric", ["Cosine", "Euclidean"])
    def test_matches_exhaustive_scan(self, metric):
        rng = np.random.default_rng(3)
        cb = Codebook(10, 8, metric=metric, rng=rng)
        z = rng.standard_normal((1000, 8))
        idx, vec = cb.assign_hard(z)
        np.testing.assert_array_equal(idx, scan_nearest(cb.codes, z, metric))
        np.testing.assert_array_equal(vec, cb.codes[idx])

    def test_tie_goes_to_lowest_index(self):
        cb = Codebook(3, 2, metric="Euclidean", rng=np.random.default_rng(0))
        cb.codes = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        idx, _ = cb.assign_hard(np.array([[0.0, 1.0], [2.0, 0.0]]))
        np.testing.assert_array_equal(idx, [0, 0])

    def test_cosine_distance_values(self):
        cb = Codebook(2, 2, rng=np.random.default_rng(0))
        cb.codes = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(cb.distances(np.array([2.0, 0.0])), [0.0, 1.0])

    def test_small_cases(self):
        cb = Codebook(2, 2, metric="Euclidean", rng=np.random.default_rng(0))
        cb.codes = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(cb.distances(np.array([1.0, 0.0])), [0.0, 2.0])
        assert cb.assign_hard(np.array([[0.9, 0.1]]))[0][0] == 0

    def test_dimension_mismatch(self):
        cb = Codebook(4, 3, rng=np.random.default_rng(0))
        with pytest.raises(DimensionError):
            cb.distances(np.ones((2, 5)))

    def test_bad_sizes(self):
        with pytest.raises(ParameterError):
            Codebook(1, 3)


class TestSoftAssignment:
    def test_low_temperature_is_hard(self):
        rng = np.random.default_rng(0)
        cb = Codebook(10, 6, rng=rng)
        z = cb.prepare(Tensor(rng.standard_normal((50, 6))))
        idx, _, _ = cb.assign_soft(z, 1e-6, rng)
        np.testing.assert_array_equal(idx, cb.assign_hard(z.data)[0])

    def test_high_temperature_is_uniform(self):
        rng = np.random.default_rng(0)
        cb = Codebook(10, 4, rng=rng)
        _, _, logp = cb.assign_soft(cb.prepare(Tensor(rng.standard_normal((3, 4)))), 1e6, rng)
        np.testing.assert_allclose(np.exp(logp.data), 0.1, atol=1e-6)

    def test_soft_argmax_is_hard(self):
        rng = np.random.default_rng(8)
        cb = Codebook(10, 4, rng=rng)
        z = cb.prepare(Tensor(rng.standard_normal((200, 4))))
        _, _, logp = cb.assign_soft(z, 0.5, rng)
        np.testing.assert_array_equal(np.argmax(logp.data, axis=1), cb.assign_hard(z.data)[0])

    def test_equal_distances_sample_uniformly(self):
        # two codes symmetric about the input: frequencies near 1/2
        cb = Codebook(2, 2, rng=np.random.default_rng(0))
        cb.codes = np.array([[1.0, 0.0], [0.0, 1.0]])
        z = cb.prepare(Tensor(np.tile([1.0, 1.0], (20000, 1))))
        idx, lp, _ = cb.assign_soft(z, 0.5, np.random.default_rng(1))
        assert abs(idx.mean() - 0.5) < 3 * np.sqrt(0.25 / idx.size)
        np.testing.assert_allclose(lp.data, np.log(0.5))

    def test_frequencies_match_softmax(self):
        rng = np.random.default_rng(5)
        cb = Codebook(4, 3, rng=rng)
        z_row = rng.standard_normal(3)
        n = 40000
        z = cb.prepare(Tensor(np.tile(z_row, (n, 1))))
        idx, _, logp = cb.assign_soft(z, 0.3, rng)
        p = np.exp(logp.data[0])
        freq = np.bincount(idx, minlength=4) / n
        assert np.all(np.abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-12)

    def test_logprob_gradient(self):
        rng = np.random.default_rng(2)
        cb = Codebook(5, 4, rng=rng)
        x = rng.standard_normal((3, 4))
        idx, _, _ = cb.assign_soft(cb.prepare(Tensor(x)), 0.7, np.random.default_rng(9))

        def build(t):
            logp = nc.log_softmax(nc.scale(cb.distance_tensor(cb.prepare(t)), -1.0), 0.7)
            return nc.sum_(nc.pick(logp, idx))

        t = Tensor(x.copy(), requires_grad=True)
        nc.backward(build(t))
        num = nc.numerical_grad(lambda: build(Tensor(x)).item(), x, step=1e-5)
        assert nc.relative_error(t.grad, num) < 1e-4

    def test_euclidean_distance_gradient(self):
        rng = np.random.default_rng(4)
        cb = Codebook(5, 4, metric="Euclidean", rng=rng)
        x = rng.standard_normal((3, 4))
        w = Tensor(rng.standard_normal((3, 5)))
        t = Tensor(x.copy(), requires_grad=True)
        nc.backward(nc.sum_(nc.mul(cb.distance_tensor(t), w)))
        num = nc.numerical_grad(lambda: nc.sum_(nc.mul(cb.distance_tensor(Tensor(x)), w)).item(), x,
                                step=1e-5)
        assert nc.relative_error(t.grad, num) < 1e-4
        np.testing.assert_allclose(cb.distance_tensor(Tensor(x)).data, cb.distances(x), atol=1e-12)

    def test_zero_input_rejected(self):
        cb = Codebook(3, 2, rng=np.random.default_rng(0))
        with pytest.raises(DegenerateInputError):
            cb.assign_soft(Tensor(np.zeros((1, 2))), 1.0, np.random.default_rng(0))

    def test_bad_temperature(self):
        cb = Codebook(3, 2, rng=np.random.default_rng(0))
        with pytest.raises(ParameterError):
            cb.assign_soft(Tensor(np.ones((1, 2))), 0.0, np.random.default_rng(0))


class TestSampleCategorical:
    def test_point_mass(self):
        probs = np.array([[0.0, 1.0, 0.0]] * 100)
        assert np.all(sample_categorical(probs, np.random.default_rng(0)) == 1)

    def test_never_picks_zero_mass(self):
        probs = np.array([[0.5, 0.0, 0.5]] * 5000)
        assert not np.any(sample_categorical(probs, np.random.default_rng(0)) == 1)


def ema_reference(codes0, batches, K, gamma, eps, cosine):
    """Scalar loop over codes and coordinates."""
    d = codes0.shape[1]
    n_k = [1.0] * K
    m = [[float(codes0[k, j]) for j in range(d)] for k in range(K)]
    codes = None
    for z, idx in batches:
        for k in range(K):
            cnt = sum(1 for i in idx if i == k)
            n_k[k] = gamma * n_k[k] + (1 - gamma) * cnt
            for j in range(d):
                s = sum(z[r, j] for r in range(len(idx)) if idx[r] == k)
                m[k][j] = gamma * m[k][j] + (1 - gamma) * s
        total = sum(n_k)
        codes = []
        for k in range(K):
            sm = (n_k[k] + eps) / (total + K * eps) * total
            row = [m[k][j] / sm for j in range(d)]
            if cosine:
                nrm = sum(v * v for v in row) ** 0.5
                row = [v / nrm for v in row]
            codes.append(row)
    return np.array(codes), np.array(n_k), np.array(m)


class TestEMA:
    @pytest.mark.parametrize("metric", ["Euclidean", "Cosine"])
    def test_matches_scalar_loop(self, metric):
        rng = np.random.default_rng(11)
        cb = Codebook(4, 3, metric=metric, decay=0.9, eps=1e-5, rng=rng)
        codes0 = cb.codes.copy()
        batches = []
        for _ in range(5):
            z = rng.standard_normal((6, 3))
            if metric == "Cosine":
                z = z / np.linalg.norm(z, axis=1, keepdims=True)
            idx = rng.integers(0, 3, size=6)  # code 3 never chosen
            batches.append((z, idx))
            cb.ema_update(AssignmentBatch(z, idx, np.empty((0, 4))))
        codes, n_k, m = ema_reference(codes0, batches, 4, 0.9, 1e-5, metric == "Cosine")
        np.testing.assert_allclose(cb.codes, codes, atol=1e-12)
        np.testing.assert_allclose(cb.ema_cluster_size, n_k, atol=1e-12)
        np.testing.assert_allclose(cb.ema_embed_sum, m, atol=1e-12)

    def test_single_code_limit(self):
        # every input on code 0, decay 0: code becomes the batch mean
        cb = Codebook(2, 2, metric="Euclidean", decay=0.0, eps=1e-12, rng=np.random.default_rng(0))
        z = np.array([[1.0, 2.0], [3.0, 4.0]])
        cb.ema_update(AssignmentBatch(z, np.array([0, 0]), np.empty((0, 2))))
        np.testing.assert_allclose(cb.codes[0], [2.0, 3.0], rtol=1e-10)

    def test_cosine_codes_stay_unit(self):
        rng = np.random.default_rng(0)
        cb = Codebook(10, 16, rng=rng)
        for _ in range(300):
            z = rng.standard_normal((32, 16))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            cb.learn(AssignmentBatch(z, cb.assign_hard(z)[0], np.empty((0, 10))), rng)
            np.testing.assert_allclose(np.linalg.norm(cb.codes, axis=1), 1.0, atol=1e-12)


class TestExpiry:
    def test_dead_code_reseeded_from_pool(self):
        rng = np.random.default_rng(0)
        cb = Codebook(4, 2, metric="Euclidean", rng=rng, expiry_every=100, expiry_warmup=200)
        z = np.array([[5.0, 5.0], [6.0, 6.0]])
        replaced = []
        for _ in range(200):
            replaced.append(cb.learn(AssignmentBatch(z, np.array([0, 0]), np.empty((0, 4))), rng))
        assert sum(replaced[:199]) == 0
        assert replaced[199] == 3
        for k in (1, 2, 3):
            assert any(np.array_equal(cb.codes[k], row) for row in z)
            assert cb.usage_ema[k] == pytest.approx(0.25)
            assert cb.ema_cluster_size[k] == 1.0

    def test_used_codes_survive(self):
        rng = np.random.default_rng(0)
        cb = Codebook(2, 2, metric="Euclidean", rng=rng, expiry_warmup=200, expiry_every=10)
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        for _ in range(500):
            assert cb.learn(AssignmentBatch(z, np.array([0, 1]), np.empty((0, 2))), rng) == 0

    def test_empty_pool(self):
        cb = Codebook(2, 2, rng=np.random.default_rng(0))
        with pytest.raises(ConfigError):
            cb.expire_stale(np.empty((0, 2)), np.random.default_rng(0))

    def test_default_threshold(self):
        assert Codebook(10, 4).expiry_threshold == pytest.approx(0.025)


class TestCommitment:
    def test_value(self):
        z = Tensor(np.array([[1.0, 2.0], [0.0, 0.0]]))
        np.testing.assert_allclose(commitment_loss(z, np.array([[0.0, 0.0], [3.0, 4.0]])).data,
                                   [5.0, 25.0])

    def test_gradient_never_reaches_codebook(self):
        rng = np.random.default_rng(0)
        codes = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        z = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        nc.backward(nc.sum_(commitment_loss(z, codes)))
        assert codes.grad is None
        np.testing.assert_allclose(z.grad, 2 * (z.data - codes.data))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            commitment_loss(Tensor(np.ones((2, 3))), np.ones((2, 2)))


class TestStateDict:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        a = Codebook(5, 3, rng=rng)
        z = rng.standard_normal((10, 3))
        a.learn(AssignmentBatch(z / np.linalg.norm(z, axis=1, keepdims=True),
                                np.arange(10) % 5, np.empty((0, 5))), rng)
        b = Codebook(5, 3, rng=np.random.default_rng(1))
        b.load_state_dict(a.state_dict())
        for k, v in a.state_dict().items():
            np.testing.assert_array_equal(v, b.state_dict()[k])


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    def test_cosine_assignment_scale_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        cb = Codebook(6, 5, rng=rng)
        z = rng.standard_normal((20, 5))
        np.testing.assert_array_equal(cb.assign_hard(z)[0], cb.assign_hard(c * z)[0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_cosine_distance_range(self, seed):
        rng = np.random.default_rng(seed)
        cb = Codebook(6, 5, rng=rng)
        d = cb.distances(rng.standard_normal((20, 5)))
        assert np.all(d >= -1e-12) and np.all(d <= 2 + 1e-12)
