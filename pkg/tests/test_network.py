import math

import numpy as np
import pytest

from fairclf.errors import DataError, NumericalError
from fairclf.network import (
    AdamState,
    Gradients,
    MlpParams,
    adam_step,
    backward,
    bce_loss,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
)


def tiny_params():
    """d=1, widths (2, 2), hand-set weights for paper-and-pencil checks."""
    return MlpParams(
        w1=np.array([[1.0], [-1.0]]),
        b1=np.array([0.5, 0.5]),
        w2=np.array([[1.0, 2.0], [0.5, -1.0]]),
        b2=np.array([0.0, 0.25]),
        w3=np.array([[2.0, -1.0]]),
        b3=np.array([0.125]),
    )


def random_params(rng, d, h1, h2):
    return MlpParams(
        w1=rng.normal(0, 1, (h1, d)),
        b1=rng.normal(0, 0.3, h1),
        w2=rng.normal(0, 1, (h2, h1)),
        b2=rng.normal(0, 0.3, h2),
        w3=rng.normal(0, 1, (1, h2)),
        b3=rng.normal(0, 0.3, 1),
    )


def numeric_loss(params, x, y):
    cache = forward(params, x)
    loss, _ = bce_loss(cache, y)
    return loss


def fd_gradients(params, x, y, h=1e-4):
    """Central finite differences through the whole network + loss."""
    grads = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = numeric_loss(params, x, y)
            arr[idx] = orig - h
            dn = numeric_loss(params, x, y)
            arr[idx] = orig
            g[idx] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


class TestInit:
    def test_deterministic(self):
        a = init_params(4, seed=7)
        b = init_params(4, seed=7)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_biases_zero(self):
        p = init_params(3, seed=0)
        assert not p.b1.any() and not p.b2.any() and not p.b3.any()

    def test_fan_in_variance(self):
        p = init_params(512, seed=11)
        sample_var = p.w1.var()
        assert abs(sample_var - 2.0 / 512) < 0.2 * (2.0 / 512)

    def test_shapes(self):
        p = init_params(6, seed=0, hidden=(8, 4))
        assert p.w1.shape == (8, 6)
        assert p.w2.shape == (4, 8)
        assert p.w3.shape == (1, 4)
        assert p.layer_sizes == (8, 4, 1)

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            init_params(0, seed=0)


class TestForward:
    def test_zero_params_give_half_probability(self, backend):
        p = MlpParams(
            w1=np.zeros((4, 3)), b1=np.zeros(4),
            w2=np.zeros((2, 4)), b2=np.zeros(2),
            w3=np.zeros((1, 2)), b3=np.zeros(1),
        )
        cache = forward(p, np.random.default_rng(0).normal(size=(5, 3)))
        assert np.array_equal(cache.logits, np.zeros(5))
        assert np.array_equal(sigmoid(cache.logits), np.full(5, 0.5))

    def test_hand_computed_logit(self, backend):
        cache = forward(tiny_params(), np.array([[0.3]]))
        # z1 = [0.8, 0.2]; z2 = [1.2, 0.45]; logit = 2*1.2 - 0.45 + 0.125
        assert cache.logits[0] == pytest.approx(2.075, abs=1e-12)

    def test_duplicated_rows_identical_logits(self, backend, rng):
        p = random_params(rng, 3, 5, 4)
        row = rng.normal(size=(1, 3))
        cache = forward(p, np.repeat(row, 7, axis=0))
        assert np.all(cache.logits == cache.logits[0])

    def test_row_permutation_permutes_logits(self, backend, rng):
        p = random_params(rng, 4, 6, 3)
        x = rng.normal(size=(10, 4))
        perm = rng.permutation(10)
        a = forward(p, x).logits
        b = forward(p, x[perm]).logits
        assert np.allclose(a[perm], b, atol=1e-12)

    def test_nonfinite_input_rejected(self):
        p = init_params(2, seed=0, hidden=(3, 2))
        with pytest.raises(DataError):
            forward(p, np.array([[1.0, np.nan]]))

    def test_width_mismatch_rejected(self):
        p = init_params(2, seed=0, hidden=(3, 2))
        with pytest.raises(ValueError):
            forward(p, np.ones((4, 3)))


class TestBceLoss:
    def test_logit_zero_label_one(self):
        p = tiny_params()
        cache = forward(p, np.array([[0.3]]))
        cache.logits = np.array([0.0])
        loss, grad = bce_loss(cache, np.array([1.0]))
        assert loss == pytest.approx(math.log(2.0))
        assert grad[0] == pytest.approx(-0.5)

    def test_gradient_matches_finite_differences(self, rng):
        h = 1e-6
        for _ in range(20):
            n = 8
            z = rng.normal(0, 3, n)
            y = rng.integers(0, 2, n).astype(float)
            cache = forward(tiny_params(), rng.normal(size=(n, 1)))
            cache.logits = z.copy()
            _, grad = bce_loss(cache, y)
            for i in range(n):
                up, dn = z.copy(), z.copy()
                up[i] += h
                dn[i] -= h
                cu = forward(tiny_params(), np.zeros((n, 1)))
                cu.logits = up
                lu, _ = bce_loss(cu, y)
                cu.logits = dn
                ld, _ = bce_loss(cu, y)
                fd = (lu - ld) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_nonnegative_and_stable_at_extremes(self):
        cache = forward(tiny_params(), np.zeros((3, 1)))
        cache.logits = np.array([500.0, -500.0, 0.0])
        loss, grad = bce_loss(cache, np.array([1.0, 0.0, 1.0]))
        assert np.isfinite(loss) and loss >= 0.0
        assert np.isfinite(grad).all()

    def test_mean_invariant_under_permutation(self, rng):
        z = rng.normal(0, 2, 9)
        y = rng.integers(0, 2, 9).astype(float)
        perm = rng.permutation(9)
        c1 = forward(tiny_params(), np.zeros((9, 1)))
        c1.logits = z
        c2 = forward(tiny_params(), np.zeros((9, 1)))
        c2.logits = z[perm]
        l1, _ = bce_loss(c1, y)
        l2, _ = bce_loss(c2, y[perm])
        assert l1 == pytest.approx(l2, abs=1e-12)


class TestBackward:
    def test_zero_upstream_zero_gradients(self, backend, rng):
        p = random_params(rng, 2, 4, 3)
        cache = forward(p, rng.normal(size=(5, 2)))
        g = backward(p, cache, np.zeros(5))
        assert all(not a.any() for a in g.arrays())

    def test_matches_finite_differences(self, backend, rng):
        for _ in range(5):
            p = random_params(rng, 2, 4, 3)
            x = rng.normal(size=(6, 2))
            y = rng.integers(0, 2, 6).astype(float)
            cache = forward(p, x)
            _, dlogits = bce_loss(cache, y)
            analytic = backward(p, cache, dlogits)
            numeric = fd_gradients(p, x, y, h=1e-4)
            for a, n_ in zip(analytic.arrays(), numeric):
                denom = np.maximum(np.abs(n_), 1e-3)
                assert (np.abs(a - n_) / denom < 1e-5).all()

    def test_duplicated_example_doubles_contribution(self, backend, rng):
        p = random_params(rng, 3, 4, 2)
        row = rng.normal(size=(1, 3))
        c1 = forward(p, row)
        g1 = backward(p, c1, np.array([0.37]))
        c2 = forward(p, np.repeat(row, 2, axis=0))
        g2 = backward(p, c2, np.array([0.37, 0.37]))
        for a, b in zip(g1.arrays(), g2.arrays()):
            assert np.allclose(2 * a, b, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch_rejected(self, rng):
        p = random_params(rng, 2, 3, 2)
        cache = forward(p, rng.normal(size=(4, 2)))
        with pytest.raises(ValueError):
            backward(p, cache, np.zeros(5))


class TestAdam:
    def test_first_step_closed_form(self, backend):
        p = init_params(2, seed=3, hidden=(3, 2))
        s = AdamState.for_params(p)
        g = Gradients(*(np.ones_like(a) for a in p.arrays()))
        new_p, new_s = adam_step(p, s, g)
        expected = 5e-4 / (1.0 + 1e-8)
        for old, new in zip(p.arrays(), new_p.arrays()):
            assert np.allclose(old - new, expected, atol=1e-15)
        assert new_s.t == 1

    def test_zero_gradient_is_noop(self, backend):
        p = init_params(2, seed=4, hidden=(3, 2))
        s = AdamState.for_params(p)
        g = Gradients(*(np.zeros_like(a) for a in p.arrays()))
        new_p, _ = adam_step(p, s, g)
        for old, new in zip(p.arrays(), new_p.arrays()):
            assert np.array_equal(old, new)

    def test_equal_gradients_equal_updates(self, backend):
        p = init_params(1, seed=5, hidden=(2, 2))
        s = AdamState.for_params(p)
        g = Gradients(*(np.full_like(a, 0.7) for a in p.arrays()))
        new_p, _ = adam_step(p, s, g)
        deltas = np.concatenate([(o - n).ravel() for o, n in zip(p.arrays(), new_p.arrays())])
        assert np.allclose(deltas, deltas[0], atol=1e-15)

    def test_nonfinite_gradient_rejected(self):
        p = init_params(1, seed=6, hidden=(2, 2))
        s = AdamState.for_params(p)
        arrays = [np.zeros_like(a) for a in p.arrays()]
        arrays[0][0, 0] = np.inf
        with pytest.raises(NumericalError):
            adam_step(p, s, Gradients(*arrays))

    def test_functional_originals_untouched(self, backend):
        p = init_params(2, seed=8, hidden=(3, 2))
        snapshot = [a.copy() for a in p.arrays()]
        s = AdamState.for_params(p)
        g = Gradients(*(np.ones_like(a) for a in p.arrays()))
        adam_step(p, s, g)
        for a, b in zip(p.arrays(), snapshot):
            assert np.array_equal(a, b)
        assert s.t == 0


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        p = random_params(rng, 5, 8, 3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path, header_extra={"seed": 9, "epoch": 4, "metrics": {"val_f1": 0.5}})
        loaded, header = load_checkpoint(path)
        assert header["dim"] == 5
        assert header["epoch"] == 4
        # float32 quantization happens exactly once
        for orig, back in zip(p.arrays(), loaded.arrays()):
            assert np.array_equal(orig.astype(np.float32).astype(np.float64), back)
        path2 = tmp_path / "m2.ckpt"
        save_checkpoint(loaded, path2, header_extra={"seed": 9, "epoch": 4, "metrics": {"val_f1": 0.5}})
        assert path.read_bytes() == path2.read_bytes()

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_truncated_blob_rejected(self, tmp_path, rng):
        p = random_params(rng, 3, 4, 2)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(DataError):
            load_checkpoint(path)
