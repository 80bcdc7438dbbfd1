import numpy as np
import pytest

from esmselect import store
from esmselect.esm import (Esm, EsmTrainConfig, apply_esm, train_esm_closed_form,
                           train_esm_iterative)
from esmselect.store import EmbeddingMatrix

from oracles import naive_apply


def dyadic_linear_instance(rng, n, d):
    """Training pair where tuned = W @ base + b holds *exactly* in float32:
    integer inputs, weights and biases on a 1/64 grid, all sums below 2**24."""
    x = rng.integers(-8, 9, size=(n, d)).astype(np.float32)
    w = (rng.integers(-128, 129, size=(d, d)) / 64.0).astype(np.float32)
    b = (rng.integers(-128, 129, size=d) / 64.0).astype(np.float32)
    y = (x.astype(np.float64) @ w.astype(np.float64).T + b).astype(np.float32)
    assert np.array_equal(y.astype(np.float64),
                          x.astype(np.float64) @ w.astype(np.float64).T + b)
    return EmbeddingMatrix(x), EmbeddingMatrix(y), w, b


def noisy_linear_instance(seed, n=50, d=3, scale=25.0, noise=0.2):
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal((n, d)) * scale).astype(np.float32)
    w = np.eye(d) + 0.3 * rng.standard_normal((d, d)) / np.sqrt(d)
    b = 0.05 * rng.standard_normal(d)
    y = (x.astype(np.float64) @ w.T + b + noise * rng.standard_normal((n, d)))
    return EmbeddingMatrix(x), EmbeddingMatrix(y.astype(np.float32))


class TestClosedForm:
    def test_identity_map(self):
        rng = np.random.default_rng(0)
        base = EmbeddingMatrix(rng.standard_normal((40, 5)).astype(np.float32))
        esm = train_esm_closed_form(base, base, 0.0)
        assert np.abs(esm.weight - np.eye(5)).max() < 1e-6
        assert np.abs(esm.bias).max() < 1e-6

    def test_recovers_known_map(self):
        base, tuned, w, b = dyadic_linear_instance(np.random.default_rng(1), 50, 3)
        esm = train_esm_closed_form(base, tuned, 0.0)
        assert np.linalg.norm(esm.weight - w) < 1e-6
        assert np.linalg.norm(esm.bias - b) < 1e-6

    def test_parameter_count_768(self):
        esm = Esm.identity(768)
        assert esm.param_count == 590_592
        assert esm.param_count < 600_000

    def test_row_mismatch(self):
        a = EmbeddingMatrix(np.ones((3, 2), dtype=np.float32))
        b = EmbeddingMatrix(np.ones((4, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="row count mismatch"):
            train_esm_closed_form(a, b, 0.0)

    def test_negative_lambda(self):
        a = EmbeddingMatrix(np.ones((3, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="nonnegative"):
            train_esm_closed_form(a, a, -1.0)

    def test_underdetermined_warns(self):
        rng = np.random.default_rng(2)
        base = EmbeddingMatrix(rng.standard_normal((3, 5)).astype(np.float32))
        with pytest.warns(UserWarning, match="underdetermined"):
            train_esm_closed_form(base, base, 0.0)

    def test_residual_in_meta(self):
        base, tuned = noisy_linear_instance(5)
        esm = train_esm_closed_form(base, tuned, 0.0)
        assert esm.meta["train_mse"] > 0
        assert esm.meta["train_sse"] == pytest.approx(
            esm.meta["train_mse"] * base.n * tuned.d)

    def test_ridge_shrinks_weights(self):
        base, tuned = noisy_linear_instance(6)
        free = train_esm_closed_form(base, tuned, 0.0)
        ridged = train_esm_closed_form(base, tuned, 1e4)
        assert np.linalg.norm(ridged.weight) < np.linalg.norm(free.weight)


class TestIterative:
    def test_descent_from_random_init(self):
        # generic instance: zero init (d_in != d_out), loss must not increase
        rng = np.random.default_rng(7)
        base = EmbeddingMatrix(rng.standard_normal((60, 4)).astype(np.float32))
        tuned = EmbeddingMatrix(rng.standard_normal((60, 3)).astype(np.float32))
        initial = float(np.mean(tuned.data.astype(np.float64) ** 2))  # zero-map loss
        esm = train_esm_iterative(base, tuned, EsmTrainConfig(method="iterative", seed=0))
        assert esm.meta["train_mse"] <= initial

    def test_identity_start_stays_near_zero_loss(self):
        # tuned == base with identity init: the only drift is weight decay,
        # which moves the loss from exactly 0 to O((lr*wd*steps)^2)
        rng = np.random.default_rng(8)
        base = EmbeddingMatrix(rng.standard_normal((64, 4)).astype(np.float32))
        esm = train_esm_iterative(base, base, EsmTrainConfig(method="iterative", seed=0))
        steps = 10 * (64 // 32)
        drift = (1.0 - (1.0 - 0.001 * 0.01) ** steps) ** 2
        bound = 4.0 * drift * float(np.mean(base.data.astype(np.float64) ** 2))
        assert esm.meta["train_mse"] <= bound

    def test_matches_closed_form_within_10x(self):
        base, tuned = noisy_linear_instance(303)
        cfg = EsmTrainConfig(method="iterative", epochs=10, learning_rate=0.001,
                             weight_decay=0.01, batch_size=25, seed=3)
        iterative = train_esm_iterative(base, tuned, cfg)
        # wd-equivalent ridge: decoupled decay's stationary point minimizes
        # sum-of-squares + (n*d_out*wd/2) * |W|_F^2 under the mean-loss scaling
        lam_eq = base.n * tuned.d * cfg.weight_decay / 2.0
        closed = train_esm_closed_form(base, tuned, lam_eq)
        assert iterative.meta["train_mse"] <= 10.0 * closed.meta["train_mse"]

    def test_closed_form_is_the_optimum(self):
        base, tuned = noisy_linear_instance(304)
        cfg = EsmTrainConfig(method="iterative", batch_size=25, seed=4)
        iterative = train_esm_iterative(base, tuned, cfg)
        lam_eq = base.n * tuned.d * cfg.weight_decay / 2.0
        closed = train_esm_closed_form(base, tuned, lam_eq)
        assert closed.meta["train_mse"] <= iterative.meta["train_mse"] + 1e-9

    def test_divergence_names_epoch(self):
        base, tuned = noisy_linear_instance(9)
        cfg = EsmTrainConfig(method="iterative", learning_rate=1e6, seed=0)
        with pytest.raises(ValueError, match=r"diverged at epoch \d+"):
            train_esm_iterative(base, tuned, cfg)

    def test_deterministic_given_seed(self):
        base, tuned = noisy_linear_instance(10)
        cfg = EsmTrainConfig(method="iterative", seed=11)
        a = train_esm_iterative(base, tuned, cfg)
        b = train_esm_iterative(base, tuned, cfg)
        assert a.weight.tobytes() == b.weight.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()

    def test_hyperparameters_recorded(self):
        base, tuned = noisy_linear_instance(12)
        esm = train_esm_iterative(base, tuned, EsmTrainConfig(method="iterative"))
        hyper = esm.meta["hyperparameters"]
        assert hyper["epochs"] == 10
        assert hyper["learning_rate"] == 0.001
        assert hyper["weight_decay"] == 0.01

    def test_config_validation(self):
        with pytest.raises(ValueError, match="epochs"):
            EsmTrainConfig(epochs=0)
        with pytest.raises(ValueError, match="learning_rate"):
            EsmTrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError, match="weight_decay"):
            EsmTrainConfig(weight_decay=-0.1)


class TestApply:
    def test_identity(self):
        rng = np.random.default_rng(20)
        x = EmbeddingMatrix(rng.standard_normal((10, 6)).astype(np.float32))
        out = apply_esm(Esm.identity(6), x)
        assert out.data.tobytes() == x.data.tobytes()

    def test_scaling(self):
        esm = Esm(weight=2.0 * np.eye(2, dtype=np.float32),
                  bias=np.zeros(2, dtype=np.float32))
        out = apply_esm(esm, EmbeddingMatrix(np.array([[1.0, 1.0]], dtype=np.float32)))
        assert np.array_equal(out.data, [[2.0, 2.0]])

    def test_matches_naive_matvec(self):
        rng = np.random.default_rng(21)
        esm = Esm(weight=rng.standard_normal((4, 7)).astype(np.float32),
                  bias=rng.standard_normal(4).astype(np.float32))
        x = rng.standard_normal((15, 7)).astype(np.float32)
        out = apply_esm(esm, EmbeddingMatrix(x))
        expected = naive_apply(esm.weight.astype(np.float64),
                               esm.bias.astype(np.float64), x.astype(np.float64))
        assert np.abs(out.data - expected).max() < 1e-6

    def test_dimension_mismatch(self):
        esm = Esm.identity(3)
        with pytest.raises(ValueError, match="dimension mismatch"):
            apply_esm(esm, EmbeddingMatrix(np.ones((2, 4), dtype=np.float32)))

    def test_linearity(self):
        rng = np.random.default_rng(22)
        esm = Esm(weight=rng.standard_normal((5, 5)).astype(np.float32),
                  bias=rng.standard_normal(5).astype(np.float32))
        x = rng.standard_normal((8, 5)).astype(np.float32)
        z = rng.standard_normal((8, 5)).astype(np.float32)
        lhs = apply_esm(esm, EmbeddingMatrix(x + z)).data
        rhs = apply_esm(esm, EmbeddingMatrix(x)).data + apply_esm(esm, EmbeddingMatrix(z)).data
        assert np.abs(lhs - rhs + esm.bias).max() < 1e-5

    def test_output_shape(self):
        rng = np.random.default_rng(23)
        esm = Esm(weight=rng.standard_normal((3, 7)).astype(np.float32),
                  bias=np.zeros(3, dtype=np.float32))
        out = apply_esm(esm, EmbeddingMatrix(rng.standard_normal((9, 7)).astype(np.float32)))
        assert (out.n, out.d) == (9, 3)


def test_train_write_read_apply_bit_exact(tmp_path):
    base, tuned = noisy_linear_instance(30)
    esm = train_esm_closed_form(base, tuned, 0.5)
    path = tmp_path / "m.esmw"
    store.write_esm(esm, path)
    loaded = store.read_esm(path)
    direct = apply_esm(esm, base)
    via_disk = apply_esm(loaded, base)
    assert direct.data.tobytes() == via_disk.data.tobytes()
