import numpy as np
import pytest

from fxpnn.codebook import BiasQuantizer, build_weight_codebook
from fxpnn.comm import build_constellation
from fxpnn.fxp import FixedPointFormat
from fxpnn.lc import (
    LcSchedule,
    LcState,
    TrainingData,
    TrainingDivergedError,
    augmented_loss,
    compression_step,
    dc_quantize,
    lc_train,
    learning_step,
    multiplier_update,
    pretrain,
)
from fxpnn.nn import Adam, MlpArchitecture, MlpModel, loss_and_gradient, quantized_from_reals

FMT = FixedPointFormat(5, 8)
CB = build_weight_codebook(FMT.total_bits)
BQ = BiasQuantizer(FMT)
SMALL = MlpArchitecture(8, (8, 8), 16)
ONE = MlpArchitecture(1, (), 1, (False,))


def zero_loss(psi, inputs, labels):
    return 0.0, np.zeros_like(psi)


def no_data():
    return None, None


def small_data(seed=0, batch=64):
    return TrainingData(build_constellation(16), 10.0, batch, np.random.default_rng(seed))


class TestSchedule:
    def test_validation(self):
        with pytest.raises(ValueError):
            LcSchedule(a=1.0)
        with pytest.raises(ValueError):
            LcSchedule(mu0=0)
        with pytest.raises(ValueError):
            LcSchedule(stop_tol=0)

    def test_default_tolerance(self):
        assert LcSchedule().tolerance(10848) == pytest.approx(1e-3 * np.sqrt(10848))


class TestDc:
    def test_on_codebook_is_identity(self):
        rng = np.random.default_rng(0)
        mask = SMALL.weight_mask()
        p = np.empty(SMALL.n_params)
        p[mask] = rng.choice(CB.entries, mask.sum())
        p[~mask] = BQ.quantize(rng.uniform(-3, 3, (~mask).sum()))
        q = dc_quantize(MlpModel(SMALL, p), FMT)
        np.testing.assert_array_equal(q.dequantize().params, p)

    def test_single_weight(self):
        q = dc_quantize(MlpModel(ONE, np.array([0.3])), FMT)
        assert q.dequantize().params[0] == 0.25


class TestSteps:
    def test_compression_examples(self):
        s = LcState(np.array([0.3]), np.zeros(1), np.zeros(1), 1.0)
        assert compression_step(s, np.array([True]), CB, BQ)[0] == 0.25
        s = LcState(np.array([0.25]), np.zeros(1), np.array([-0.0125]), 1.0)
        assert compression_step(s, np.array([True]), CB, BQ)[0] == 0.25

    def test_compression_optimal(self):
        rng = np.random.default_rng(1)
        n = 3000
        mask = rng.random(n) < 0.7
        s = LcState(rng.normal(scale=2, size=n), np.zeros(n), rng.normal(scale=0.1, size=n), 0.7)
        got = compression_step(s, mask, CB, BQ)
        target = s.psi - s.lam / s.mu
        d_best = np.abs(CB.entries[None, :] - target[mask, None]).min(axis=1)
        assert np.all(np.abs(got[mask] - target[mask]) <= d_best)
        grid = np.arange(-FMT.max_raw, FMT.max_raw + 1) * FMT.step
        d_grid = np.abs(grid[None, :] - target[~mask, None]).min(axis=1)
        assert np.all(np.abs(got[~mask] - target[~mask]) <= d_grid)
        assert CB.contains_all(got[mask]) and BQ.contains_all(got[~mask])

    def test_multiplier_update(self):
        psi = np.full(4, 0.35)
        s = LcState(psi, psi.copy(), np.full(4, 0.2), 3.0)
        np.testing.assert_array_equal(multiplier_update(s), s.lam)
        s = LcState(psi, psi - 0.1, np.zeros(4), 1.0)
        np.testing.assert_allclose(multiplier_update(s), -0.1)
        d, mu = 0.1, 2.5
        s = LcState(psi, psi - d, np.zeros(4), mu)
        s.lam = multiplier_update(s)
        s.lam = multiplier_update(s)
        np.testing.assert_allclose(s.lam, -2 * mu * d)

    @staticmethod
    def _minimise(state, loss_fn):
        # coarse then fine Adam phases stand in for an exact minimisation
        opt = Adam(len(state.psi))
        psi, _ = learning_step(state, no_data, LcSchedule(learn_steps=3000), loss_fn, opt, lr=1e-2)
        state = LcState(psi, state.psi_hat, state.lam, state.mu)
        psi, _ = learning_step(state, no_data, LcSchedule(learn_steps=3000), loss_fn, opt, lr=1e-4)
        return psi

    def test_learning_step_zero_loss(self):
        rng = np.random.default_rng(2)
        psi_hat = rng.choice(CB.entries[20:31], 50)
        psi = self._minimise(LcState(rng.normal(size=50), psi_hat, np.zeros(50), 1.0), zero_loss)
        assert np.abs(psi - psi_hat).max() < 1e-3
        lam = rng.normal(scale=0.2, size=50)
        psi = self._minimise(LcState(rng.normal(size=50), psi_hat, lam, 2.0), zero_loss)
        assert np.abs(psi - (psi_hat + lam / 2.0)).max() < 1e-3

    def test_augmented_gradient_fd(self):
        rng = np.random.default_rng(3)
        model = MlpModel.glorot(SMALL, rng)
        x = rng.normal(size=(16, 8))
        y = rng.integers(0, 16, 16)
        s = LcState(model.params.copy(), CB.quantize(model.params), rng.normal(scale=0.01, size=SMALL.n_params), 0.3)

        def loss_fn(psi, inputs, labels):
            return loss_and_gradient(MlpModel(SMALL, psi), inputs, labels)

        _, grad = augmented_loss(loss_fn, s, x, y)
        fd = np.empty(SMALL.n_params)
        for i in range(SMALL.n_params):
            vals = []
            for step in (1e-5, -1e-5):
                p = s.psi.copy()
                p[i] += step
                vals.append(augmented_loss(loss_fn, LcState(p, s.psi_hat, s.lam, s.mu), x, y)[0])
            fd[i] = (vals[0] - vals[1]) / 2e-5
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-4

    def test_larger_mu_not_farther(self):
        # convex toy loss 0.5 ||psi - t||^2; exact minimiser gap is ||t - psi_hat|| / (1 + mu)
        rng = np.random.default_rng(4)
        t = rng.normal(size=20)
        psi_hat = CB.quantize(t)

        def toy(psi, inputs, labels):
            return 0.5 * float((psi - t) @ (psi - t)), psi - t

        gaps = []
        for mu in (0.5, 1.0, 2.0, 4.0):
            psi = self._minimise(LcState(t.copy(), psi_hat, np.zeros(20), mu), toy)
            gaps.append(np.linalg.norm(psi - psi_hat))
            assert gaps[-1] == pytest.approx(np.linalg.norm(t - psi_hat) / (1 + mu), rel=1e-2)
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))

    def test_objective_decreases_on_fixed_batch(self):
        rng = np.random.default_rng(5)
        model = MlpModel.glorot(SMALL, rng)
        batch = small_data(5)()
        s = LcState(model.params.copy(), CB.quantize(model.params), np.zeros(SMALL.n_params), 0.1)

        def loss_fn(psi, inputs, labels):
            return loss_and_gradient(MlpModel(SMALL, psi), inputs, labels)

        values = []
        opt = Adam(SMALL.n_params)
        for _ in range(50):
            v, _ = augmented_loss(loss_fn, s, *batch)
            values.append(v)
            s.psi, _ = learning_step(s, lambda: batch, LcSchedule(learn_steps=1), loss_fn, opt, lr=1e-4)
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_divergence(self):
        def bad(psi, inputs, labels):
            return float("nan"), np.zeros_like(psi)

        s = LcState(np.zeros(3), np.zeros(3), np.zeros(3), 1.0)
        with pytest.raises(TrainingDivergedError):
            learning_step(s, no_data, LcSchedule(learn_steps=2), bad)


class TestLcTrain:
    SCHED = dict(max_iters=12, learn_steps=100, a=1.5, mu0=1e-2, pretrain_steps=200, lr=3e-3, batch_size=64)

    def test_zero_loss_stub_converges_immediately(self):
        rng = np.random.default_rng(6)
        model = MlpModel(SMALL, rng.normal(scale=0.3, size=SMALL.n_params))
        sched = LcSchedule(pretrain_steps=0, learn_steps=3000, lr=3e-3, stop_tol=0.05)
        qm, trace, state = lc_train(model, sched, no_data, FMT, loss_fn=zero_loss)
        assert trace.converged and len(trace.rows) == 1
        assert np.abs(state.psi - state.psi_hat).max() < 5e-3
        assert qm.flags == ()

    def test_small_task(self):
        model = MlpModel.glorot(SMALL, np.random.default_rng(7))
        qm, trace, state = lc_train(model, LcSchedule(**self.SCHED), small_data(7), FMT)
        mask = SMALL.weight_mask()
        assert CB.contains_all(state.psi_hat[mask]) and BQ.contains_all(state.psi_hat[~mask])
        assert all(np.isfinite(r[2]) for r in trace.rows)
        quantized_from_reals(SMALL, qm.dequantize().params, FMT)
        mus = [r[1] for r in trace.rows]
        np.testing.assert_allclose(np.array(mus[1:]) / mus[:-1], 1.5)
        csv = trace.to_csv().splitlines()
        assert csv[0] == "iter,mu,psi_gap,loss" and len(csv) == len(trace.rows) + 1

    def test_not_converged_flag(self):
        model = MlpModel.glorot(SMALL, np.random.default_rng(8))
        sched = LcSchedule(**{**self.SCHED, "max_iters": 2, "stop_tol": 1e-9})
        qm, trace, _ = lc_train(model, sched, small_data(8), FMT)
        assert not trace.converged and qm.flags == ("lc-not-converged",)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            model = MlpModel.glorot(SMALL, np.random.default_rng(9))
            qm, trace, _ = lc_train(model, LcSchedule(**{**self.SCHED, "max_iters": 4}), small_data(9), FMT)
            runs.append((trace.to_csv(), qm.dequantize().params))
        assert runs[0][0] == runs[1][0]
        np.testing.assert_array_equal(runs[0][1], runs[1][1])


def test_pretrain_reduces_loss():
    data = small_data(10, 256)
    model = MlpModel.glorot(SMALL, np.random.default_rng(10))
    before, _ = loss_and_gradient(model, *data())
    trained, after = pretrain(model, LcSchedule(lr=3e-3), data, steps=500)
    assert after < 0.5 * before
