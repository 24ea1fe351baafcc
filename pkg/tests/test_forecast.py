import math
from datetime import datetime, timedelta

import numpy as np
import pytest

from stratacast.dataset import GriddedDataset, GridSpec, SplitSpec
from stratacast.forecast import (
    ForecastError,
    ForecasterSpec,
    PersistenceForecaster,
    climatology_forecaster,
    load_forecast,
    load_forecaster,
    rollout,
    save_forecast,
    save_forecaster,
    train,
)
from stratacast.metrics import evaluate_forecast
from stratacast.selection import SubsetSelection, select_full
from stratacast.synthetic import SyntheticConfig, generate


def series_ds(values, stride_hours=24, start=datetime(2000, 1, 1), nvar=1):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 1:
        values = values.reshape(-1, 1, 1, 1)
    ts = [start + timedelta(hours=stride_hours * i) for i in range(values.shape[0])]
    nlat, nlon = values.shape[2], values.shape[3]
    return GriddedDataset(
        grid=GridSpec(np.linspace(-10, 10, nlat) if nlat > 1 else np.array([0.0]),
                      np.linspace(0, 300, nlon) if nlon > 1 else np.array([0.0])),
        variables=[f"synthetic_{k}" for k in range(values.shape[1])],
        timestamps=ts,
        data=values,
    )


def full_selection(ds):
    return select_full(ds, list(range(ds.n_times)))


class TestStochasticLinear:
    def test_exact_persistence_dynamics(self):
        # 12h stride, period-24h series: x_{t+24h} = x_t with varying values
        vals = np.tile([1.0, 5.0], 50)
        ds = series_ds(vals, stride_hours=12)
        spec = ForecasterSpec("stochastic_linear", {"ridge_lambda": 1e-9})
        model = train(spec, ds, full_selection(ds), seed=0)
        assert model.a.ravel()[0] == pytest.approx(1.0, abs=1e-3)
        assert model.b.ravel()[0] == pytest.approx(0.0, abs=1e-3)
        assert model.resid_std.ravel()[0] == pytest.approx(0.0, abs=1e-6)

    def test_recovers_planted_ar1(self):
        rng = np.random.default_rng(0)
        a_true, noise = 0.7, 0.3
        x = np.zeros(2000)
        for i in range(1, 2000):
            x[i] = a_true * x[i - 1] + noise * rng.standard_normal()
        ds = series_ds(x, stride_hours=24)
        spec = ForecasterSpec("stochastic_linear", {"ridge_lambda": 1e-6})
        model = train(spec, ds, full_selection(ds), seed=0)
        assert model.a.ravel()[0] == pytest.approx(a_true, abs=0.05)
        assert model.resid_std.ravel()[0] == pytest.approx(noise, abs=0.05)

    def test_too_few_pairs(self):
        ds = series_ds([1.0, 2.0])
        sel = SubsetSelection("full", [1], 1.0, 0)  # index 1 has no successor
        with pytest.raises(ForecastError, match="pairs"):
            train(ForecasterSpec("stochastic_linear"), ds, sel, seed=0)

    def test_json_round_trip(self, tmp_path):
        ds = series_ds(np.random.default_rng(1).normal(size=50))
        model = train(ForecasterSpec("stochastic_linear"), ds, full_selection(ds), seed=0)
        save_forecaster(model, tmp_path / "m")
        back = load_forecaster(tmp_path / "m")
        np.testing.assert_allclose(back.a, model.a)
        np.testing.assert_allclose(back.resid_std, model.resid_std)


class TestPersistence:
    def test_train_noop_and_identity_step(self):
        model = train(ForecasterSpec("persistence"), None, None)
        state = np.random.default_rng(2).normal(size=(1, 2, 2))
        out = model.step(state, np.random.default_rng(0), datetime(2000, 1, 2))
        np.testing.assert_array_equal(out, state)


@pytest.fixture(scope="module")
def noisefree(small_grid):
    cfg = SyntheticConfig(
        grid=small_grid, n_years=2, stride_hours=24, seasonal_amplitude=2.0,
        regime_amplitude=1.0, ar1_coefficient=0.0, noise_std=0.0, seed=3,
    )
    return generate(cfg)


class TestClimatology:
    def test_matches_training_monthly_means(self, noisefree):
        split = SplitSpec((2000, 2000))
        model = climatology_forecaster(noisefree, split)
        months = noisefree.months()
        train_years = np.array([t.year for t in noisefree.timestamps]) == 2000
        for month in (1, 6, 12):
            sel = np.nonzero((months == month) & train_years)[0]
            expected = noisefree.data[sel].astype(np.float64).mean(axis=0)
            got = model.step(None, None, datetime(2001, month, 15))
            np.testing.assert_allclose(got, expected, atol=1e-4)

    def test_deterministic_zero_spread(self, noisefree):
        split = SplitSpec((2000, 2000))
        model = climatology_forecaster(noisefree, split)
        fc = rollout(model, noisefree, [400], n_members=4, n_steps=3, seed=0)
        for m in range(1, 4):
            np.testing.assert_array_equal(fc.trajectories[0, m], fc.trajectories[0, 0])

    def test_missing_month_rejected(self):
        ds = series_ds(np.random.default_rng(4).normal(size=40))  # ~6 weeks only
        with pytest.raises(ForecastError, match="months"):
            climatology_forecaster(ds, SplitSpec((2000, 2000)))


class TestRollout:
    def test_persistence_fixed_point(self):
        ds = series_ds(np.random.default_rng(5).normal(size=400))
        fc = rollout(PersistenceForecaster(), ds, [10, 20], n_members=3, n_steps=10, seed=1)
        for ii, t0 in enumerate([10, 20]):
            for m in range(3):
                for k in range(10):
                    np.testing.assert_array_equal(
                        fc.trajectories[ii, m, k], ds.data[t0]
                    )

    def test_lead_axis_reaches_240h(self):
        ds = series_ds(np.random.default_rng(6).normal(size=400))
        fc = rollout(PersistenceForecaster(), ds, [0], n_members=1, n_steps=10, seed=0)
        assert fc.trajectories.shape[2] == 10
        assert fc.n_steps * fc.lead_stride_hours == 240.0

    def test_bitwise_determinism(self):
        ds = series_ds(np.random.default_rng(7).normal(size=300))
        model = train(ForecasterSpec("stochastic_linear"), ds, full_selection(ds), seed=0)
        a = rollout(model, ds, [5, 50], n_members=4, n_steps=10, seed=3)
        b = rollout(model, ds, [5, 50], n_members=4, n_steps=10, seed=3)
        assert a.trajectories.tobytes() == b.trajectories.tobytes()

    def test_same_seed_same_member_stream(self):
        ds = series_ds(np.random.default_rng(8).normal(size=300))
        model = train(ForecasterSpec("stochastic_linear"), ds, full_selection(ds), seed=0)
        a = rollout(model, ds, [5], n_members=1, n_steps=5, seed=11)
        b = rollout(model, ds, [5], n_members=1, n_steps=5, seed=11)
        np.testing.assert_array_equal(a.trajectories, b.trajectories)

    def test_members_differ(self):
        ds = series_ds(np.random.default_rng(9).normal(size=300))
        model = train(ForecasterSpec("stochastic_linear"), ds, full_selection(ds), seed=0)
        fc = rollout(model, ds, [5], n_members=2, n_steps=5, seed=0)
        assert not np.array_equal(fc.trajectories[0, 0], fc.trajectories[0, 1])

    def test_spread_grows_with_lead(self):
        rng = np.random.default_rng(10)
        x = np.zeros(800)
        for i in range(1, 800):
            x[i] = 0.8 * x[i - 1] + 0.3 * rng.standard_normal()
        ds = series_ds(x)
        model = train(ForecasterSpec("stochastic_linear"), ds, full_selection(ds), seed=0)
        inits = list(range(100, 400, 5))  # 60 inits
        fc = rollout(model, ds, inits, n_members=8, n_steps=10, seed=2)
        spread_1d = fc.trajectories[:, :, 0].std(axis=1).mean()
        spread_10d = fc.trajectories[:, :, 9].std(axis=1).mean()
        assert spread_10d > spread_1d

    def test_forecast_file_round_trip(self, tmp_path):
        ds = series_ds(np.random.default_rng(11).normal(size=300))
        fc = rollout(PersistenceForecaster(), ds, [3, 9], n_members=2, n_steps=4, seed=5)
        save_forecast(fc, tmp_path / "f")
        back = load_forecast(tmp_path / "f")
        assert back.trajectories.tobytes() == fc.trajectories.tobytes()
        assert back.init_times == fc.init_times


class TestToyDiffusion:
    def test_training_loss_decreases(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(300)
        y = 0.5 * x + 0.3 * rng.standard_normal(300)
        data = np.empty(600, dtype=np.float64)
        data[0::2] = x
        data[1::2] = y
        ds = series_ds(data, stride_hours=12)
        sel = SubsetSelection("full", list(range(0, 600, 2)), 1.0, 0)
        spec = ForecasterSpec(
            "toy_diffusion",
            {"n_epochs": 30, "hidden_width": 32, "batch_size": 64},
        )
        model = train(spec, ds, sel, seed=0)
        assert model.training_losses[-1] < model.training_losses[0]

    def test_rollout_finite_and_deterministic(self):
        rng = np.random.default_rng(13)
        ds = series_ds(rng.standard_normal(200))
        spec = ForecasterSpec("toy_diffusion", {"n_epochs": 5, "hidden_width": 16})
        model = train(spec, ds, full_selection(ds), seed=0)
        a = rollout(model, ds, [10], n_members=2, n_steps=3, seed=7)
        b = rollout(model, ds, [10], n_members=2, n_steps=3, seed=7)
        assert a.trajectories.tobytes() == b.trajectories.tobytes()

    def test_weights_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        ds = series_ds(rng.standard_normal(100))
        spec = ForecasterSpec("toy_diffusion", {"n_epochs": 2, "hidden_width": 8})
        model = train(spec, ds, full_selection(ds), seed=0)
        save_forecaster(model, tmp_path / "d")
        back = load_forecaster(tmp_path / "d")
        cond = np.zeros((2, 1))
        out_a = back.sample(cond, np.random.default_rng(0))
        out_b = back.sample(cond, np.random.default_rng(0))
        np.testing.assert_array_equal(out_a, out_b)
        np.testing.assert_allclose(back.w1, model.w1, atol=1e-6)


class TestEvaluateForecast:
    def test_persistence_on_constant_dataset(self):
        ds = series_ds(np.full(400, 3.0).reshape(-1, 1, 1, 1) + 0.0)
        # constant data: standardization impossible, evaluate raw
        fc = rollout(PersistenceForecaster(), ds, [5, 15], n_members=2, n_steps=10, seed=0)
        recs = evaluate_forecast(fc, ds, leads_days=(5, 10), method="persistence")
        for r in recs:
            assert r.crps == pytest.approx(0.0, abs=1e-12)
            assert r.rmse == pytest.approx(0.0, abs=1e-12)
            assert r.ssr == 0.0

    def test_hand_built_two_member_record(self):
        ds = series_ds(np.arange(400, dtype=np.float64))
        # start from persistence members, then plant values at the 5-day lead
        fc = rollout(PersistenceForecaster(), ds, [0], n_members=2, n_steps=10, seed=0)
        fc.trajectories[0, 0, 4] = 0.0   # member values {0, x0} at lead 5d
        fc.trajectories[0, 1, 4] = 2.0
        truth_val = float(ds.data[5, 0, 0, 0])  # = 5.0
        recs = evaluate_forecast(fc, ds, leads_days=(5,), method="hand")
        r = recs[0]
        # members {0,2}, y=5: fair crps = 3.5 - ... term1=(5+3)/2=4, pair=2/2=1 -> 3
        assert truth_val == 5.0
        assert r.crps == pytest.approx(3.0)
        assert r.rmse == pytest.approx(4.0)  # ens mean 1, error 4
        # spread^2 = var({0,2}, ddof=1) = 2; ssr = sqrt(3/2)*sqrt(2)/4
        assert r.ssr == pytest.approx(math.sqrt(1.5) * math.sqrt(2.0) / 4.0)

    def test_record_count(self, toy_dataset):
        fc = rollout(PersistenceForecaster(), toy_dataset, [10, 30], n_members=2,
                     n_steps=10, seed=0)
        recs = evaluate_forecast(fc, toy_dataset, leads_days=(5, 10))
        assert len(recs) == len(toy_dataset.variables) * 2

    def test_missing_truth_timestamp(self):
        ds = series_ds(np.random.default_rng(15).normal(size=20))
        fc = rollout(PersistenceForecaster(), ds, [15], n_members=1, n_steps=10, seed=0)
        with pytest.raises(Exception):
            evaluate_forecast(fc, ds, leads_days=(10,))


class TestForecasterSpec:
    def test_unknown_kind(self):
        with pytest.raises(ForecastError):
            ForecasterSpec("transformer")

    def test_nonpositive_hyper(self):
        with pytest.raises(ForecastError):
            ForecasterSpec("stochastic_linear", {"ridge_lambda": -1.0})
