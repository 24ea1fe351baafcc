"""Forecaster implementations and the autoregressive ensemble rollout harness.

Desk-scale stand-ins for an operational probabilistic model:

* persistence — step is the identity
* climatology — emits the training-split monthly-mean field
* stochastic_linear — per-cell ridge regression x_{t+24h} ~ a*x_t + b with
  Gaussian residual noise (closed form, fast)
* toy_diffusion — a one-hidden-layer denoiser trained on the noise-prediction
  objective with a log-linear sigma schedule and ancestral sampling

All forecasters expose ``step(state, rng, valid_time) -> next state`` and are
immutable once trained, so rollouts can share them across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .dataset import GriddedDataset, SplitSpec, split_time_indices
from .selection import SubsetSelection


class ForecastError(ValueError):
    pass


VALID_KINDS = ("persistence", "climatology", "stochastic_linear", "toy_diffusion")


@dataclass(frozen=True)
class ForecasterSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ForecastError(f"unknown forecaster kind {self.kind!r}")
        for k, v in self.hyperparameters.items():
            if isinstance(v, (int, float)) and v <= 0:
                raise ForecastError(f"hyperparameter {k!r} must be positive")


@dataclass
class EnsembleForecast:
    """M-member rollout trajectories at a fixed lead stride.

    ``trajectories`` has shape [init, member, step, variable, lat, lon];
    step k is lead (k+1) * lead_stride_hours.
    """

    init_indices: list[int]
    init_times: list[datetime]
    n_members: int
    lead_stride_hours: float
    n_steps: int
    trajectories: np.ndarray
    member_seeds: list

    def __post_init__(self):
        if len(set(map(tuple, self.member_seeds))) != len(self.member_seeds):
            raise ForecastError("member seeds must be distinct")
        if not np.isfinite(self.trajectories).all():
            raise ForecastError("non-finite trajectory values")


def _pairs_from_subset(
    ds: GriddedDataset, subset: SubsetSelection
) -> tuple[np.ndarray, int, int]:
    stride = ds.stride_hours
    off = 24.0 / stride
    if abs(off - round(off)) > 1e-9:
        raise ForecastError("dataset stride does not divide 24 hours")
    off = int(round(off))
    idx = np.asarray(subset.indices, dtype=np.int64)
    ok = idx + off < ds.n_times
    dropped = int((~ok).sum())
    return idx[ok], off, dropped


class PersistenceForecaster:
    kind = "persistence"

    def step(self, state, rng, valid_time):
        return state


class ClimatologyForecaster:
    """Emits the monthly-mean training field for the valid time's month."""

    kind = "climatology"

    def __init__(self, monthly_means: np.ndarray, present: np.ndarray):
        self.monthly_means = monthly_means  # [12, var, lat, lon]
        self.present = present

    def step(self, state, rng, valid_time):
        m = valid_time.month - 1
        if not self.present[m]:
            raise ForecastError(f"no training data for month {m + 1}")
        return self.monthly_means[m].copy()


def climatology_forecaster(ds: GriddedDataset, split: SplitSpec) -> ClimatologyForecaster:
    idx = split_time_indices(ds, split.train_years)
    if idx.size == 0:
        raise ForecastError("empty training split")
    months = ds.months()[idx]
    shape = ds.data.shape[1:]
    means = np.zeros((12,) + shape, dtype=np.float64)
    present = np.zeros(12, dtype=bool)
    for m in range(12):
        sel = idx[months == m + 1]
        if sel.size:
            means[m] = ds.data[sel].astype(np.float64).mean(axis=0)
            present[m] = True
    if not present.all():
        missing = [m + 1 for m in range(12) if not present[m]]
        raise ForecastError(f"training split has no data for months {missing}")
    return ClimatologyForecaster(means, present)


class StochasticLinearForecaster:
    """Per-variable, per-cell x_{t+24h} ~ a*x_t + b plus Gaussian residual noise."""

    kind = "stochastic_linear"

    def __init__(self, a: np.ndarray, b: np.ndarray, resid_std: np.ndarray,
                 variables: list[str]):
        self.a = a
        self.b = b
        self.resid_std = resid_std
        self.variables = variables

    def step(self, state, rng, valid_time):
        noise = rng.standard_normal(state.shape)
        return self.a * state + self.b + self.resid_std * noise

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "variables": self.variables,
                "a": self.a.tolist(),
                "b": self.b.tolist(),
                "resid_std": self.resid_std.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "StochasticLinearForecaster":
        d = json.loads(text)
        return cls(
            np.asarray(d["a"], dtype=np.float64),
            np.asarray(d["b"], dtype=np.float64),
            np.asarray(d["resid_std"], dtype=np.float64),
            list(d["variables"]),
        )


def _fit_stochastic_linear(
    ds: GriddedDataset, pair_idx: np.ndarray, off: int, ridge_lambda: float
) -> StochasticLinearForecaster:
    x = ds.data[pair_idx].astype(np.float64)          # [P, var, lat, lon]
    y = ds.data[pair_idx + off].astype(np.float64)
    xm = x.mean(axis=0)
    ym = y.mean(axis=0)
    sxx = ((x - xm) ** 2).sum(axis=0)
    sxy = ((x - xm) * (y - ym)).sum(axis=0)
    a = sxy / (sxx + ridge_lambda)
    b = ym - a * xm
    resid = y - (a * x + b)
    resid_std = resid.std(axis=0)
    return StochasticLinearForecaster(a, b, resid_std, list(ds.variables))


# ---------------------------------------------------------------------------
# Toy diffusion: one-hidden-layer denoiser, VE noise schedule, ancestral sampler
# ---------------------------------------------------------------------------

DIFFUSION_DEFAULTS = {
    "n_noise_levels": 20,
    "n_sample_steps": 24,
    "hidden_width": 64,
    "learning_rate": 1e-3,
    "n_epochs": 150,
    "batch_size": 64,
    "sigma_min": 0.02,
    "sigma_max": 3.0,
}


def _log_linear_sigmas(sigma_max: float, sigma_min: float, n: int) -> np.ndarray:
    return np.exp(np.linspace(math.log(sigma_max), math.log(sigma_min), n))


class ToyDiffusionForecaster:
    """Small denoiser network sampled by SMLD-style ancestral steps.

    Input is [conditioning state, noisy target, log sigma]; the network
    predicts the injected noise. The forward process is variance-exploding:
    y_noisy = y + sigma * eps.
    """

    kind = "toy_diffusion"

    def __init__(self, w1, b1, w2, b2, hyper: dict, state_shape: tuple):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.hyper = hyper
        self.state_shape = state_shape
        self.training_losses: list[float] = []

    def _predict_noise(self, cond: np.ndarray, noisy: np.ndarray, sigma: float) -> np.ndarray:
        inp = np.concatenate(
            [cond, noisy, np.full((cond.shape[0], 1), math.log(sigma))], axis=1
        )
        h = np.tanh(inp @ self.w1 + self.b1)
        return h @ self.w2 + self.b2

    def sample(self, cond_flat: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One sample per row of cond_flat via ancestral denoising."""
        sig = _log_linear_sigmas(
            self.hyper["sigma_max"], self.hyper["sigma_min"], self.hyper["n_sample_steps"]
        )
        y = rng.standard_normal(cond_flat.shape) * sig[0]
        for i in range(len(sig) - 1):
            eps_hat = self._predict_noise(cond_flat, y, sig[i])
            score = -eps_hat / sig[i]
            dv = sig[i] ** 2 - sig[i + 1] ** 2
            y = y + dv * score + np.sqrt(dv * sig[i + 1] ** 2 / sig[i] ** 2) * rng.standard_normal(
                cond_flat.shape
            )
        eps_hat = self._predict_noise(cond_flat, y, sig[-1])
        return y - sig[-1] * eps_hat

    def step(self, state, rng, valid_time):
        flat = state.reshape(1, -1).astype(np.float64)
        out = self.sample(flat, rng)
        return out.reshape(self.state_shape)


def _train_toy_diffusion(
    ds: GriddedDataset, pair_idx: np.ndarray, off: int, hyper: dict, seed: int
) -> ToyDiffusionForecaster:
    hp = dict(DIFFUSION_DEFAULTS)
    hp.update(hyper)
    rng = np.random.default_rng([seed, 7])
    cond = ds.data[pair_idx].astype(np.float64).reshape(pair_idx.size, -1)
    target = ds.data[pair_idx + off].astype(np.float64).reshape(pair_idx.size, -1)
    d = cond.shape[1]
    h = int(hp["hidden_width"])
    in_dim = 2 * d + 1

    w1 = rng.standard_normal((in_dim, h)) / math.sqrt(in_dim)
    b1 = np.zeros(h)
    w2 = rng.standard_normal((h, d)) / math.sqrt(h)
    b2 = np.zeros(d)

    sigmas = _log_linear_sigmas(hp["sigma_max"], hp["sigma_min"], int(hp["n_noise_levels"]))
    lr = float(hp["learning_rate"])
    n_epochs = int(hp["n_epochs"])
    batch = int(hp["batch_size"])
    params = [w1, b1, w2, b2]
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    t_adam = 0

    model = ToyDiffusionForecaster(w1, b1, w2, b2, hp, ds.data.shape[1:])

    for epoch in range(n_epochs):
        order = rng.permutation(pair_idx.size)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, order.size, batch):
            rows = order[start : start + batch]
            c = cond[rows]
            y = target[rows]
            level = rng.integers(0, sigmas.size, size=rows.size)
            sigma = sigmas[level][:, None]
            eps = rng.standard_normal(y.shape)
            noisy = y + sigma * eps
            inp = np.concatenate([c, noisy, np.log(sigma)], axis=1)

            z1 = inp @ params[0] + params[1]
            hact = np.tanh(z1)
            pred = hact @ params[2] + params[3]
            diff = pred - eps
            loss = float(np.mean(diff ** 2))
            epoch_loss += loss
            n_batches += 1

            gout = 2.0 * diff / diff.size
            g_w2 = hact.T @ gout
            g_b2 = gout.sum(axis=0)
            gh = (gout @ params[2].T) * (1.0 - hact ** 2)
            g_w1 = inp.T @ gh
            g_b1 = gh.sum(axis=0)

            t_adam += 1
            for p, g, m_, v_ in zip(params, [g_w1, g_b1, g_w2, g_b2], adam_m, adam_v):
                m_ *= beta1
                m_ += (1 - beta1) * g
                v_ *= beta2
                v_ += (1 - beta2) * g * g
                mhat = m_ / (1 - beta1 ** t_adam)
                vhat = v_ / (1 - beta2 ** t_adam)
                p -= lr * mhat / (np.sqrt(vhat) + eps_adam)
        model.training_losses.append(epoch_loss / max(n_batches, 1))

    model.w1, model.b1, model.w2, model.b2 = params
    return model


# ---------------------------------------------------------------------------
# Training entry point and rollout
# ---------------------------------------------------------------------------

def train(
    spec: ForecasterSpec,
    ds: GriddedDataset,
    subset: SubsetSelection | None,
    seed: int = 0,
    split: SplitSpec | None = None,
):
    """Train a forecaster of the requested kind on the subset's t -> t+24h pairs.

    ``ds`` must be the training view only; pairs whose successor falls outside
    it are dropped (the count is recorded on the forecaster).
    """
    if spec.kind == "persistence":
        return PersistenceForecaster()
    if spec.kind == "climatology":
        if split is None:
            raise ForecastError("climatology needs a split")
        return climatology_forecaster(ds, split)
    if subset is None:
        raise ForecastError(f"{spec.kind} needs a training subset")
    pair_idx, off, dropped = _pairs_from_subset(ds, subset)
    if pair_idx.size < 2:
        raise ForecastError(
            f"only {pair_idx.size} usable training pairs for {spec.kind}"
        )
    if spec.kind == "stochastic_linear":
        lam = float(spec.hyperparameters.get("ridge_lambda", 1e-3))
        model = _fit_stochastic_linear(ds, pair_idx, off, lam)
    else:
        model = _train_toy_diffusion(ds, pair_idx, off, spec.hyperparameters, seed)
    model.dropped_pairs = dropped
    return model


def rollout(
    forecaster,
    ds: GriddedDataset,
    init_indices,
    n_members: int,
    n_steps: int = 10,
    seed: int = 0,
    lead_stride_hours: float = 24.0,
) -> EnsembleForecast:
    """Autoregressive ensemble rollout from standardized initial states.

    Member m of init i uses an rng derived from (seed, m, i), so members are
    independent and the whole forecast is bitwise reproducible.
    """
    init_indices = [int(i) for i in init_indices]
    shape = ds.data.shape[1:]
    traj = np.empty(
        (len(init_indices), n_members, n_steps) + shape, dtype=np.float32
    )
    step_dt = timedelta(hours=lead_stride_hours)
    for ii, t0 in enumerate(init_indices):
        for m in range(n_members):
            rng = np.random.default_rng([seed, m, t0])
            state = ds.data[t0].astype(np.float64)
            t = ds.timestamps[t0]
            for k in range(n_steps):
                t = t + step_dt
                state = forecaster.step(state, rng, t)
                if not np.isfinite(state).all():
                    raise ForecastError(
                        f"non-finite state at init {t0}, member {m}, step {k}"
                    )
                traj[ii, m, k] = state
    return EnsembleForecast(
        init_indices=init_indices,
        init_times=[ds.timestamps[i] for i in init_indices],
        n_members=n_members,
        lead_stride_hours=lead_stride_hours,
        n_steps=n_steps,
        trajectories=traj,
        member_seeds=[(seed, m) for m in range(n_members)],
    )


def save_forecast(fc: EnsembleForecast, prefix: str | Path) -> None:
    """Write ``<prefix>.json`` (metadata) + ``<prefix>.bin`` (f32 LE trajectories)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "init_indices": fc.init_indices,
        "init_times": [t.isoformat() for t in fc.init_times],
        "n_members": fc.n_members,
        "lead_stride_hours": fc.lead_stride_hours,
        "n_steps": fc.n_steps,
        "shape": list(fc.trajectories.shape),
        "member_seeds": [list(s) for s in fc.member_seeds],
    }
    prefix.with_suffix(".json").write_text(json.dumps(header))
    prefix.with_suffix(".bin").write_bytes(fc.trajectories.astype("<f4").tobytes())


def load_forecast(prefix: str | Path) -> EnsembleForecast:
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    shape = tuple(header["shape"])
    traj = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f4").reshape(shape)
    return EnsembleForecast(
        init_indices=[int(i) for i in header["init_indices"]],
        init_times=[datetime.fromisoformat(s) for s in header["init_times"]],
        n_members=int(header["n_members"]),
        lead_stride_hours=float(header["lead_stride_hours"]),
        n_steps=int(header["n_steps"]),
        trajectories=traj.copy(),
        member_seeds=[tuple(s) for s in header["member_seeds"]],
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_forecaster(model, prefix: str | Path) -> None:
    """Write ``<prefix>.json`` (+ ``<prefix>.bin`` for array-heavy kinds)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    if model.kind == "persistence":
        prefix.with_suffix(".json").write_text(json.dumps({"kind": model.kind}))
    elif model.kind == "stochastic_linear":
        prefix.with_suffix(".json").write_text(model.to_json())
    elif model.kind == "climatology":
        header = {"kind": model.kind, "shape": list(model.monthly_means.shape)}
        prefix.with_suffix(".json").write_text(json.dumps(header))
        prefix.with_suffix(".bin").write_bytes(
            model.monthly_means.astype("<f4").tobytes()
        )
    elif model.kind == "toy_diffusion":
        arrays = [model.w1, model.b1, model.w2, model.b2]
        header = {
            "kind": model.kind,
            "shapes": [list(a.shape) for a in arrays],
            "hyper": model.hyper,
            "state_shape": list(model.state_shape),
        }
        prefix.with_suffix(".json").write_text(json.dumps(header))
        blob = b"".join(np.asarray(a, dtype="<f4").tobytes() for a in arrays)
        prefix.with_suffix(".bin").write_bytes(blob)
    else:
        raise ForecastError(f"cannot serialize kind {model.kind!r}")


def load_forecaster(prefix: str | Path):
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    kind = header["kind"]
    if kind == "persistence":
        return PersistenceForecaster()
    if kind == "stochastic_linear":
        return StochasticLinearForecaster.from_json(prefix.with_suffix(".json").read_text())
    if kind == "climatology":
        shape = tuple(header["shape"])
        arr = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f4")
        means = arr.reshape(shape).astype(np.float64)
        return ClimatologyForecaster(means, np.ones(12, dtype=bool))
    if kind == "toy_diffusion":
        blob = prefix.with_suffix(".bin").read_bytes()
        arrays = []
        offset = 0
        for shp in header["shapes"]:
            n = int(np.prod(shp))
            arrays.append(
                np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
                .reshape(shp)
                .astype(np.float64)
            )
            offset += n * 4
        return ToyDiffusionForecaster(
            *arrays, hyper=header["hyper"], state_shape=tuple(header["state_shape"])
        )
    raise ForecastError(f"unknown serialized kind {kind!r}")
