"""Neural RTM: one small network per wavelength channel, trained in sequence.

Channel 0 starts from a Glorot initialization; every later channel starts from
the trained parameters of the channel before it and is fine-tuned on its own
targets. Each subnet sees only the four atmospheric parameters and its own
channel's surface reflectance, so the reflectance block of the Jacobian is
diagonal by construction.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .nn import MlpModel, ModelFormatError, TrainOptions, TrainReport
from .oracle import AtmosphericState, DimensionError, SurfaceSpectrum, WavelengthGrid
from .sampling import N_ATM, Scaler, SpectralDataset, channel_view

log = logging.getLogger(__name__)

FORMAT = "rtmemu.emulator/1"


class ChannelTrainingError(RuntimeError):
    def __init__(self, channel: int, cause: Exception):
        super().__init__(f"channel {channel}: {cause}")
        self.channel = channel


@dataclass
class EmulatorModel:
    subnets: list[MlpModel]
    grid: WavelengthGrid
    scaler: Scaler
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.subnets) != self.grid.k:
            raise ValueError(f"{len(self.subnets)} subnets for {self.grid.k} channels")
        dims = {tuple(s.layer_dims) for s in self.subnets}
        if len(dims) != 1:
            raise ValueError(f"subnets disagree on layer_dims: {sorted(dims)}")
        if self.layer_dims[0] != N_ATM + 1 or self.layer_dims[-1] != 1:
            raise ValueError(f"subnets must map {N_ATM + 1} inputs to 1 output")
        if self.scaler.mean.size != N_ATM + self.grid.k:
            raise ValueError("scaler does not match the channel count")

    @property
    def k(self) -> int:
        return self.grid.k

    @property
    def layer_dims(self) -> list[int]:
        return self.subnets[0].layer_dims

    def reports(self) -> list[TrainReport]:
        return [TrainReport.from_dict(r) for r in self.meta.get("reports", [])]


@dataclass
class EvalMetrics:
    split: str
    mae: np.ndarray
    nmae: np.ndarray

    @property
    def overall_nmae(self) -> float:
        return float(np.mean(self.nmae))

    @property
    def max_nmae(self) -> float:
        return float(np.max(self.nmae))

    @property
    def overall_mae(self) -> float:
        return float(np.mean(self.mae))

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "overall_nmae": self.overall_nmae,
            "max_channel_nmae": self.max_nmae,
            "overall_mae": self.overall_mae,
            "per_channel_mae": self.mae.tolist(),
            "per_channel_nmae": self.nmae.tolist(),
        }


def propagate_weights(prev: MlpModel) -> MlpModel:
    """Starting point for the next channel: an exact copy of the previous subnet.

    Only weights and biases carry over; ``nn.train`` always builds a fresh
    Adam state.
    """
    return prev.copy()


def _channel_seed(seed: int, channel: int) -> int:
    return int(np.random.SeedSequence([seed, channel]).generate_state(1)[0])


def train_emulator(ds: SpectralDataset, opts: TrainOptions | None = None, hidden=(64, 64),
                   init_seed: int | None = None, channels=None, on_channel=None) -> EmulatorModel:
    """Train all subnets in ascending channel order.

    ``on_channel(i, init_model, trained_model, report)`` is called after every
    channel. ``channels`` restricts training to a prefix-free subset (used by
    tests); by default every channel is trained.
    """
    opts = opts or TrainOptions()
    layer_dims = [N_ATM + 1, *[int(h) for h in hidden], 1]
    init_seed = opts.seed if init_seed is None else init_seed
    order = range(ds.k) if channels is None else channels

    subnets, reports = [], []
    start = time.perf_counter()
    prev = None
    for i in order:
        view = channel_view(ds, i)
        init = nn.glorot_init(layer_dims, init_seed) if prev is None else propagate_weights(prev)
        ch_opts = replace(opts, seed=_channel_seed(opts.seed, i))
        try:
            trained, report = nn.train(init, *view.subset("train"), *view.subset("val"),
                                       ch_opts, scale=view.target_scale)
        except (nn.TrainingDiverged, FloatingPointError) as exc:
            raise ChannelTrainingError(i, exc) from exc
        log.info("channel %d (%.3f um): %d epochs, val nMAE %.3g%s", i, ds.grid.lambdas[i],
                 report.epochs_run, report.best_val_nmae, "" if report.converged else " (not converged)")
        if on_channel is not None:
            on_channel(i, init, trained, report)
        subnets.append(trained)
        reports.append(report)
        prev = trained

    grid = ds.grid if channels is None else WavelengthGrid(ds.grid.lambdas[list(order)])
    scaler = ds.scaler
    if channels is not None:
        cols = list(range(N_ATM)) + [N_ATM + i for i in order]
        scaler = Scaler(ds.scaler.mean[cols], ds.scaler.std[cols])
    meta = {
        "train_options": vars(opts).copy(),
        "hidden": list(hidden),
        "init_seed": init_seed,
        "dataset": dict(ds.meta),
        "reports": [r.to_dict() for r in reports],
        "train_seconds": time.perf_counter() - start,
    }
    return EmulatorModel(subnets, grid, scaler, meta)


def _as_batch(F: EmulatorModel, states, rho_s):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    rho_s = np.atleast_2d(np.asarray(rho_s, dtype=float))
    if states.shape[1] != N_ATM:
        raise DimensionError(f"states need {N_ATM} columns, got {states.shape[1]}")
    if rho_s.shape != (states.shape[0], F.k):
        raise DimensionError(f"reflectance shape {rho_s.shape} != ({states.shape[0]}, {F.k})")
    return states, rho_s


def predict_batch(F: EmulatorModel, states, rho_s) -> np.ndarray:
    """(n, 4) states and (n, k) reflectances -> (n, k) predicted TOA reflectance."""
    states, rho_s = _as_batch(F, states, rho_s)
    atm = (states - F.scaler.mean[:N_ATM]) / F.scaler.std[:N_ATM]
    refl = (rho_s - F.scaler.mean[N_ATM:]) / F.scaler.std[N_ATM:]
    # Feature-major buffers with a trailing row of ones: biases ride along in
    # the matmul and every layer output is a contiguous slice.
    n = states.shape[0]
    bufs = [np.ones((d + 1, n)) for d in F.layer_dims[:-1]]
    bufs[0][:N_ATM] = atm.T
    refl_t = np.ascontiguousarray(refl.T)
    out = np.empty((F.k, n))
    for i, net in enumerate(F.subnets):
        bufs[0][N_ATM] = refl_t[i]
        h = bufs[0]
        for l, (w, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
            z = bufs[l + 1][:-1]
            np.matmul(np.hstack([w, b[:, None]]), h, out=z)
            np.maximum(z, 0.0, out=z)
            h = bufs[l + 1]
        out[i] = (np.hstack([net.weights[-1], net.biases[-1][:, None]]) @ h)[0]
    return out.T


def _state_and_surface(F, state, surf):
    x = state.as_array() if isinstance(state, AtmosphericState) else np.asarray(state, dtype=float)
    r = surf.rho_s if isinstance(surf, SurfaceSpectrum) else np.asarray(surf, dtype=float)
    if r.size != F.k:
        raise DimensionError(f"surface has {r.size} channels, emulator has {F.k}")
    return x, r


def predict_spectrum(F: EmulatorModel, state, surf) -> np.ndarray:
    x, r = _state_and_surface(F, state, surf)
    return predict_batch(F, x[None, :], r[None, :])[0]


def jacobian(F: EmulatorModel, state, surf) -> np.ndarray:
    """k x (4 + k) derivatives of the predicted spectrum.

    Columns are [mu0, tau550, alpha, wvap, rho_s_0 .. rho_s_{k-1}]. Off-diagonal
    entries of the reflectance block are never written and stay exactly zero.
    """
    x, r = _state_and_surface(F, state, surf)
    atm = (x - F.scaler.mean[:N_ATM]) / F.scaler.std[:N_ATM]
    refl = (r - F.scaler.mean[N_ATM:]) / F.scaler.std[N_ATM:]
    J = np.zeros((F.k, N_ATM + F.k))
    for i, net in enumerate(F.subnets):
        g = nn.input_jacobian(net, np.append(atm, refl[i]))
        J[i, :N_ATM] = g[:N_ATM] / F.scaler.std[:N_ATM]
        J[i, N_ATM + i] = g[N_ATM] / F.scaler.std[N_ATM + i]
    return J


def jacobian_batch(F: EmulatorModel, states, rho_s) -> tuple[np.ndarray, np.ndarray]:
    """Atmospheric block (n, k, 4) and reflectance diagonal (n, k) for many inputs."""
    states, rho_s = _as_batch(F, states, rho_s)
    atm = (states - F.scaler.mean[:N_ATM]) / F.scaler.std[:N_ATM]
    refl = (rho_s - F.scaler.mean[N_ATM:]) / F.scaler.std[N_ATM:]
    J_atm = np.empty((states.shape[0], F.k, N_ATM))
    J_diag = np.empty_like(rho_s)
    for i, net in enumerate(F.subnets):
        g = nn.input_jacobian_batch(net, np.hstack([atm, refl[:, i:i + 1]]))
        J_atm[:, i, :] = g[:, :N_ATM] / F.scaler.std[:N_ATM]
        J_diag[:, i] = g[:, N_ATM] / F.scaler.std[N_ATM + i]
    return J_atm, J_diag


def metrics_from_predictions(pred, target, scale, split: str) -> EvalMetrics:
    mae = np.mean(np.abs(np.asarray(pred) - np.asarray(target)), axis=0)
    return EvalMetrics(split, mae, mae / np.asarray(scale))


def target_scales(ds: SpectralDataset) -> np.ndarray:
    return np.mean(np.abs(ds.Y[ds.split == "train"]), axis=0)


def evaluate(F: EmulatorModel, ds: SpectralDataset, split: str = "test") -> EvalMetrics:
    """Per-channel MAE and nMAE (MAE / train-split mean |y_i|) on one split."""
    rows = ds.rows(split)
    if rows.size == 0:
        raise ValueError(f"split {split!r} is empty")
    if F.k != ds.k:
        raise DimensionError(f"emulator has {F.k} channels, dataset {ds.k}")
    pred = predict_batch(F, ds.states(rows), ds.surfaces(rows))
    return metrics_from_predictions(pred, ds.Y[rows], target_scales(ds), split)


@dataclass
class AblationResult:
    channels: list[int]
    propagated: list[TrainReport]
    cold: list[TrainReport]
    propagated_test_nmae: np.ndarray
    cold_test_nmae: np.ndarray

    @staticmethod
    def _epochs(reports, max_epochs):
        return np.array([r.epochs_to_converge if r.converged else max_epochs for r in reports],
                        dtype=float)

    def summary(self, max_epochs: int) -> dict:
        ep_p = self._epochs(self.propagated, max_epochs)
        ep_c = self._epochs(self.cold, max_epochs)
        return {
            "channels": self.channels,
            "propagated_epochs": ep_p.tolist(),
            "cold_epochs": ep_c.tolist(),
            "median_epochs_propagated": float(np.median(ep_p)),
            "median_epochs_cold": float(np.median(ep_c)),
            "mean_test_nmae_propagated": float(np.mean(self.propagated_test_nmae)),
            "mean_test_nmae_cold": float(np.mean(self.cold_test_nmae)),
            "initial_val_nmae_propagated": [r.initial_val_nmae for r in self.propagated],
            "initial_val_nmae_cold": [r.initial_val_nmae for r in self.cold],
        }


def _test_nmae(net: MlpModel, ds: SpectralDataset, i: int) -> float:
    view = channel_view(ds, i)
    X, t = view.subset("test")
    return nn.nmae(nn.forward_cache(net, X)[0], t, view.target_scale)


def ablation_cold_start(ds: SpectralDataset, opts: TrainOptions | None = None, hidden=(64, 64),
                        init_seed: int | None = None) -> AblationResult:
    """Train channels 1..k-1 with weight propagation and again from a fresh init.

    Both arms share minibatch seeds per channel; the cold arm reuses the
    channel-0 Glorot initialization for every channel.
    """
    opts = opts or TrainOptions()
    if ds.k < 2:
        raise ValueError("ablation needs at least two channels")
    init_seed = opts.seed if init_seed is None else init_seed
    layer_dims = [N_ATM + 1, *[int(h) for h in hidden], 1]

    prop_nets = {}
    prop_reports = {}

    def keep(i, init, trained, report):
        prop_nets[i] = trained
        prop_reports[i] = report

    train_emulator(ds, opts, hidden, init_seed, on_channel=keep)
    channels = list(range(1, ds.k))
    cold_reports, cold_nmae = [], []
    for i in channels:
        view = channel_view(ds, i)
        init = nn.glorot_init(layer_dims, init_seed)
        try:
            net, report = nn.train(init, *view.subset("train"), *view.subset("val"),
                                   replace(opts, seed=_channel_seed(opts.seed, i)),
                                   scale=view.target_scale)
        except nn.TrainingDiverged as exc:
            raise ChannelTrainingError(i, exc) from exc
        cold_reports.append(report)
        cold_nmae.append(_test_nmae(net, ds, i))
    return AblationResult(
        channels,
        [prop_reports[i] for i in channels],
        cold_reports,
        np.array([_test_nmae(prop_nets[i], ds, i) for i in channels]),
        np.array(cold_nmae),
    )


def to_dict(F: EmulatorModel) -> dict:
    return {
        "format": FORMAT,
        "grid": F.grid.to_list(),
        "scaler": F.scaler.to_dict(),
        "layer_dims": F.layer_dims,
        "channels": [{"W": [w.tolist() for w in s.weights], "b": [b.tolist() for b in s.biases]}
                     for s in F.subnets],
        "meta": F.meta,
    }


def from_dict(d: dict) -> EmulatorModel:
    if not isinstance(d, dict):
        raise ModelFormatError("emulator: top-level JSON value must be an object")
    if d.get("format") != FORMAT:
        raise ModelFormatError(f"emulator: unsupported format {d.get('format')!r}")
    try:
        grid = WavelengthGrid(np.array(d["grid"], dtype=float))
        scaler = Scaler.from_dict(d["scaler"])
        subnets = [nn.from_dict({"weights": ch["W"], "biases": ch["b"], "layer_dims": d["layer_dims"]},
                                where=f"emulator channel {i}")
                   for i, ch in enumerate(d["channels"])]
        return EmulatorModel(subnets, grid, scaler, d.get("meta", {}))
    except KeyError as exc:
        raise ModelFormatError(f"emulator: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"emulator: {exc}") from None


def dumps(F: EmulatorModel) -> str:
    return json.dumps(to_dict(F))


def loads(data) -> EmulatorModel:
    return from_dict(nn.loads_json(data, "emulator"))


def save(F: EmulatorModel, path):
    Path(path).write_text(dumps(F))


def load(path) -> EmulatorModel:
    return loads(Path(path).read_bytes())
