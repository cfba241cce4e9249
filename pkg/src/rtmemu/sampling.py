"""State-space sampling, oracle datasets, splits and input standardization."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .oracle import (RHO_S_BOUNDS, STATE_BOUNDS, STATE_FIELDS, OracleConfig,
                     WavelengthGrid, spectra)

SPLITS = ("train", "val", "test")
N_ATM = len(STATE_FIELDS)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class StateRanges:
    mu0: tuple = STATE_BOUNDS["mu0"]
    tau550: tuple = STATE_BOUNDS["tau550"]
    alpha: tuple = STATE_BOUNDS["alpha"]
    wvap: tuple = STATE_BOUNDS["wvap"]
    rho_s: tuple = RHO_S_BOUNDS

    def __post_init__(self):
        limits = dict(STATE_BOUNDS, rho_s=RHO_S_BOUNDS)
        for name, (lo_lim, hi_lim) in limits.items():
            lo, hi = (float(v) for v in getattr(self, name))
            # low == high is allowed (pins a parameter); the dataset scaler rejects it later
            if lo > hi:
                raise ValueError(f"{name}: low {lo} > high {hi}")
            if lo < lo_lim or hi > hi_lim:
                raise ValueError(f"{name}: range ({lo}, {hi}) outside [{lo_lim}, {hi_lim}]")
            object.__setattr__(self, name, (lo, hi))

    def bounds(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper bounds for the 4 + k sampled columns."""
        pairs = [getattr(self, f) for f in STATE_FIELDS] + [self.rho_s] * k
        lo, hi = zip(*pairs)
        return np.array(lo), np.array(hi)

    def to_dict(self) -> dict:
        return {f: list(getattr(self, f)) for f in (*STATE_FIELDS, "rho_s")}

    @classmethod
    def from_dict(cls, d: dict) -> "StateRanges":
        return cls(**{key: tuple(v) for key, v in d.items()})


def sample_states(ranges: StateRanges, n: int, k: int, method: str = "latin_hypercube",
                  seed: int = 0) -> np.ndarray:
    """Draw ``n`` rows of ``[mu0, tau550, alpha, wvap, rho_s_0 .. rho_s_{k-1}]``.

    ``uniform`` and ``latin_hypercube`` treat every channel's reflectance as an
    independent dimension. ``grid`` is a full factorial over the five physical
    parameters (reflectance shared by all channels) and needs ``n = g**5``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    lo, hi = ranges.bounds(k)
    d = lo.size
    rng = np.random.default_rng(seed)
    if method == "uniform":
        u = rng.random((n, d))
    elif method == "latin_hypercube":
        u = qmc.LatinHypercube(d=d, seed=rng).random(n)
    elif method == "grid":
        g = round(n ** (1.0 / (N_ATM + 1)))
        if g < 1 or g ** (N_ATM + 1) != n:
            raise ValueError(f"grid sampling needs n = g**{N_ATM + 1} for integer g, got n={n}")
        axes = np.linspace(0.0, 1.0, g) if g > 1 else np.array([0.0])
        mesh = np.stack(np.meshgrid(*[axes] * (N_ATM + 1), indexing="ij"), axis=-1)
        u5 = mesh.reshape(-1, N_ATM + 1)
        u = np.hstack([u5[:, :N_ATM], np.repeat(u5[:, N_ATM:], k, axis=1)])
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return lo + u * (hi - lo)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        bad = np.flatnonzero(~(std > 0))
        if bad.size:
            raise ValueError(f"constant input column(s) {bad.tolist()}: cannot standardize")
        return cls(mean, std)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))

    def channel(self, i: int) -> "Scaler":
        """Statistics of the 5 per-channel features [atmosphere, rho_s_i]."""
        cols = list(range(N_ATM)) + [N_ATM + i]
        return Scaler(self.mean[cols], self.std[cols])


@dataclass
class ChannelView:
    """Standardized per-channel inputs ``[mu0, tau550, alpha, wvap, rho_s_i]`` and targets ``Y[:, i]``."""

    inputs: np.ndarray
    targets: np.ndarray
    split: np.ndarray
    channel: int

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == name
        return self.inputs[mask], self.targets[mask]

    @property
    def target_scale(self) -> float:
        """Mean |y_i| over train rows, the nMAE normalizer."""
        return float(np.mean(np.abs(self.targets[self.split == "train"])))


@dataclass
class SpectralDataset:
    X: np.ndarray
    Y: np.ndarray
    grid: WavelengthGrid
    split: np.ndarray
    scaler: Scaler
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.X.shape[0]
        if self.Y.shape[0] != n or self.split.shape[0] != n:
            raise ValueError("X, Y and split must have the same number of rows")
        if self.X.shape[1] != N_ATM + self.grid.k or self.Y.shape[1] != self.grid.k:
            raise ValueError(f"X needs {N_ATM + self.grid.k} columns and Y {self.grid.k}")
        unknown = set(np.unique(self.split)) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown split labels {sorted(unknown)}")

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def k(self) -> int:
        return self.grid.k

    def rows(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.split == name)

    def states(self, rows=None) -> np.ndarray:
        X = self.X if rows is None else self.X[rows]
        return X[:, :N_ATM]

    def surfaces(self, rows=None) -> np.ndarray:
        X = self.X if rows is None else self.X[rows]
        return X[:, N_ATM:]


def split_counts(n: int, fractions) -> tuple[int, int, int]:
    f_train, f_val, _ = fractions
    n_train = int(np.floor(n * f_train))
    n_val = int(np.floor(n * f_val))
    return n_train, n_val, n - n_train - n_val


def generate_dataset(samples: np.ndarray, grid: WavelengthGrid, cfg: OracleConfig | None = None,
                     fractions=(0.8, 0.1, 0.1), seed: int = 0, meta: dict | None = None
                     ) -> SpectralDataset:
    """Run the oracle on every sample row and attach a seeded train/val/test split."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    X = np.array(samples, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_ATM + grid.k:
        raise ValueError(f"samples need shape (n, {N_ATM + grid.k}), got {X.shape}")
    n = X.shape[0]
    counts = split_counts(n, fractions)
    if min(counts) < 1:
        raise ValueError(f"n={n} too small for nonempty train/val/test splits {counts}")

    Y = spectra(X[:, :N_ATM], X[:, N_ATM:], grid, cfg)
    perm = np.random.default_rng(seed).permutation(n)
    split = np.empty(n, dtype=object)
    split[perm[:counts[0]]] = "train"
    split[perm[counts[0]:counts[0] + counts[1]]] = "val"
    split[perm[counts[0] + counts[1]:]] = "test"
    split = split.astype(str)
    scaler = Scaler.fit(X[split == "train"])
    info = {"seed": seed, "fractions": list(fractions)}
    info.update(meta or {})
    return SpectralDataset(X, Y, grid, split, scaler, info)


def channel_view(ds: SpectralDataset, i: int) -> ChannelView:
    if not 0 <= i < ds.k:
        raise IndexError(f"channel {i} out of range for k={ds.k}")
    cols = list(range(N_ATM)) + [N_ATM + i]
    inputs = ds.scaler.channel(i).transform(ds.X[:, cols])
    return ChannelView(inputs, ds.Y[:, i].copy(), ds.split, i)


def csv_header(k: int) -> list[str]:
    return (list(STATE_FIELDS) + [f"rho_s_{i}" for i in range(k)]
            + [f"y_{i}" for i in range(k)] + ["split"])


def write_dataset(ds: SpectralDataset, csv_path, json_path=None):
    """Write the dataset CSV plus its JSON sidecar (grid, scaler, seed, ranges, ...)."""
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(ds.k))
    for x, y, s in zip(ds.X, ds.Y, ds.split):
        w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y] + [s])
    csv_path.write_text(buf.getvalue())
    sidecar = {
        "grid": ds.grid.to_list(),
        "scaler": ds.scaler.to_dict(),
        "n": ds.n,
        "k": ds.k,
        **ds.meta,
    }
    json_path.write_text(json.dumps(sidecar, indent=2))
    return csv_path, json_path


def read_dataset(csv_path, json_path=None) -> SpectralDataset:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    try:
        sidecar = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{json_path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    grid = WavelengthGrid(np.array(sidecar["grid"], dtype=float))
    k = grid.k
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != csv_header(k):
            raise DatasetFormatError(f"{csv_path}: header does not match a k={k} dataset")
        X, Y, split = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 * k + N_ATM + 1:
                raise DatasetFormatError(f"{csv_path}: line {lineno}: expected {2 * k + N_ATM + 1} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:-1]]
            except ValueError as exc:
                raise DatasetFormatError(f"{csv_path}: line {lineno}: {exc}") from None
            X.append(vals[:N_ATM + k])
            Y.append(vals[N_ATM + k:])
            split.append(row[-1])
    meta = {key: v for key, v in sidecar.items() if key not in ("grid", "scaler", "n", "k")}
    return SpectralDataset(np.array(X, dtype=float).reshape(-1, N_ATM + k),
                           np.array(Y, dtype=float).reshape(-1, k), grid,
                           np.array(split, dtype=str), Scaler.from_dict(sidecar["scaler"]), meta)
