"""Throughput and accuracy comparison of oracle, emulator and lookup table."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import emulator as emu
from . import lut as lut_mod
from .oracle import OracleConfig, WavelengthGrid, spectra


@dataclass
class Engine:
    name: str
    run: callable
    precompute_seconds: float = 0.0
    memory_bytes: int = 0


def oracle_engine(grid: WavelengthGrid, cfg: OracleConfig, name: str | None = None) -> Engine:
    n = cfg.quadrature_depth
    return Engine(name or f"oracle(N={n})", lambda s, r: spectra(s, r, grid, cfg))


def emulator_engine(F: emu.EmulatorModel) -> Engine:
    nbytes = sum(p.nbytes for net in F.subnets for p in net.params())
    return Engine("emulator", lambda s, r: emu.predict_batch(F, s, r),
                  float(F.meta.get("train_seconds", 0.0)), nbytes)


def lut_engine(table: lut_mod.LookupTable) -> Engine:
    return Engine(f"lut({'x'.join(str(ax.size) for ax in table.axes)})",
                  lambda s, r: lut_mod.interpolate_batch(table, s, r),
                  float(table.info.get("precompute_seconds", 0.0)), table.nbytes)


def machine_descriptor() -> str:
    return (f"{platform.platform()} | {platform.processor() or platform.machine()} | "
            f"python {platform.python_version()} | numpy {np.__version__}")


def digest(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype=float).tobytes()).hexdigest()


@dataclass
class BenchReport:
    n_queries: int
    repeats: int
    engines: dict = field(default_factory=dict)
    partial: bool = False
    machine: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"n_queries": self.n_queries, "repeats": self.repeats, "partial": self.partial,
                "machine": self.machine, "config": self.config, "engines": self.engines}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def rows(self):
        for name, e in self.engines.items():
            for metric, value in e.items():
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    yield name, metric, value

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["engine", "metric", "value"])
        for row in self.rows():
            w.writerow([row[0], row[1], repr(float(row[2]))])
        return buf.getvalue()

    def throughput(self, name: str) -> float:
        return self.engines[name]["queries_per_sec"]


def accuracy(pred, reference) -> tuple[float, float]:
    """(nMAE, MAE) of ``pred`` against ``reference``; nMAE normalizes each channel by its mean |reference|."""
    mae = np.mean(np.abs(pred - reference), axis=0)
    return float(np.mean(mae / np.mean(np.abs(reference), axis=0))), float(np.mean(mae))


def run_bench(states, rho_s, engines: list[Engine], reference: Engine, repeats: int = 3,
              seed: int = 0, config: dict | None = None, min_queries: int = 1000) -> BenchReport:
    """Time every engine on the same shuffled batch; median of ``repeats`` after one warm-up.

    ``reference`` supplies the ground truth for the accuracy columns and is
    not timed unless it is also listed in ``engines``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    rho_s = np.atleast_2d(np.asarray(rho_s, dtype=float))
    n = states.shape[0]
    if n < min_queries:
        raise ValueError(f"need >= {min_queries} query states, got {n}")
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    order = np.random.default_rng(seed).permutation(n)
    states, rho_s = states[order], rho_s[order]
    truth = reference.run(states, rho_s)

    report = BenchReport(n, repeats, machine=machine_descriptor(), config=dict(config or {}))
    for eng in engines:
        try:
            out = eng.run(states, rho_s)  # warm-up, also the accuracy sample
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                again = eng.run(states, rho_s)
                times.append(time.perf_counter() - t0)
            if digest(again) != digest(out):
                raise RuntimeError("engine output changed between repeats")
        except Exception as exc:  # noqa: BLE001 - a failing engine must not sink the report
            report.partial = True
            report.engines[eng.name] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        med = float(np.median(times))
        nmae, mae = accuracy(out, truth)
        report.engines[eng.name] = {
            "wall_seconds_median": med,
            "wall_seconds_min": float(np.min(times)),
            "wall_seconds_max": float(np.max(times)),
            "queries_per_sec": n / med,
            "precompute_seconds": eng.precompute_seconds,
            "memory_bytes": eng.memory_bytes,
            "nmae_vs_oracle": nmae,
            "mae_vs_oracle": mae,
            "output_sha256": digest(out),
        }
    return report


def standard_engines(grid: WavelengthGrid, cfg: OracleConfig, F=None, table=None,
                     quadrature_depth: int = 256) -> tuple[list[Engine], Engine]:
    """Amplified oracle plus whichever of emulator/LUT are given; reference is the plain oracle."""
    reference = oracle_engine(grid, replace(cfg, quadrature_depth=0), "oracle(N=0)")
    engines = [oracle_engine(grid, replace(cfg, quadrature_depth=quadrature_depth))]
    if F is not None:
        engines.append(emulator_engine(F))
    if table is not None:
        engines.append(lut_engine(table))
    return engines, reference
