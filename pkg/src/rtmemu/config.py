"""Run configuration: one JSON document, every field defaulted, unknown keys rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import nn
from .oracle import DEFAULT_WATER_BANDS, OracleConfig, WavelengthGrid
from .retrieval import RetrievalConfig
from .sampling import StateRanges


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class OracleSection(_Section):
    beta_r: float = Field(0.0088, ge=0)
    rayleigh_exp: float = 4.05
    mu_v: float = Field(1.0, gt=0, le=1)
    quadrature_depth: int = Field(0, ge=0)
    water_bands: list[tuple[float, float, float]] = [tuple(b) for b in DEFAULT_WATER_BANDS]

    def build(self) -> OracleConfig:
        return OracleConfig(self.beta_r, self.rayleigh_exp, self.mu_v, self.quadrature_depth,
                            tuple(self.water_bands))


class RangesSection(_Section):
    mu0: tuple[float, float] = (0.3, 1.0)
    tau550: tuple[float, float] = (0.0, 0.5)
    alpha: tuple[float, float] = (0.5, 2.0)
    wvap: tuple[float, float] = (0.0, 5.0)
    rho_s: tuple[float, float] = (0.0, 0.9)

    def build(self) -> StateRanges:
        return StateRanges(**self.model_dump())


class SamplingSection(_Section):
    n: int = Field(8192, ge=3)
    k: int = Field(32, ge=1)
    lambda_min: float = 0.40
    lambda_max: float = 2.50
    method: Literal["uniform", "latin_hypercube", "grid"] = "latin_hypercube"
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    ranges: RangesSection = RangesSection()

    def grid(self) -> WavelengthGrid:
        return WavelengthGrid.uniform(self.k, self.lambda_min, self.lambda_max)


class NetworkSection(_Section):
    layer_dims: list[int] = [5, 64, 64, 1]
    lr: float = Field(3e-3, gt=0)
    batch_size: int = Field(64, ge=1)
    max_epochs: int = Field(500, ge=0)
    tol: float = Field(1e-3, ge=0)
    patience: int = Field(60, ge=1)
    loss: Literal["mse", "mae"] = "mse"
    lr_decay: float = Field(0.5, gt=0, le=1)
    lr_patience: int = Field(20, ge=1)
    min_lr: float = Field(1e-6, gt=0)

    @field_validator("layer_dims")
    @classmethod
    def _dims(cls, v):
        if len(v) < 3 or v[0] != 5 or v[-1] != 1 or min(v) < 1:
            raise ValueError("layer_dims must look like [5, H_1, ..., 1]")
        return v

    def hidden(self) -> tuple[int, ...]:
        return tuple(self.layer_dims[1:-1])

    def train_options(self, seed: int) -> nn.TrainOptions:
        return nn.TrainOptions(batch_size=self.batch_size, max_epochs=self.max_epochs, tol=self.tol,
                               patience=self.patience, loss=self.loss, lr=self.lr,
                               lr_decay=self.lr_decay, lr_patience=self.lr_patience,
                               min_lr=self.min_lr, seed=seed)


class LutSection(_Section):
    knots: int | list[int] = 5
    memory_cap_bytes: int = Field(1 << 30, ge=1)


class RetrievalSection(_Section):
    tol: float = Field(1e-8, gt=0)
    max_iters: int = Field(100, ge=1)
    basis_order: int = Field(6, ge=1)
    damping: float = Field(1e-3, gt=0)
    noise_sigma: float = Field(0.0, ge=0)

    def build(self, ranges: StateRanges) -> RetrievalConfig:
        return RetrievalConfig(tol=self.tol, max_iters=self.max_iters, basis_order=self.basis_order,
                               damping=self.damping, ranges=ranges)


class BenchSection(_Section):
    quadrature_depth: int = Field(256, ge=0)
    repeats: int = Field(3, ge=3)
    n_queries: int = Field(1000, ge=1000)


class RunConfig(_Section):
    seed: int = Field(0, ge=0, lt=2 ** 64)
    oracle: OracleSection = OracleSection()
    sampling: SamplingSection = SamplingSection()
    network: NetworkSection = NetworkSection()
    lut: LutSection = LutSection()
    retrieval: RetrievalSection = RetrievalSection()
    bench: BenchSection = BenchSection()

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> dict:
    """Apply one ``section.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not KEY=VALUE")
    key, value = assignment.split("=", 1)
    path = key.strip().split(".")
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {part} is not a section")
    node[path[-1]] = _parse_value(value)
    return data


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top-level value must be an object")
    for item in overrides:
        apply_override(data, item)
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
