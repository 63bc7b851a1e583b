"""JSON run configurations: schema, defaults and physics checks.

Three document kinds are recognised by the ``kind`` field: ``dem`` (one
Lambda-scheme run, the default), ``eit`` (one N-scheme run) and ``plan`` (an
ensemble experiment). Every default is filled in by the schema, so the validated
model dumped back to JSON is the complete parameter set.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .disorder import (
    CorrelationSpec, KeyProfile, constant_key, generate_key, load_key_csv, load_key_npz, rms_gradient_key, section_key,
)
from .dynamics_lambda import LambdaConfig, dem_config
from .dynamics_n import NConfig, eit_config
from .grid import uniform_z
from .harness import ExperimentPlan, LambdaSettings, NSettings


class ConfigError(ValueError):
    """Invalid configuration file; the message names the field and line."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KeySource(_Strict):
    """Generated key (``seed``) or a stored master key (``path``) plus section offset."""

    seed: int = 0
    path: Optional[str] = None
    master_length: float = Field(1.0, gt=0)
    section_offset: float = Field(0.0, ge=0)


class DemSchema(_Strict):
    kind: Literal["dem"] = "dem"
    optical_depth: float = Field(..., ge=0)
    strength: float = Field(..., gt=0, description="D_c in Gamma")
    sigma: float = Field(..., gt=0, description="correlation length in L")
    kappa: float = Field(..., gt=0, description="probe duration in tau")
    t_i: float = Field(..., gt=0, description="inversion time in tau")
    peak_time: float = Field(0.15, gt=0)
    amplitude: float = Field(0.01, gt=0, le=0.1)
    points_per_sigma: int = Field(20, ge=10)
    t_end: Optional[float] = None
    dt: Optional[float] = None
    gamma: float = Field(1.0, gt=0)
    branching_31: float = Field(0.5, ge=0, le=1)
    ground_dephasing: float = Field(0.0, ge=0)
    decrypt: Literal["correct", "independent", "gradient", "zero"] = "correct"
    decrypt_seed: int = 1
    key: KeySource = KeySource()
    snapshot_times: list[float] = []

    @model_validator(mode="after")
    def _physics(self):
        if self.sigma > self.key.master_length:
            raise ValueError(f"sigma={self.sigma} exceeds the master key length {self.key.master_length}")
        if self.kappa * self.gamma >= 1.0:
            raise ValueError(
                f"echo memory is broadband: kappa*Gamma must be < 1, got {self.kappa * self.gamma:g}"
            )
        if self.peak_time >= self.t_i:
            raise ValueError("the probe must peak before the inversion time t_i")
        if self.key.section_offset + 1.0 > self.key.master_length + 1e-12:
            raise ValueError("key section [offset, offset + L] exceeds the master key")
        return self


class EitSchema(_Strict):
    kind: Literal["eit"] = "eit"
    optical_depth: float = Field(..., ge=0)
    control: float = Field(5.0, gt=0)
    kappa: float = Field(10.0, gt=0)
    peak_time: float = 32.0
    amplitude: float = Field(0.01, gt=0, le=0.1)
    t_off: float = 50.0
    t_on: float = 120.0
    t_end: float = 200.0
    encrypt_window: tuple[float, float] = (60.0, 80.0)
    decrypt_window: tuple[float, float] = (90.0, 110.0)
    ramp: float = Field(1.0, gt=0)
    switch_strength: float = Field(30.0, gt=0, description="D_s in Gamma")
    sigma: float = Field(0.01, gt=0)
    points_per_sigma: int = Field(10, ge=10)
    coarse_dt: float = Field(0.02, gt=0)
    fine_dt: Optional[float] = None
    gamma: float = Field(1.0, gt=0)
    gamma4: float = Field(0.0, ge=0)
    branching_31: float = Field(0.5, ge=0, le=1)
    branching_41: float = Field(0.5, ge=0, le=1)
    ground_dephasing: float = Field(0.0, ge=0)
    encrypt: bool = True
    decrypt: Literal["correct", "independent", "gradient", "none"] = "correct"
    decrypt_seed: int = 1
    key: KeySource = KeySource()
    snapshot_times: list[float] = []

    @model_validator(mode="after")
    def _physics(self):
        if self.sigma > self.key.master_length:
            raise ValueError(f"sigma={self.sigma} exceeds the master key length {self.key.master_length}")
        if self.kappa * self.gamma <= 1.0:
            raise ValueError(f"EIT storage is narrowband: kappa*Gamma must be > 1, got {self.kappa * self.gamma:g}")
        return self


class LambdaSettingsSchema(_Strict):
    duration: float = Field(5e-3, gt=0)
    t_i: float = Field(0.22, gt=0)
    peak_time: float = Field(0.15, gt=0)
    amplitude: float = Field(0.01, gt=0, le=0.1)
    points_per_sigma: int = Field(20, ge=10)
    t_end: Optional[float] = None
    dt: Optional[float] = None


class NSettingsSchema(_Strict):
    control: float = Field(5.0, gt=0)
    duration: float = Field(10.0, gt=0)
    peak_time: float = 32.0
    amplitude: float = Field(0.01, gt=0, le=0.1)
    t_off: float = 50.0
    t_on: float = 120.0
    t_end: float = 200.0
    encrypt_window: tuple[float, float] = (60.0, 80.0)
    decrypt_window: tuple[float, float] = (90.0, 110.0)
    ramp: float = Field(1.0, gt=0)
    coarse_dt: float = Field(0.02, gt=0)
    fine_dt: Optional[float] = None
    points_per_sigma: int = Field(10, ge=10)
    gamma4: float = Field(0.0, ge=0)


EXPERIMENTS = ("keytest", "heatmap", "shift_sweep", "brute_force")


class PlanSchema(_Strict):
    kind: Literal["plan"] = "plan"
    experiment: Literal["keytest", "heatmap", "shift_sweep", "brute_force"]
    scheme: Literal["lambda", "n"] = "lambda"
    optical_depths: list[float] = [600.0]
    strengths: list[float] = [1000.0]
    correlation_lengths: list[float] = [0.01]
    shifts: list[float] = [0.0]
    realizations: int = Field(1, ge=1)
    n_keys: int = Field(0, ge=0)
    master_seed: int = 0
    master_length: Optional[float] = None
    success_threshold: float = Field(0.5, gt=0)
    workers: int = Field(1, ge=1)
    lam: LambdaSettingsSchema = LambdaSettingsSchema()
    eit: NSettingsSchema = NSettingsSchema()

    @model_validator(mode="after")
    def _physics(self):
        alpha = self.master_length if self.master_length is not None else 1.0
        for s in self.correlation_lengths:
            if s <= 0 or s > alpha:
                raise ValueError(f"correlation length {s} must lie in (0, {alpha}]")
        if self.scheme == "lambda" and self.lam.duration >= 1.0:
            raise ValueError("echo memory is broadband: kappa*Gamma must be < 1")
        if self.scheme == "n" and self.eit.duration <= 1.0:
            raise ValueError("EIT storage is narrowband: kappa*Gamma must be > 1")
        if self.experiment == "heatmap" and self.scheme != "lambda":
            raise ValueError("heatmaps are defined for the lambda scheme")
        if self.experiment == "shift_sweep" and self.shifts[0] != 0.0:
            raise ValueError("the first shift must be 0 (normalization point)")
        return self


Schema = Union[DemSchema, EitSchema, PlanSchema]
_SCHEMAS = {"dem": DemSchema, "eit": EitSchema, "plan": PlanSchema}
_ATTACK = {"keytest": "wrong_key", "heatmap": "none", "shift_sweep": "shift_sweep", "brute_force": "brute_force"}


@dataclass
class LoadedConfig:
    """Validated schema (all defaults filled) and the runnable object built from it."""

    schema: Schema
    runnable: Union[LambdaConfig, NConfig, ExperimentPlan]
    source: Optional[Path] = None

    @property
    def kind(self) -> str:
        return self.schema.kind

    def echo(self) -> dict:
        return self.schema.model_dump(mode="json")


def _line_of(text: str, field: str) -> Optional[int]:
    m = re.search(rf'"{re.escape(field)}"\s*:', text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def parse_config(data: dict, text: str = "") -> Schema:
    kind = data.get("kind", "dem")
    if kind not in _SCHEMAS:
        raise ConfigError(f"field 'kind': expected one of {sorted(_SCHEMAS)}, got {kind!r}")
    try:
        return _SCHEMAS[kind].model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            field = next((str(p) for p in reversed(err["loc"]) if isinstance(p, str)), None)
            line = _line_of(text, field) if field and text else None
            where = f"field '{loc}'" + (f" (line {line})" if line else "")
            msgs.append(f"{where}: {err['msg']}")
        raise ConfigError("; ".join(msgs)) from None


def _medium_key(src: KeySource, strength: float, sigma: float, z) -> KeyProfile:
    """Key on the medium grid ``z``: generated or loaded master, then sectioned."""
    if src.path is not None:
        p = Path(src.path)
        master = load_key_npz(p) if p.suffix == ".npz" else load_key_csv(p)
    else:
        dz = z[1] - z[0]
        n = int(math.ceil(src.master_length / dz - 1e-9))
        zm = z if n == z.size - 1 else dz * np.arange(n + 1)
        master = generate_key(zm, CorrelationSpec(strength, sigma), src.seed)
    if master.z.size == z.size and src.section_offset == 0.0:
        return master
    return section_key(master, src.section_offset, 1.0, grid_z=z)


def _decrypt_key(choice: str, strength: float, sigma: float, seed: int, z):
    if choice == "correct":
        return None
    if choice == "independent":
        return generate_key(z, CorrelationSpec(strength, sigma), seed)
    if choice == "gradient":
        return rms_gradient_key(z, strength)
    if choice == "zero":
        return constant_key(z, 0.0, "zero")
    raise ConfigError(f"unknown decrypt choice {choice!r}")


def build(schema: Schema):
    if isinstance(schema, DemSchema):
        z = uniform_z(1.0, schema.points_per_sigma, schema.sigma)
        key = _medium_key(schema.key, schema.strength, schema.sigma, z)
        dec = _decrypt_key(schema.decrypt, schema.strength, schema.sigma, schema.decrypt_seed, z)
        return dem_config(schema.optical_depth, key, t_i=schema.t_i, duration=schema.kappa,
                          peak_time=schema.peak_time, amplitude=schema.amplitude, t_end=schema.t_end,
                          dt=schema.dt, decrypt_key=dec, snapshot_times=tuple(schema.snapshot_times),
                          gamma=schema.gamma, branching_31=schema.branching_31,
                          ground_dephasing=schema.ground_dephasing)
    if isinstance(schema, EitSchema):
        z = uniform_z(1.0, schema.points_per_sigma, schema.sigma)
        key = _medium_key(schema.key, schema.switch_strength, schema.sigma, z)
        if schema.decrypt == "none":
            dec = None
        elif schema.decrypt == "correct":
            dec = key.inverted()
        else:
            dec = _decrypt_key(schema.decrypt, schema.switch_strength, schema.sigma, schema.decrypt_seed, z)
        return eit_config(schema.optical_depth, z, key if schema.encrypt else None, dec,
                          control=schema.control, duration=schema.kappa, peak_time=schema.peak_time,
                          amplitude=schema.amplitude, t_off=schema.t_off, t_on=schema.t_on, t_end=schema.t_end,
                          encrypt_window=schema.encrypt_window, decrypt_window=schema.decrypt_window,
                          ramp=schema.ramp, coarse_dt=schema.coarse_dt, fine_dt=schema.fine_dt,
                          switch_strength=schema.switch_strength, snapshot_times=tuple(schema.snapshot_times),
                          gamma=schema.gamma, gamma4=schema.gamma4, branching_31=schema.branching_31,
                          branching_41=schema.branching_41, ground_dephasing=schema.ground_dephasing)
    return ExperimentPlan(
        scheme=schema.scheme,
        optical_depths=tuple(schema.optical_depths),
        strengths=tuple(schema.strengths),
        correlation_lengths=tuple(schema.correlation_lengths),
        shifts=tuple(schema.shifts),
        realizations=schema.realizations,
        attack=_ATTACK[schema.experiment],
        n_keys=schema.n_keys,
        master_seed=schema.master_seed,
        master_length=schema.master_length,
        success_threshold=schema.success_threshold,
        workers=schema.workers,
        lam=LambdaSettings(**schema.lam.model_dump()),
        eit=NSettings(**{k: tuple(v) if isinstance(v, list) else v for k, v in schema.eit.model_dump().items()}),
    )


def load_config(path, overrides: Optional[dict] = None) -> LoadedConfig:
    """Read, validate and build a configuration file.

    ``overrides`` (e.g. a master seed from the command line) are merged into
    the document before validation.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if overrides:
        data = {**data, **overrides}
    schema = parse_config(data, text)
    try:
        runnable = build(schema)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return LoadedConfig(schema, runnable, path)


def shipped_config(name: str) -> Path:
    """Path of a configuration bundled with the package (``configs/<name>.json``)."""
    p = Path(__file__).parent / "configs" / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(f"no shipped config named {name!r}")
    return p
