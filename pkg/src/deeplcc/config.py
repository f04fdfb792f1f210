"""YAML run configuration (schema documented in docs/config.md)."""
from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .controller import ControllerConfig
from .datamat import MatrixKind, samples_for_columns
from .errors import DeepLccError
from .model import FleetTopology, OvmParams
from .privacy import (AffineMap1, AffineMap2, ConstraintMode, FleetMasks, identity_masks,
                      lift_maps, reference_masks)
from .sim import NoiseSpec, ScenarioSpec


class ConfigError(DeepLccError, ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    columns: int = 900
    input_half_width: float = 2.0
    head_half_width: float = 2.0

    def samples(self, kind: MatrixKind, T_ini: int, N: int) -> int:
        return samples_for_columns(kind, self.columns, T_ini, N)


@dataclass(frozen=True)
class MaskSpec:
    preset: str | None = "reference"
    cavs: tuple = ()
    constraint_mode: ConstraintMode = ConstraintMode.EXACT_PREIMAGE

    def build(self, fleet: FleetTopology) -> FleetMasks:
        if self.cavs:
            if len(self.cavs) != fleet.m:
                raise ConfigError(f"mask set lists {len(self.cavs)} CAVs, fleet has {fleet.m}")
            smaps = [AffineMap2(c["P"], c["l"]) for c in self.cavs]
            imaps = [AffineMap1(c["p_u"], c["l_u"]) for c in self.cavs]
            return lift_maps(smaps, imaps, fleet)
        if self.preset == "identity":
            return identity_masks(fleet)
        if self.preset == "reference":
            return reference_masks(fleet)
        raise ConfigError(f"unknown mask preset {self.preset!r}")


@dataclass(frozen=True)
class SweepSpec:
    columns: tuple = (500, 800, 1100, 1400)
    seeds: int = 5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dt: float = 0.05
    v_star: float = 15.0
    reference_window: int = 15
    witnesses: int = 100
    fleet: FleetTopology = field(default_factory=lambda: FleetTopology(6, (2, 5)))
    ovm: OvmParams = field(default_factory=OvmParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    data: DataSpec = field(default_factory=DataSpec)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    masks: MaskSpec = field(default_factory=MaskSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    output_dir: str = "out"

    @property
    def kind(self) -> MatrixKind:
        return self.controller.matrix_kind

    def data_samples(self) -> int:
        return self.data.samples(self.kind, self.controller.T_ini, self.controller.N)

    def seeds(self) -> dict[str, np.random.Generator]:
        """Independent generators for excitation, plant noise and witness sampling."""
        ss = np.random.SeedSequence(self.seed).spawn(3)
        return {name: np.random.default_rng(s)
                for name, s in zip(("excitation", "noise", "witnesses"), ss)}

    def mask_set(self) -> FleetMasks:
        return self.masks.build(self.fleet)


def _build(cls, raw, section):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    top = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    fl = raw.pop("fleet", None) or {}
    try:
        fleet = FleetTopology(int(fl.get("n", 6)), tuple(fl.get("cav_indices", (2, 5))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'fleet': {exc}") from exc
    if fleet.m < 1:
        raise ConfigError("fleet needs at least one CAV")
    sc = dict(raw.pop("scenario", None) or {})
    sc.setdefault("v_star", raw.get("v_star", 15.0))
    ms = raw.pop("masks", None) or {}
    masks = MaskSpec(preset=ms.get("preset", "reference"),
                     cavs=tuple(ms.get("cavs", ()) or ()),
                     constraint_mode=ConstraintMode(ms.get("constraint_mode", "exact_preimage")))
    cfg = RunConfig(
        fleet=fleet,
        ovm=_build(OvmParams, raw.pop("ovm", None), "ovm"),
        controller=_build(ControllerConfig, raw.pop("controller", None), "controller"),
        data=_build(DataSpec, raw.pop("data", None), "data"),
        scenario=_build(ScenarioSpec, sc, "scenario"),
        noise=_build(NoiseSpec, raw.pop("noise", None), "noise"),
        masks=masks,
        sweep=_build(SweepSpec, raw.pop("sweep", None), "sweep"),
        **raw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    if not 0 < cfg.v_star < cfg.ovm.v_max:
        raise ConfigError("v_star must lie strictly between 0 and v_max")
    if cfg.scenario.v_star != cfg.v_star:
        raise ConfigError("scenario.v_star must equal v_star")
    a_min = cfg.controller.a_bounds[0]
    if cfg.scenario.brake_decel < a_min:
        raise ConfigError(f"brake deceleration {cfg.scenario.brake_decel} is below a_min {a_min}")
    if cfg.data.columns < 1 or cfg.witnesses < 1:
        raise ConfigError("data.columns and witnesses must be >= 1")
    cfg.mask_set()


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return from_dict(raw or {})


@contextmanager
def atomic_path(path):
    """Yield a temporary sibling path; rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(text)
