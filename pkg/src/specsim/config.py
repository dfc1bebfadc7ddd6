"""Run configuration: one JSON document wiring every component together."""

from __future__ import annotations

import json
from importlib import resources
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .controller import ControllerParams
from .perf_model import BUNDLED_PROFILES, LatencyProfile, ProfileError, SpeculationConfig, bundled_profile_path, load_profile
from .serving import ConfigError, EngineConfig, RunMetrics, SignalGeometry, run
from .trainer import TrainerProfile
from .workload import BUNDLED_WORKLOADS, WorkloadError, WorkloadScript, bundled_workload_path, load_script

_KNOWN = {"profile_path", "workload_path", "spec", "controller", "trainer", "geometry", "engine", "mode", "seed", "output_dir"}


def resolve_profile_path(ref: str, base: Path | None = None) -> Path:
    """A file path (relative to ``base``) or the key of a bundled profile."""
    p = Path(ref)
    if not p.is_absolute() and base is not None and (base / p).exists():
        return base / p
    if p.exists():
        return p
    if ref in BUNDLED_PROFILES:
        return bundled_profile_path(ref)
    raise ConfigError(f"profile {ref!r} not found")


def resolve_workload_path(ref: str, base: Path | None = None) -> Path:
    p = Path(ref)
    if not p.is_absolute() and base is not None and (base / p).exists():
        return base / p
    if p.exists():
        return p
    if ref in BUNDLED_WORKLOADS:
        return bundled_workload_path(ref)
    raise ConfigError(f"workload {ref!r} not found")


@dataclass
class RunConfig:
    profile: LatencyProfile
    script: WorkloadScript
    spec: SpeculationConfig = field(default_factory=SpeculationConfig)
    controller: ControllerParams = field(default_factory=ControllerParams)
    trainer: TrainerProfile | None = None
    geometry: SignalGeometry = field(default_factory=SignalGeometry)
    engine: EngineConfig = field(default_factory=EngineConfig)
    seed: int = 0
    output_dir: Path = Path("out")

    @property
    def mode(self) -> str:
        return self.engine.mode

    def with_overrides(self, mode: str | None = None, seed: int | None = None, **engine_kw) -> "RunConfig":
        eng = asdict(self.engine)
        if mode is not None:
            eng["mode"] = mode
        eng.update(engine_kw)
        return replace(self, engine=EngineConfig(**eng), seed=self.seed if seed is None else seed)

    def simulate(self) -> RunMetrics:
        kw = {k: v for k, v in self.engine.__dict__.items() if k != "mode"}
        return run(
            self.script, self.profile, self.spec, self.controller, self.trainer, self.engine.mode,
            self.geometry, self.seed, **kw,
        )


def parse_run_config(d: dict, base: Path | None = None) -> RunConfig:
    """Validate a config mapping; every problem is raised as ConfigError before simulation."""
    unknown = set(d) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("profile_path", "workload_path"):
        if key not in d:
            raise ConfigError(f"config missing {key!r}")
    try:
        profile = load_profile(resolve_profile_path(d["profile_path"], base))
        script = load_script(resolve_workload_path(d["workload_path"], base))
        engine = dict(d.get("engine") or {})
        if "mode" in d:
            engine["mode"] = d["mode"]
        trainer = TrainerProfile.from_dict(d["trainer"]) if d.get("trainer") else None
        cfg = RunConfig(
            profile=profile,
            script=script,
            spec=SpeculationConfig(**(d.get("spec") or {})),
            controller=ControllerParams.from_dict(d.get("controller")),
            trainer=trainer,
            geometry=SignalGeometry(**(d.get("geometry") or {})),
            engine=EngineConfig.from_dict(engine),
            seed=int(d.get("seed", 0)),
            output_dir=Path(d.get("output_dir", "out")),
        )
    except (ProfileError, WorkloadError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if cfg.engine.mode in ("tide_adaptive", "tide_default") and cfg.trainer is None:
        raise ConfigError(f"mode {cfg.engine.mode} requires a 'trainer' section")
    return cfg


BUNDLED_RUNS = ("langshift4",)


def bundled_run_path(key: str) -> Path:
    return Path(str(resources.files("specsim") / "data" / "runs" / f"{key}.json"))


def load_run_config(path: str | Path) -> RunConfig:
    """Load a JSON run config from ``path``, or a bundled one by key (e.g. ``"langshift4"``)."""
    if not Path(path).exists() and str(path) in BUNDLED_RUNS:
        path = bundled_run_path(str(path))
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_run_config(d, path.parent)
