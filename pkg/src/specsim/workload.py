"""Phased request streams with per-phase draft/target alignment dynamics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

BUNDLED_WORKLOADS = ("langshift4", "sharegpt", "science", "numinamath", "evolcodealpaca")


class WorkloadError(ValueError):
    """Raised with every violated invariant of a workload config."""

    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__("invalid workload: " + "; ".join(self.problems))


@dataclass(frozen=True)
class PhaseSpec:
    """One workload phase.

    ``alpha_start`` is the stale draft's acceptance rate on entry;
    ``alpha_ceiling`` is what adaptation converges to, with time constant
    ``tau_samples`` measured in training samples.
    """

    name: str
    num_requests: int
    concurrency: int
    mean_output_tokens: int
    alpha_start: float
    alpha_ceiling: float
    tau_samples: float
    alpha_noise_sd: float = 0.0

    def problems(self) -> list[str]:
        p = []
        tag = f"phase {self.name!r}"
        if self.num_requests < 1:
            p.append(f"{tag}: num_requests must be >= 1")
        if self.concurrency < 1:
            p.append(f"{tag}: concurrency must be >= 1")
        if self.mean_output_tokens < 1:
            p.append(f"{tag}: mean_output_tokens must be >= 1")
        if not 0.0 <= self.alpha_start <= self.alpha_ceiling <= 1.0:
            p.append(f"{tag}: need 0 <= alpha_start <= alpha_ceiling <= 1")
        if not self.tau_samples > 0:
            p.append(f"{tag}: tau_samples must be > 0")
        if not self.alpha_noise_sd >= 0:
            p.append(f"{tag}: alpha_noise_sd must be >= 0")
        return p


@dataclass
class Request:
    id: int
    phase_name: str
    output_tokens_remaining: int
    alpha_jitter: float = 0.0
    # accounting filled in by the engine
    tokens_emitted: int = 0
    spec_steps: int = 0
    accept_sum: int = 0


@dataclass(frozen=True)
class WorkloadScript:
    """Ordered phases plus the seed that fixes request lengths and jitter.

    ``warmup`` is an optional calibration phase served before ``phases``;
    it represents traffic the initial draft was trained on.
    """

    phases: tuple[PhaseSpec, ...]
    rng_seed: int = 0
    warmup: PhaseSpec | None = None

    @property
    def all_phases(self) -> tuple[PhaseSpec, ...]:
        return ((self.warmup,) if self.warmup else ()) + tuple(self.phases)

    def phase(self, name: str) -> PhaseSpec:
        for p in self.all_phases:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"rng_seed": self.rng_seed, "phases": [asdict(p) for p in self.phases]}
        if self.warmup is not None:
            d["warmup"] = asdict(self.warmup)
        return d


def _phase_from_dict(d: dict, problems: list[str], where: str) -> PhaseSpec | None:
    fields = PhaseSpec.__dataclass_fields__
    unknown = set(d) - set(fields)
    if unknown:
        problems.append(f"{where}: unknown fields {sorted(unknown)}")
    required = [k for k in fields if k != "alpha_noise_sd"]
    missing = [k for k in required if k not in d]
    if missing:
        problems.append(f"{where}: missing fields {missing}")
        return None
    try:
        return PhaseSpec(
            name=str(d["name"]),
            num_requests=int(d["num_requests"]),
            concurrency=int(d["concurrency"]),
            mean_output_tokens=int(d["mean_output_tokens"]),
            alpha_start=float(d["alpha_start"]),
            alpha_ceiling=float(d["alpha_ceiling"]),
            tau_samples=float(d["tau_samples"]),
            alpha_noise_sd=float(d.get("alpha_noise_sd", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def build_script(config: dict) -> WorkloadScript:
    """Validate a workload config mapping and build the script.

    Every violated invariant is collected before raising ``WorkloadError``.
    """
    problems: list[str] = []
    raw = config.get("phases")
    if not isinstance(raw, list) or not raw:
        problems.append("config needs a non-empty 'phases' list")
        raw = []
    phases = []
    for i, d in enumerate(raw):
        p = _phase_from_dict(d, problems, f"phases[{i}]")
        if p is not None:
            problems.extend(p.problems())
            phases.append(p)
    warmup = None
    if config.get("warmup") is not None:
        warmup = _phase_from_dict(config["warmup"], problems, "warmup")
        if warmup is not None:
            problems.extend(warmup.problems())
    names = [p.name for p in phases] + ([warmup.name] if warmup else [])
    if len(set(names)) != len(names):
        problems.append("phase names must be unique")
    if problems:
        raise WorkloadError(problems)
    return WorkloadScript(tuple(phases), int(config.get("rng_seed", 0)), warmup)


def load_script(path: str | Path) -> WorkloadScript:
    path = Path(path)
    try:
        config = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise WorkloadError([f"{path}: {exc}"]) from exc
    return build_script(config)


def bundled_workload_path(key: str) -> Path:
    return Path(str(resources.files("specsim") / "data" / "workloads" / f"{key}.json"))


def bundled_workload(key: str) -> WorkloadScript:
    if key not in BUNDLED_WORKLOADS:
        raise KeyError(f"unknown bundled workload {key!r}; choose from {BUNDLED_WORKLOADS}")
    return load_script(bundled_workload_path(key))


def current_alpha(phase: PhaseSpec, trained_samples: float, jitter: float = 0.0) -> float:
    """Acceptance rate of a draft adapted on ``trained_samples`` samples of ``phase``.

    Saturating exponential from ``alpha_start`` toward ``alpha_ceiling``;
    ``jitter`` is added afterwards and the result clamped to [0, 1].
    """
    if trained_samples < 0:
        raise ValueError("trained_samples must be >= 0")
    gap = phase.alpha_ceiling - phase.alpha_start
    a = phase.alpha_ceiling - gap * math.exp(-trained_samples / phase.tau_samples)
    return min(1.0, max(0.0, a + jitter))


@dataclass
class ScriptState:
    """Single-owner cursor over a script's requests.

    Output lengths are geometric with the phase mean (minimum 1); jitter is
    normal with the phase's ``alpha_noise_sd``. Both are drawn lazily from
    one generator in admission order, so a seed fixes the whole sequence.
    """

    script: WorkloadScript
    rng: np.random.Generator = field(init=False)
    batch: list[Request] = field(default_factory=list)
    _phase_idx: int = 0
    _issued_in_phase: int = 0
    _next_id: int = 0

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.script.rng_seed)
        self._order = self.script.all_phases

    @property
    def current_phase(self) -> PhaseSpec:
        return self._order[min(self._phase_idx, len(self._order) - 1)]

    @property
    def exhausted(self) -> bool:
        return self._phase_idx >= len(self._order)

    def _admit(self) -> Request | None:
        while self._phase_idx < len(self._order) and self._issued_in_phase >= self._order[self._phase_idx].num_requests:
            self._phase_idx += 1
            self._issued_in_phase = 0
        if self._phase_idx >= len(self._order):
            return None
        ph = self._order[self._phase_idx]
        length = int(self.rng.geometric(1.0 / ph.mean_output_tokens))
        jitter = float(self.rng.normal(0.0, ph.alpha_noise_sd)) if ph.alpha_noise_sd > 0 else 0.0
        req = Request(self._next_id, ph.name, length, jitter)
        self._next_id += 1
        self._issued_in_phase += 1
        return req

    def next_batch(self) -> list[Request]:
        """Drop finished requests and refill up to the current phase's concurrency.

        Returns the live batch; empty once every request has completed.
        """
        self.batch = [r for r in self.batch if r.output_tokens_remaining > 0]
        while not self.exhausted and len(self.batch) < self.current_phase.concurrency:
            req = self._admit()
            if req is None:
                break
            self.batch.append(req)
        return self.batch


def script_requests(script: WorkloadScript) -> list[Request]:
    """Every request of ``script`` in admission order (same draws as ScriptState)."""
    state = ScriptState(script)
    out = []
    while (r := state._admit()) is not None:
        out.append(r)
    return out
