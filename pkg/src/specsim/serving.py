"""Discrete-event model of an inference server with adaptive speculation.

The engine advances a closed-loop batch one decode iteration at a time on a
simulated millisecond clock. Each iteration either decodes one token per
request (latency T(b)) or runs one speculation step (latency
gamma*D0 + T(b(gamma+1))) in which every request advances by a sampled
acceptance length. The training engine is a second actor that only talks to
the server through timestamped outcomes.
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import controller as ctl
from .controller import ControllerParams, WarmupMonitor
from .perf_model import (
    LatencyProfile,
    SpeculationConfig,
    alpha_from_accept_length,
    lookup_latency,
    practical_speedup,
    sample_accept_length,
)
from .trainer import SimulatedTrainer, TrainerProfile
from .workload import ScriptState, WorkloadScript, current_alpha

TIDE_ADAPTIVE = "tide_adaptive"
TIDE_DEFAULT = "tide_default"
SPECULATION_OFF = "speculation_off"
SPECULATION_ON_NO_TRAINING = "speculation_on_no_training"
MODES = (TIDE_ADAPTIVE, TIDE_DEFAULT, SPECULATION_OFF, SPECULATION_ON_NO_TRAINING)
TRAINING_MODES = (TIDE_ADAPTIVE, TIDE_DEFAULT)

MIB = 1 << 20

METRIC_COLUMNS = (
    "clock_ms",
    "batch_size",
    "speculation_on",
    "mean_accept_length",
    "tokens_emitted",
    "throughput_tokens_per_s",
    "collection_on",
    "buffer_bytes",
    "cumulative_storage_bytes",
    "draft_version",
)


class ConfigError(ValueError):
    """Run configuration rejected before the clock starts."""


@dataclass(frozen=True)
class SignalGeometry:
    """Size of the hidden-state record captured per accepted token."""

    hidden_dim: int = 2880
    layers_tapped: int = 3
    bytes_per_element: int = 2

    def __post_init__(self) -> None:
        if min(self.hidden_dim, self.layers_tapped, self.bytes_per_element) < 1:
            raise ConfigError("signal geometry fields must be positive integers")

    @property
    def bytes_per_token(self) -> int:
        return self.layers_tapped * self.hidden_dim * self.bytes_per_element


@dataclass
class SignalBuffer:
    """Host-side staging buffer flushed to shared storage when full."""

    geometry: SignalGeometry = field(default_factory=SignalGeometry)
    flush_threshold_bytes: int = 64 * MIB
    overhead_ms_per_flush: float = 0.0
    records: int = 0
    bytes: int = 0
    cumulative_storage_bytes: int = 0
    flushes: int = 0

    def extract(self, accepted_tokens: int, collection_enabled: bool) -> float:
        """Stage signals for ``accepted_tokens`` tokens; returns the latency cost in ms.

        The cost is zero unless a flush happens and an overhead is configured.
        """
        if accepted_tokens < 0:
            raise ValueError("accepted_tokens must be >= 0")
        if not collection_enabled or accepted_tokens == 0:
            return 0.0
        self.records += accepted_tokens
        self.bytes += accepted_tokens * self.geometry.bytes_per_token
        if self.bytes > self.flush_threshold_bytes:
            self.flush()
            return self.overhead_ms_per_flush
        return 0.0

    def flush(self) -> None:
        if self.bytes == 0:
            return
        self.cumulative_storage_bytes += self.bytes
        self.records = 0
        self.bytes = 0
        self.flushes += 1


def extract_signals(buffer: SignalBuffer, accepted_tokens: int, collection_enabled: bool) -> float:
    return buffer.extract(accepted_tokens, collection_enabled)


def adaptive_drafter_decide(monitored_alpha: float, profile: LatencyProfile, spec: SpeculationConfig, b: int) -> bool:
    """Speculate iff the predicted speedup clears 1 + hysteresis margin."""
    return practical_speedup(profile, monitored_alpha, spec.gamma, b) > 1.0 + spec.hysteresis_margin


def iteration_latency(profile: LatencyProfile, spec: SpeculationConfig, b: int, speculate: bool) -> float:
    if speculate:
        return spec.gamma * profile.d0 + lookup_latency(profile, b * (spec.gamma + 1))
    return lookup_latency(profile, b)


@dataclass(frozen=True)
class EngineConfig:
    mode: str = TIDE_ADAPTIVE
    initial_speculation: bool = True
    # While speculation is off the acceptance monitor goes blind; every
    # probe_interval-th iteration speculates anyway to keep it fed. 0 disables.
    probe_interval: int = 64
    flush_threshold_bytes: int = 64 * MIB
    signal_overhead_ms_per_flush: float = 0.0
    throughput_window: int = 64
    # Collect signals regardless of the controller (used to isolate extraction cost).
    force_collection: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.probe_interval < 0 or self.throughput_window < 1 or self.flush_threshold_bytes < 1:
            raise ConfigError("probe_interval >= 0, throughput_window >= 1 and flush_threshold_bytes >= 1 required")
        if self.signal_overhead_ms_per_flush < 0:
            raise ConfigError("signal_overhead_ms_per_flush must be >= 0")

    @classmethod
    def from_dict(cls, d: dict | None) -> "EngineConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown engine fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunMetrics:
    """Per-iteration time series plus event log and run totals."""

    columns: dict[str, list] = field(default_factory=lambda: {c: [] for c in METRIC_COLUMNS})
    phase_index: list[int] = field(default_factory=list)
    phase_names: list[str] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    total_tokens: int = 0
    total_time_ms: float = 0.0
    flush_count: int = 0
    completed_requests: int = 0
    mode: str = ""

    def append(self, phase_idx: int, **row) -> None:
        for c in METRIC_COLUMNS:
            self.columns[c].append(row[c])
        self.phase_index.append(phase_idx)

    def __len__(self) -> int:
        return len(self.phase_index)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    def iteration_latencies(self) -> np.ndarray:
        clock = self.array("clock_ms")
        return np.diff(clock, prepend=0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in zip(*(self.columns[c] for c in METRIC_COLUMNS)):
            w.writerow([repr(v) if isinstance(v, float) else int(v) for v in row])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def phase_throughput(self, idx: int, t_from: float | None = None, t_to: float | None = None) -> float | None:
        """Tokens/s over iterations of phase ``idx`` ending in (t_from, t_to]."""
        clock = self.array("clock_ms")
        lat = self.iteration_latencies()
        tok = self.array("tokens_emitted")
        mask = np.asarray(self.phase_index) == idx
        if t_from is not None:
            mask &= clock - lat >= t_from
        if t_to is not None:
            mask &= clock <= t_to
        dt = lat[mask].sum()
        return float(tok[mask].sum() / dt * 1000.0) if dt > 0 else None

    def adaptation_summary(self) -> list[dict]:
        """Per phase: throughput before the phase's first deploy and after its last one."""
        out = []
        clock = self.array("clock_ms")
        idx = np.asarray(self.phase_index)
        for i, name in enumerate(self.phase_names):
            in_phase = clock[idx == i]
            end = float(in_phase[-1]) if len(in_phase) else -1.0
            # deploys that land after the phase is over never served it
            deploys = [
                e["clock_ms"]
                for e in self.events
                if e["event"] == ctl.DEPLOY and e.get("phase") == name and e["clock_ms"] < end
            ]
            row = {"phase": name, "throughput": self.phase_throughput(i), "deploys": len(deploys)}
            if deploys:
                row["pre_adaptation_throughput"] = self.phase_throughput(i, t_to=deploys[0])
                row["post_adaptation_throughput"] = self.phase_throughput(i, t_from=deploys[-1])
            else:
                row["pre_adaptation_throughput"] = row["post_adaptation_throughput"] = None
            out.append(row)
        return out

    def summary(self) -> dict:
        spec = self.array("speculation_on")
        coll = self.array("collection_on")
        return {
            "mode": self.mode,
            "iterations": len(self),
            "total_tokens": int(self.total_tokens),
            "total_time_ms": float(self.total_time_ms),
            "mean_throughput_tokens_per_s": self.total_tokens / self.total_time_ms * 1000.0 if self.total_time_ms else 0.0,
            "completed_requests": self.completed_requests,
            "speculation_duty_cycle": float(spec.mean()) if len(spec) else 0.0,
            "collection_duty_cycle": float(coll.mean()) if len(coll) else 0.0,
            "flush_count": self.flush_count,
            "cumulative_storage_bytes": int(self.columns["cumulative_storage_bytes"][-1]) if len(self) else 0,
            "final_draft_version": int(self.columns["draft_version"][-1]) if len(self) else 0,
            "phases": self.adaptation_summary(),
            "events": self.events,
        }

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


class Engine:
    """One serving actor plus its trainer peer, stepped iteration by iteration."""

    def __init__(
        self,
        script: WorkloadScript,
        profile: LatencyProfile,
        spec: SpeculationConfig | None = None,
        controller: ControllerParams | None = None,
        trainer: TrainerProfile | None = None,
        geometry: SignalGeometry | None = None,
        config: EngineConfig | None = None,
        seed: int = 0,
    ):
        self.config = config or EngineConfig()
        self.profile = profile
        self.spec = spec or SpeculationConfig()
        self.script = script
        self.state = ScriptState(script)
        self.rng = np.random.default_rng(seed)
        self.mode = self.config.mode
        self.training = self.mode in TRAINING_MODES
        if self.training and trainer is None:
            raise ConfigError(f"mode {self.mode} needs a trainer profile")
        self.trainer = SimulatedTrainer(script, trainer) if trainer is not None else None
        self.monitor = WarmupMonitor(controller or ControllerParams()) if self.mode != SPECULATION_OFF else None
        self.buffer = SignalBuffer(
            geometry or SignalGeometry(),
            self.config.flush_threshold_bytes,
            self.config.signal_overhead_ms_per_flush,
        )
        self.clock = 0.0
        self.speculation_enabled = self.mode != SPECULATION_OFF and (
            self.config.initial_speculation or self.mode != TIDE_ADAPTIVE
        )
        self._since_spec = 0
        self._outcome = None  # (due_ms, result)
        self._alpha_cache: dict[str, float] = {}
        self._window: deque = deque(maxlen=self.config.throughput_window)
        self._w_tok = 0
        self._w_lat = 0.0
        self._phase_idx = {p.name: i for i, p in enumerate(script.all_phases)}
        self.metrics = RunMetrics(phase_names=[p.name for p in script.all_phases], mode=self.mode)
        self._seen_events = 0

    # ------------------------------------------------------------------
    @property
    def controller(self):
        return self.monitor.state if self.monitor is not None else None

    @property
    def monitored_alpha(self) -> float | None:
        c = self.controller
        return c.ema_short if c is not None else None

    @property
    def collecting(self) -> bool:
        if self.config.force_collection:
            return True
        c = self.controller
        return bool(self.training and c is not None and c.collection_enabled)

    def _phase_alpha(self, name: str) -> float:
        a = self._alpha_cache.get(name)
        if a is None:
            phase = self.script.phase(name)
            a = self.trainer.alpha(phase) if self.trainer is not None and self.training else current_alpha(phase, 0.0)
            self._alpha_cache[name] = a
        return a

    def _log_controller_events(self, phase: str | None = None) -> None:
        c = self.controller
        if c is None:
            return
        for t, ev in c.events[self._seen_events :]:
            entry = {"clock_ms": t, "event": ev}
            if phase is not None:
                entry["phase"] = phase
            self.metrics.events.append(entry)
        self._seen_events = len(c.events)

    def _apply_training_outcome(self) -> None:
        if self._outcome is None or self._outcome[0] > self.clock:
            return
        _, result = self._outcome
        self._outcome = None
        decision = self.controller.finish_job(result.alpha_eval, self.clock)
        if decision == ctl.DEPLOY:
            self.trainer.deploy(result)
            self._alpha_cache.clear()
        self._log_controller_events(result.phase)

    def _maybe_start_training(self) -> None:
        c = self.controller
        if not self.training or c is None or c.in_flight is not None:
            return
        job = c.start_job(self.clock)
        if job is None:
            return
        try:
            result = self.trainer(job)
        except Exception:
            c.abort_job()
            raise
        self._log_controller_events(result.phase)
        self._outcome = (self.clock + result.duration_ms, result)

    def _decide(self, b: int) -> tuple[bool, bool]:
        """Returns (speculate this iteration, drafter's enabled flag)."""
        if self.mode == SPECULATION_OFF:
            return False, False
        if self.mode in (TIDE_DEFAULT, SPECULATION_ON_NO_TRAINING):
            return True, True
        if self.controller is not None:
            self.speculation_enabled = adaptive_drafter_decide(self.monitored_alpha, self.profile, self.spec, b)
        if self.speculation_enabled:
            return True, True
        probe = self.config.probe_interval > 0 and self._since_spec + 1 >= self.config.probe_interval
        return probe, False

    # ------------------------------------------------------------------
    def step(self) -> bool:
        """Advance one decode iteration. Returns False once the workload is drained."""
        self._apply_training_outcome()
        batch = self.state.next_batch()
        if not batch:
            return False
        b = len(batch)
        speculate, _ = self._decide(b)
        gamma = self.spec.gamma
        latency = iteration_latency(self.profile, self.spec, b, speculate)

        remaining = np.array([r.output_tokens_remaining for r in batch], dtype=np.int64)
        if speculate:
            base = {name: self._phase_alpha(name) for name in {r.phase_name for r in batch}}
            alphas = np.array([base[r.phase_name] + r.alpha_jitter for r in batch])
            np.clip(alphas, 0.0, 1.0, out=alphas)
            ell = sample_accept_length(self.rng, alphas, gamma)
            emitted = np.minimum(ell, remaining)
            mean_ell = float(ell.sum()) / b
            self._since_spec = 0
        else:
            ell = None
            emitted = np.ones(b, dtype=np.int64)
            mean_ell = 1.0
            self._since_spec += 1
        tokens = int(emitted.sum())

        collecting = self.collecting
        latency += self.buffer.extract(tokens, collecting)
        self.clock += latency

        finished = []
        if ell is None:
            for r in batch:
                r.output_tokens_remaining -= 1
                r.tokens_emitted += 1
                if r.output_tokens_remaining == 0:
                    finished.append(r)
        else:
            for r, e, k in zip(batch, emitted.tolist(), ell.tolist()):
                r.output_tokens_remaining -= e
                r.tokens_emitted += e
                r.spec_steps += 1
                r.accept_sum += k
                if r.output_tokens_remaining == 0:
                    finished.append(r)
        for r in finished:
            self._on_complete(r)
        self._maybe_start_training()

        w = self._window
        if len(w) == w.maxlen:
            t0, l0 = w[0]
            self._w_tok -= t0
            self._w_lat -= l0
        w.append((tokens, latency))
        self._w_tok += tokens
        self._w_lat += latency
        self.metrics.total_tokens += tokens
        self.metrics.append(
            self._phase_idx[self.state.current_phase.name],
            clock_ms=self.clock,
            batch_size=b,
            speculation_on=speculate,
            mean_accept_length=mean_ell,
            tokens_emitted=tokens,
            throughput_tokens_per_s=self._w_tok / self._w_lat * 1000.0,
            collection_on=collecting,
            buffer_bytes=self.buffer.bytes,
            cumulative_storage_bytes=self.buffer.cumulative_storage_bytes,
            draft_version=self.controller.draft_version if self.controller is not None else 0,
        )
        return True

    def _on_complete(self, r) -> None:
        self.metrics.completed_requests += 1
        if self.monitor is None or r.spec_steps == 0:
            return
        alpha = alpha_from_accept_length(min(r.accept_sum / r.spec_steps, self.spec.gamma + 1.0), self.spec.gamma)
        self.monitor.observe(alpha, self.clock)
        c = self.controller
        if c is not None and self.training:
            c.record_sample(r.id, alpha, r.phase_name)
        self._log_controller_events(r.phase_name)

    def run(self, max_iterations: int | None = None) -> RunMetrics:
        n = 0
        while self.step():
            n += 1
            if max_iterations is not None and n >= max_iterations:
                break
        self.buffer.flush()
        if len(self.metrics):
            self.metrics.columns["buffer_bytes"][-1] = self.buffer.bytes
            self.metrics.columns["cumulative_storage_bytes"][-1] = self.buffer.cumulative_storage_bytes
        self.metrics.flush_count = self.buffer.flushes
        self.metrics.total_time_ms = self.clock
        return self.metrics


def run(
    script: WorkloadScript,
    profile: LatencyProfile,
    spec: SpeculationConfig | None = None,
    controller: ControllerParams | None = None,
    trainer: TrainerProfile | None = None,
    mode: str = TIDE_ADAPTIVE,
    geometry: SignalGeometry | None = None,
    seed: int = 0,
    **engine_kw,
) -> RunMetrics:
    """Simulate ``script`` end to end under ``mode``; deterministic given the seeds."""
    config = EngineConfig(mode=mode, **engine_kw)
    return Engine(script, profile, spec, controller, trainer, geometry, config, seed).run()
