"""Asynchronous draft-training model and recompute-baseline cost accounting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .controller import TrainingJob
from .workload import PhaseSpec, WorkloadScript, current_alpha

MS_PER_HOUR = 3_600_000.0

OFFLINE = "offline"
ONLINE = "online"
TIDE = "tide"


@dataclass(frozen=True)
class TrainerProfile:
    """Draft-training throughput on the training GPUs.

    ``prefill_samples_per_hour`` is the target-model hidden-state
    regeneration rate; only the recompute baselines pay it.
    """

    samples_per_hour: float
    prefill_samples_per_hour: float = float("inf")
    epochs: int = 3

    def __post_init__(self) -> None:
        if not (self.samples_per_hour > 0 and self.prefill_samples_per_hour > 0):
            raise ValueError("trainer rates must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerProfile":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trainer fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_hours(cls, dataset_samples: float, train_hours: float, prefill_hours: float, epochs: int = 3):
        """Profile whose costs on ``dataset_samples`` are the given wall hours.

        ``train_hours`` covers all epochs; ``prefill_hours`` is one pass.
        """
        return cls(dataset_samples * epochs / train_hours, dataset_samples / prefill_hours, epochs)


@dataclass(frozen=True)
class TrainingOutcome:
    duration_hours: float
    alpha_eval: float
    new_version: int

    def __post_init__(self) -> None:
        if not self.duration_hours > 0:
            raise ValueError("duration must be > 0")

    @property
    def duration_ms(self) -> float:
        return self.duration_hours * MS_PER_HOUR


def train(
    n: int, phase: PhaseSpec, profile: TrainerProfile, samples_seen_before: float = 0.0, version: int = 0
) -> TrainingOutcome:
    """Fine-tune on ``n`` samples of ``phase``: duration and resulting acceptance rate."""
    if n <= 0:
        raise ValueError("training job needs n > 0 samples")
    duration = n * profile.epochs / profile.samples_per_hour
    return TrainingOutcome(duration, current_alpha(phase, samples_seen_before + n), version + 1)


@dataclass
class SimulatedTrainer:
    """Stand-in for the training engine, callable on a controller job.

    Tracks how many samples of each phase the deployed draft has been
    trained on; that count drives the phase's acceptance dynamics. A job is
    attributed to the phase of its newest sample, and only train-split
    samples from that phase advance the dynamics.
    """

    script: WorkloadScript
    profile: TrainerProfile
    deployed_samples: dict[str, float] = field(default_factory=dict)
    jobs: int = 0

    def job_phase(self, job: TrainingJob) -> str:
        newest = job.eval[-1] if job.eval else job.train[-1]
        return newest.phase

    def __call__(self, job: TrainingJob) -> TrainingOutcome:
        name = self.job_phase(job)
        phase = self.script.phase(name)
        n_phase = Counter(s.phase for s in job.train)[name]
        before = self.deployed_samples.get(name, 0.0)
        out = train(max(n_phase, 1), phase, self.profile, before, job.base_version)
        # duration reflects the full train split, not just the attributed phase
        duration = len(job.train) * self.profile.epochs / self.profile.samples_per_hour
        self.jobs += 1
        return _Result(duration, out.alpha_eval, out.new_version, name, before + n_phase)

    def deploy(self, result: "_Result") -> None:
        self.deployed_samples[result.phase] = result.samples_after

    def alpha(self, phase: PhaseSpec, jitter: float = 0.0) -> float:
        return current_alpha(phase, self.deployed_samples.get(phase.name, 0.0), jitter)


@dataclass(frozen=True)
class _Result(TrainingOutcome):
    phase: str = ""
    samples_after: float = 0.0


# --------------------------------------------------------------------------
# cost comparators


def compare_training_modes(dataset_samples: float, profile: TrainerProfile) -> list[dict]:
    """Wall hours for offline, online (recompute each epoch) and serving-time training.

    Offline prefills once; online prefills every epoch; the serving-time
    mode reuses hidden states and only trains.
    """
    if dataset_samples <= 0:
        raise ValueError("dataset_samples must be > 0")
    prefill_once = dataset_samples / profile.prefill_samples_per_hour
    train_h = dataset_samples * profile.epochs / profile.samples_per_hour
    prefill = {OFFLINE: prefill_once, ONLINE: prefill_once * profile.epochs, TIDE: 0.0}
    offline_total = prefill_once + train_h
    rows = []
    for mode in (OFFLINE, ONLINE, TIDE):
        total = prefill[mode] + train_h
        rows.append(
            {
                "mode": mode,
                "prefill_hours": prefill[mode],
                "train_hours": train_h,
                "total_hours": total,
                "speedup_vs_offline": offline_total / total,
            }
        )
    return rows


def format_training_table(rows: list[dict]) -> str:
    lines = [f"{'mode':<8} {'prefill_h':>10} {'train_h':>9} {'total_h':>9} {'speedup':>8}"]
    for r in rows:
        pre = "-" if r["prefill_hours"] == 0 else f"{r['prefill_hours']:.2f}"
        lines.append(
            f"{r['mode']:<8} {pre:>10} {r['train_hours']:>9.2f} {r['total_hours']:>9.2f} {r['speedup_vs_offline']:>7.2f}x"
        )
    return "\n".join(lines)


def storage_footprint(mode: str, dataset_tokens: int, buffer_tokens: int, geometry) -> int:
    """Persistent hidden-state bytes for a training mode.

    Offline keeps every token's signals; online regenerates them (0); the
    serving-time mode keeps only the active buffer.
    """
    if buffer_tokens > dataset_tokens:
        raise ValueError("buffer_tokens cannot exceed dataset_tokens")
    per_token = geometry.bytes_per_token
    if mode == OFFLINE:
        return dataset_tokens * per_token
    if mode == TIDE:
        return buffer_tokens * per_token
    if mode == ONLINE:
        return 0
    raise ValueError(f"unknown mode {mode!r}")
