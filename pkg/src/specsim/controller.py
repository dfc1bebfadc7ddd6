"""Selective draft-training control driven by two acceptance-rate EMAs.

A short and a long exponential moving average track the measured acceptance
rate. When the short one falls more than ``epsilon`` below the long one,
signal collection switches on. Once ``n_threshold`` samples are stored they
are split 9:1 (oldest first) into train/eval sets, a trainer fine-tunes the
draft, and the new draft is deployed only if it beats the train-set mean.
A draft that does worse switches collection back off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .perf_model import DomainError

COLLECT_ON = "COLLECT_ON"
COLLECT_OFF = "COLLECT_OFF"
TRAIN_TRIGGER = "TRAIN_TRIGGER"
DEPLOY = "DEPLOY"
REJECT = "REJECT"
TIE = "TIE"

TRAIN_FRACTION = 0.9


@dataclass(frozen=True)
class ControllerParams:
    lambda_short: float = 0.9
    lambda_long: float = 0.99
    epsilon: float = 0.05
    n_init: int = 32
    n_threshold: int = 2048

    def __post_init__(self) -> None:
        errs = []
        for name in ("lambda_short", "lambda_long"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                errs.append(f"{name} must lie in (0, 1)")
        if self.lambda_long < self.lambda_short:
            errs.append("lambda_long must be >= lambda_short")
        if not self.epsilon > 0:
            errs.append("epsilon must be > 0")
        if self.n_init < 1 or self.n_threshold < 1:
            errs.append("n_init and n_threshold must be >= 1")
        if errs:
            raise ValueError("; ".join(errs))

    @classmethod
    def from_dict(cls, d: dict | None) -> "ControllerParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown controller fields {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Sample:
    """A stored training signal: opaque handle plus the acceptance rate measured with it."""

    handle: Any
    alpha: float
    phase: str = ""


@dataclass
class TrainingJob:
    train: list[Sample]
    eval: list[Sample]
    alpha_train: float
    base_version: int
    started_at: float = 0.0


@dataclass
class ControllerState:
    """Mutable controller state; owned by one serving loop."""

    params: ControllerParams
    ema_short: float
    ema_long: float
    collection_enabled: bool = False
    pending: list[Sample] = field(default_factory=list)
    draft_version: int = 0
    in_flight: TrainingJob | None = None
    events: list[tuple[float, str]] = field(default_factory=list)

    @property
    def stored_samples(self) -> int:
        return len(self.pending)

    def observe(self, alpha: float, clock: float = 0.0) -> bool:
        """Fold one acceptance-rate measurement into both EMAs.

        Returns True if this observation switched collection on.
        """
        if not 0.0 <= alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
        p = self.params
        self.ema_short = p.lambda_short * self.ema_short + (1.0 - p.lambda_short) * alpha
        self.ema_long = p.lambda_long * self.ema_long + (1.0 - p.lambda_long) * alpha
        if not self.collection_enabled and self.ema_short < self.ema_long - p.epsilon:
            self.collection_enabled = True
            self.events.append((clock, COLLECT_ON))
            return True
        return False

    def record_sample(self, handle: Any, alpha: float, phase: str = "") -> bool:
        """Store ``(handle, alpha)`` if collecting; silently skipped otherwise."""
        if not self.collection_enabled:
            return False
        self.pending.append(Sample(handle, float(alpha), phase))
        return True

    def start_job(self, clock: float = 0.0) -> TrainingJob | None:
        """Take the pending set as a training job once it reaches the threshold.

        Samples stored while the job runs stay in ``pending`` for the next one.
        """
        if self.in_flight is not None or len(self.pending) < self.params.n_threshold:
            return None
        samples, self.pending = self.pending, []
        cut = int(round(TRAIN_FRACTION * len(samples)))
        cut = max(1, min(cut, len(samples) - 1)) if len(samples) > 1 else 1
        train, ev = samples[:cut], samples[cut:]
        job = TrainingJob(train, ev, sum(s.alpha for s in train) / len(train), self.draft_version, clock)
        self.in_flight = job
        self.events.append((clock, TRAIN_TRIGGER))
        return job

    def abort_job(self) -> None:
        """Undo ``start_job``: the job's samples go back in front of ``pending``."""
        job = self.in_flight
        if job is None:
            return
        self.pending = job.train + job.eval + self.pending
        self.in_flight = None
        if self.events and self.events[-1][1] == TRAIN_TRIGGER:
            self.events.pop()

    def finish_job(self, alpha_eval: float, clock: float = 0.0) -> str:
        """Apply the deploy gate to the in-flight job's eval result."""
        job = self.in_flight
        if job is None:
            raise RuntimeError("no training job in flight")
        self.in_flight = None
        if alpha_eval > job.alpha_train:
            self.draft_version += 1
            self.events.append((clock, DEPLOY))
            return DEPLOY
        if alpha_eval < job.alpha_train:
            self.events.append((clock, REJECT))
            if self.collection_enabled:
                self.collection_enabled = False
                self.events.append((clock, COLLECT_OFF))
            return REJECT
        return TIE

    def maybe_trigger_training(self, trainer: Callable[[TrainingJob], Any], clock: float = 0.0):
        """Synchronous trigger: start, train, gate. Returns the outcome or None.

        ``trainer`` takes a job and returns an object with ``alpha_eval``.
        If it raises, the state is restored and the exception propagates.
        """
        job = self.start_job(clock)
        if job is None:
            return None
        try:
            outcome = trainer(job)
        except Exception:
            self.abort_job()
            raise
        self.finish_job(outcome.alpha_eval, clock)
        return outcome


def init_from_warmup(alphas: Sequence[float], params: ControllerParams | None = None) -> ControllerState:
    """Seed both EMAs with the mean of the first ``n_init`` measurements."""
    params = params or ControllerParams()
    if len(alphas) < params.n_init:
        raise ValueError(f"need {params.n_init} warm-up observations, got {len(alphas)}")
    window = list(alphas[: params.n_init])
    if any(not 0.0 <= a <= 1.0 for a in window):
        raise DomainError("warm-up alphas must lie in [0, 1]")
    mean = math.fsum(window) / len(window)
    return ControllerState(params, mean, mean)


class WarmupMonitor:
    """Collects the first ``n_init`` observations, then hands off to a ControllerState."""

    def __init__(self, params: ControllerParams):
        self.params = params
        self.buffer: list[float] = []
        self.state: ControllerState | None = None

    @property
    def ready(self) -> bool:
        return self.state is not None

    def observe(self, alpha: float, clock: float = 0.0) -> bool:
        if self.state is not None:
            return self.state.observe(alpha, clock)
        if not 0.0 <= alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
        self.buffer.append(alpha)
        if len(self.buffer) >= self.params.n_init:
            self.state = init_from_warmup(self.buffer, self.params)
        return False
