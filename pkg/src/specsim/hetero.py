"""Split a mixed GPU fleet between inference and draft training.

Throughput is compared against a baseline where every GPU serves inference
without speculation; the split pays off when the speculative speedup ``s``
on the inference GPUs outweighs the capacity moved to training.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence


class PlanError(ValueError):
    pass


class NoFeasibleAssignment(PlanError):
    """Training demand exceeds what the whole fleet could provide."""

    code = "NO_FEASIBLE_ASSIGNMENT"


@dataclass(frozen=True)
class GpuClassProfile:
    name: str
    inference_rel: float
    training_rel: float

    def __post_init__(self) -> None:
        if not (self.inference_rel > 0 and self.training_rel > 0):
            raise PlanError(f"{self.name}: relative throughputs must be > 0")


def load_gpu_profiles(path: str | Path | None = None) -> dict[str, GpuClassProfile]:
    """Read ``name,inference_rel,training_rel`` rows; defaults to the bundled file."""
    if path is None:
        path = Path(str(resources.files("specsim") / "data" / "gpu_profiles.csv"))
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["name", "inference_rel", "training_rel"]:
            raise PlanError(f"{path}: header must be 'name,inference_rel,training_rel'")
        rows = [GpuClassProfile(r["name"], float(r["inference_rel"]), float(r["training_rel"])) for r in reader]
    return {p.name: p for p in rows}


@dataclass(frozen=True)
class ClusterSpec:
    """GPU counts per class, split into inference and training counts.

    ``training`` maps class name to how many of that class's GPUs train;
    the rest of each class serves inference.
    """

    classes: Mapping[str, GpuClassProfile]
    counts: Mapping[str, int]
    training: Mapping[str, int]

    def __post_init__(self) -> None:
        for name, n in self.counts.items():
            if name not in self.classes:
                raise PlanError(f"unknown GPU class {name!r}")
            if n < 0:
                raise PlanError(f"{name}: count must be >= 0")
        for name, n in self.training.items():
            if not 0 <= n <= self.counts.get(name, 0):
                raise PlanError(f"{name}: training count {n} outside [0, {self.counts.get(name, 0)}]")
        if self.inference_capacity() <= 0:
            raise PlanError("cluster needs at least one inference GPU")

    def inference_counts(self) -> dict[str, int]:
        return {k: n - self.training.get(k, 0) for k, n in self.counts.items()}

    def inference_capacity(self) -> float:
        return sum(self.classes[k].inference_rel * n for k, n in self.inference_counts().items())

    def total_capacity(self) -> float:
        return sum(self.classes[k].inference_rel * n for k, n in self.counts.items())

    def training_capacity(self) -> float:
        return sum(self.classes[k].training_rel * n for k, n in self.training.items())

    def describe(self) -> dict:
        return {
            "inference": {k: n for k, n in self.inference_counts().items() if n},
            "training": {k: n for k, n in self.training.items() if n},
        }


def parse_cluster(text: str) -> dict[str, int]:
    """``"H100:8,MI250:4"`` -> ``{"H100": 8, "MI250": 4}``."""
    counts: dict[str, int] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, n = part.partition(":")
        if not sep:
            raise PlanError(f"bad cluster entry {part!r}; expected NAME:COUNT")
        counts[name.strip()] = counts.get(name.strip(), 0) + int(n)
    if not counts:
        raise PlanError("empty cluster")
    return counts


def make_cluster(
    counts: Mapping[str, int],
    train_classes: Sequence[str] = (),
    classes: Mapping[str, GpuClassProfile] | None = None,
) -> ClusterSpec:
    """Cluster where every GPU of each class in ``train_classes`` trains."""
    classes = classes or load_gpu_profiles()
    return ClusterSpec(classes, dict(counts), {k: counts[k] for k in train_classes if k in counts})


def relative_throughput(cluster: ClusterSpec, s: float) -> float:
    """Split-cluster throughput over the all-inference, no-speculation baseline."""
    return cluster.inference_capacity() * s / cluster.total_capacity()


def breakeven_speedup(cluster: ClusterSpec) -> float:
    """Speculative speedup at which the split exactly matches the baseline."""
    return cluster.total_capacity() / cluster.inference_capacity()


def best_assignment(
    classes: Mapping[str, GpuClassProfile],
    counts: Mapping[str, int],
    s: float,
    training_demand: float | None = None,
    calibration: float = 1.0,
) -> tuple[ClusterSpec, float]:
    """Best per-class training allocation by exhaustive enumeration.

    Training capacity is ``calibration * sum(training_rel * count)`` and must
    meet ``training_demand`` when given. Ties go to fewer training GPUs.
    """
    names = sorted(counts)
    if training_demand is not None:
        if calibration * sum(classes[k].training_rel * counts[k] for k in names) < training_demand:
            raise NoFeasibleAssignment(f"demand {training_demand} exceeds total training capacity")
    best = None
    for split in itertools.product(*(range(counts[k] + 1) for k in names)):
        training = dict(zip(names, split))
        if sum(counts[k] - training[k] for k in names) == 0:
            continue
        if training_demand is not None:
            cap = calibration * sum(classes[k].training_rel * training[k] for k in names)
            if cap < training_demand:
                continue
        try:
            cluster = ClusterSpec(classes, dict(counts), training)
        except PlanError:
            continue
        key = (relative_throughput(cluster, s), -sum(split))
        if best is None or key > best[0]:
            best = (key, cluster)
    if best is None:
        raise NoFeasibleAssignment("no assignment keeps an inference GPU while meeting demand")
    return best[1], best[0][0]
