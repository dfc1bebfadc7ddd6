"""Closed-form performance model for speculative decoding.

Covers the expected acceptance length of a linear draft chain, sampling of
acceptance lengths, interpolation of profiled target-model latencies, the
memory-bound and batch-aware speedup formulas, and break-even acceptance
rates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

BISECT_TOL = 1e-6

# Returned by min_acceptance_for_gain when no acceptance rate can pay for
# the speculation overhead.
NEVER_BENEFICIAL = None

BUNDLED_PROFILES = (
    "gpt-oss-120b",
    "qwen3-235b-a22b",
    "llama-4-scout-17b-16e",
    "llama-3.3-70b-instruct",
)


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ProfileError(ValueError):
    """A latency profile is malformed or cannot answer a lookup."""


@dataclass(frozen=True)
class LatencyProfile:
    """Profiled target latency T(n) for n tokens in parallel, plus draft latency.

    ``points`` holds ``(n, latency_ms)`` pairs; ``d0`` is the static
    per-step draft latency in milliseconds.
    """

    model_name: str
    points: tuple[tuple[int, float], ...]
    d0: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple((int(n), float(t)) for n, t in self.points))
        problems = self.validation_errors()
        if problems:
            raise ProfileError(f"invalid profile {self.model_name!r}: " + "; ".join(problems))

    def validation_errors(self) -> list[str]:
        errs = []
        if not self.points:
            errs.append("no profiled points")
        ns = [n for n, _ in self.points]
        ts = [t for _, t in self.points]
        if any(n < 1 for n in ns):
            errs.append("batch sizes must be >= 1")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            errs.append("batch sizes must be strictly increasing")
        if any(not t > 0 for t in ts):
            errs.append("latencies must be > 0")
        if any(b < a for a, b in zip(ts, ts[1:])):
            errs.append("latency must be non-decreasing in n")
        # d0 == 0 is accepted as the free-draft limit.
        if not self.d0 >= 0 or math.isinf(self.d0):
            errs.append("d0 must be a finite value >= 0")
        return errs

    @property
    def batch_sizes(self) -> list[int]:
        return [n for n, _ in self.points]

    @classmethod
    def flat(cls, latency: float = 1.0, d0: float = 0.0, n_max: int = 4096) -> "LatencyProfile":
        """A fully memory-bound profile: T(n) is constant."""
        return cls("flat", ((1, latency), (n_max, latency)), d0)


@dataclass(frozen=True)
class SpeculationConfig:
    gamma: int = 3
    hysteresis_margin: float = 0.02

    def __post_init__(self) -> None:
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise DomainError(f"gamma must be a positive integer, got {self.gamma!r}")
        if not self.hysteresis_margin >= 0:
            raise DomainError("hysteresis_margin must be >= 0")


# --------------------------------------------------------------------------
# profile I/O


def load_profile(csv_path: str | Path, d0_ms: float | None = None) -> LatencyProfile:
    """Read a ``n,latency_ms`` CSV and its ``.json`` sidecar (``d0_ms``, ``model_name``)."""
    csv_path = Path(csv_path)
    try:
        with open(csv_path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != ["n", "latency_ms"]:
                raise ProfileError(f"{csv_path}: header must be 'n,latency_ms', got {reader.fieldnames}")
            points = [(int(row["n"]), float(row["latency_ms"])) for row in reader]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ProfileError):
            raise
        raise ProfileError(f"{csv_path}: {exc}") from exc

    meta: dict = {}
    sidecar = csv_path.with_suffix(".json")
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
        except json.JSONDecodeError as exc:
            raise ProfileError(f"{sidecar}: {exc}") from exc
    if d0_ms is None:
        if "d0_ms" not in meta:
            raise ProfileError(f"{csv_path}: no d0_ms given and no sidecar metadata")
        d0_ms = meta["d0_ms"]
    return LatencyProfile(meta.get("model_name", csv_path.stem), tuple(points), float(d0_ms))


def save_profile(profile: LatencyProfile, csv_path: str | Path, float_format: str | None = None) -> None:
    """Write ``profile`` as CSV plus sidecar JSON.

    ``float_format`` is a %-style format for latencies; the default writes
    the shortest round-tripping repr. The bundled files use ``"%#.4g"``.
    """
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as f:
        f.write("n,latency_ms\n")
        for n, t in profile.points:
            f.write(f"{n},{float_format % t if float_format else repr(t)}\n")
    meta = {"model_name": profile.model_name, "d0_ms": profile.d0}
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def bundled_profile_path(key: str) -> Path:
    return Path(str(resources.files("specsim") / "data" / "profiles" / f"{key}.csv"))


def bundled_profile(key: str) -> LatencyProfile:
    """Load one of the shipped H100 profiles by file key (see ``BUNDLED_PROFILES``)."""
    if key not in BUNDLED_PROFILES:
        raise KeyError(f"unknown bundled profile {key!r}; choose from {BUNDLED_PROFILES}")
    return load_profile(bundled_profile_path(key))


# --------------------------------------------------------------------------
# acceptance length


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")


def _check_gamma(gamma: int) -> None:
    if int(gamma) != gamma or gamma < 1:
        raise DomainError(f"gamma must be a positive integer, got {gamma!r}")


def expected_accept_length(alpha: float, gamma: int) -> float:
    """Mean tokens produced per speculation step, bonus token included."""
    _check_alpha(alpha)
    _check_gamma(gamma)
    if alpha == 1.0:
        return float(gamma + 1)
    return (1.0 - alpha ** (gamma + 1)) / (1.0 - alpha)


def sample_accept_length(
    rng: np.random.Generator, alpha: float | np.ndarray, gamma: int, size: int | None = None
) -> int | np.ndarray:
    """Draw acceptance lengths with P(k) = alpha^(k-1)(1-alpha), k <= gamma, P(gamma+1) = alpha^gamma.

    ``alpha`` may be an array (one rate per draw); then ``size`` defaults to
    its length. Uses inverse-CDF sampling of a geometric variable truncated
    at ``gamma + 1``, one uniform per draw.
    """
    _check_gamma(gamma)
    a = np.asarray(alpha, dtype=float)
    if np.any((a < 0) | (a > 1)) or np.any(np.isnan(a)):
        raise DomainError("alpha must lie in [0, 1]")
    scalar = a.ndim == 0 and size is None
    if size is None and a.ndim:
        size = a.shape
    u = rng.random(size if size is not None else None)
    a = np.broadcast_to(a, np.shape(u))
    with np.errstate(divide="ignore", invalid="ignore"):
        # number of accepted drafts: largest j with alpha^j > u
        j = np.floor(np.log(u) / np.log(a))
    j = np.where(a >= 1.0, gamma, j)
    j = np.where(a <= 0.0, 0, j)
    j = np.where(np.isnan(j), 0, j)
    k = (np.minimum(j, gamma) + 1).astype(np.int64)
    return int(k) if scalar else k


def _bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = BISECT_TOL) -> float:
    """Root of an increasing ``f`` on ``[lo, hi]`` with ``f(lo) <= 0 <= f(hi)``."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def alpha_from_accept_length(ell: float, gamma: int) -> float:
    """Acceptance rate whose expected acceptance length is ``ell``."""
    _check_gamma(gamma)
    if not 1.0 <= ell <= gamma + 1:
        raise DomainError(f"accept length must lie in [1, {gamma + 1}], got {ell!r}")
    if ell == 1.0:
        return 0.0
    if ell == gamma + 1:
        return 1.0
    # tighter than BISECT_TOL so the round trip stays inside it
    return _bisect(lambda a: expected_accept_length(a, gamma) - ell, 0.0, 1.0, tol=BISECT_TOL / 16)


# --------------------------------------------------------------------------
# latency model


def lookup_latency(profile: LatencyProfile, n: float) -> float:
    """T(n) in ms: exact at profiled points, linear between them.

    Below the smallest point the first latency is returned; above the largest
    the last segment's slope is extended.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n!r}")
    pts = profile.points
    n_min, t_min = pts[0]
    if n <= n_min:
        return t_min
    if len(pts) < 2:
        raise ProfileError(f"profile {profile.model_name!r} has one point; cannot interpolate n={n}")
    ns = [p[0] for p in pts]
    if n >= ns[-1]:
        (n0, t0), (n1, t1) = pts[-2], pts[-1]
    else:
        i = int(np.searchsorted(ns, n, side="right"))
        (n0, t0), (n1, t1) = pts[i - 1], pts[i]
        if n == n0:
            return t0
    return t0 + (t1 - t0) * (n - n0) / (n1 - n0)


def beta_ratio(profile: LatencyProfile, b: int, gamma: int) -> float:
    """Verification cost inflation T(b(gamma+1)) / T(b)."""
    _check_gamma(gamma)
    return lookup_latency(profile, b * (gamma + 1)) / lookup_latency(profile, b)


def c_ratio(profile: LatencyProfile, b: int) -> float:
    """Draft cost relative to one target decode step, D0 / T(b)."""
    return profile.d0 / lookup_latency(profile, b)


def theoretical_speedup(alpha: float, gamma: int, c: float) -> float:
    """Memory-bound speedup: verification assumed as cheap as one decode step."""
    _check_alpha(alpha)
    if alpha >= 1.0:
        raise DomainError("theoretical_speedup requires alpha < 1")
    if c < 0:
        raise DomainError("c must be >= 0")
    return (1.0 - alpha ** (gamma + 1)) / ((1.0 - alpha) * (c * gamma + 1.0))


def speculation_cost_ratio(profile: LatencyProfile, gamma: int, b: int) -> float:
    """Cost of one speculative step in units of T(b): c(b)*gamma + beta(b)."""
    return c_ratio(profile, b) * gamma + beta_ratio(profile, b, gamma)


def practical_speedup(profile: LatencyProfile, alpha: float, gamma: int, b: int) -> float:
    """Batch-aware speedup E[l] / (c(b)*gamma + beta(b)).

    ``alpha = 1`` is allowed here and evaluated as the limit.
    """
    return expected_accept_length(alpha, gamma) / speculation_cost_ratio(profile, gamma, b)


def min_acceptance_for_gain(profile: LatencyProfile, gamma: int, b: int) -> float | None:
    """Smallest alpha at which speculation breaks even at batch size ``b``.

    Returns 0 when speculation always pays and ``NEVER_BENEFICIAL`` (None)
    when even perfect acceptance cannot cover its cost.
    """
    rhs = speculation_cost_ratio(profile, gamma, b)
    if rhs <= 1.0:
        return 0.0
    if rhs > gamma + 1:
        return NEVER_BENEFICIAL
    return _bisect(lambda a: expected_accept_length(a, gamma) - rhs, 0.0, 1.0)


def speedup_table(
    profile: LatencyProfile, alpha: float, gamma: int, batch_sizes: Sequence[int] | None = None
) -> list[dict]:
    """One row per batch size with theoretical, practical and break-even values."""
    rows = []
    for b in batch_sizes or profile.batch_sizes:
        c = c_ratio(profile, b)
        rows.append(
            {
                "batch": int(b),
                "c": c,
                "beta": beta_ratio(profile, b, gamma),
                "theoretical": theoretical_speedup(alpha, gamma, c) if alpha < 1 else float(gamma + 1) / (c * gamma + 1),
                "practical": practical_speedup(profile, alpha, gamma, b),
                "breakeven_alpha": min_acceptance_for_gain(profile, gamma, b),
            }
        )
    return rows
