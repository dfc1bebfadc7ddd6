"""
Serving through four language shifts
====================================

The bundled ``langshift4`` run replays an English warm-up followed by Korean,
Arabic, Chinese and French traffic. Each shift knocks the draft's acceptance
rate below the break-even point; serving-time training pulls it back up.
Takes roughly 15 s.
"""

# %%
from specsim.config import load_run_config
from specsim.perf_model import min_acceptance_for_gain
from specsim.serving import SPECULATION_OFF, TIDE_ADAPTIVE, TIDE_DEFAULT

cfg = load_run_config("langshift4")
b = cfg.script.phases[0].concurrency
print("break-even alpha at batch", b, "=", round(min_acceptance_for_gain(cfg.profile, cfg.spec.gamma, b), 3))
for p in cfg.script.phases:
    print(f"  {p.name:8s} starts at {p.alpha_start:.3f}, can reach {p.alpha_ceiling:.3f}")

# %%
runs = {m: cfg.with_overrides(mode=m).simulate() for m in (TIDE_ADAPTIVE, TIDE_DEFAULT, SPECULATION_OFF)}
for mode, m in runs.items():
    print(f"{mode:16s} done at {m.total_time_ms / 1000:7.1f} s, {m.summary()['mean_throughput_tokens_per_s']:7.0f} tok/s")

# %%
# Per phase: throughput before the first new draft lands versus after the last one.
for row in runs[TIDE_ADAPTIVE].adaptation_summary()[1:]:
    pre, post = row["pre_adaptation_throughput"], row["post_adaptation_throughput"]
    print(f"{row['phase']:8s} deploys={row['deploys']} {pre:7.0f} -> {post:7.0f} tok/s ({post / pre:.2f}x)")

# %%
# Event log of the adaptive run, first few entries.
for e in runs[TIDE_ADAPTIVE].events[:10]:
    print(f"{e['clock_ms'] / 1000:8.2f}s {e['event']:14s} {e.get('phase', '')}")
