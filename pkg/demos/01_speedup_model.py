"""
When does speculation pay off?
==============================

Speculative decoding trades extra draft and verification work for more tokens
per target-model step. Whether the trade wins depends on the acceptance rate
and on how much more expensive a wider verification pass is at a given batch.
"""

# %%
# Expected tokens per speculation step for a few acceptance rates, gamma = 3.
import numpy as np

from specsim.perf_model import (
    bundled_profile,
    expected_accept_length,
    min_acceptance_for_gain,
    sample_accept_length,
    speedup_table,
)

for alpha in (0.2, 0.5, 0.8):
    print(f"alpha={alpha}: E[accept length] = {expected_accept_length(alpha, 3):.3f}")

# %%
# The sampler agrees with the closed form.
rng = np.random.default_rng(0)
draws = sample_accept_length(rng, 0.6, 3, size=200_000)
print("empirical", draws.mean(), "closed form", expected_accept_length(0.6, 3))

# %%
# On a measured latency profile the practical speedup falls below the naive
# estimate as batches grow and verification stops being free.
profile = bundled_profile("gpt-oss-120b")
print(f"{'batch':>6} {'naive':>7} {'real':>7} {'alpha*':>7}")
for row in speedup_table(profile, 0.6, 3):
    a = row["breakeven_alpha"]
    print(f"{row['batch']:>6} {row['theoretical']:7.3f} {row['practical']:7.3f} {a if a is None else round(a, 3)!s:>7}")

# %%
# Break-even acceptance per model at batch 64: below this, turn speculation off.
for key in ("gpt-oss-120b", "qwen3-235b-a22b", "llama-4-scout-17b-16e", "llama-3.3-70b-instruct"):
    print(key, min_acceptance_for_gain(bundled_profile(key), 3, 64))
