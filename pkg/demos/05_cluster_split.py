"""
Putting slower GPUs to work on training
=======================================

A mixed fleet can dedicate its weakest cards to draft training. The split wins
when the speculative speedup on the remaining inference GPUs beats the
capacity that moved to training.
"""

# %%
from specsim.hetero import best_assignment, breakeven_speedup, load_gpu_profiles, make_cluster, relative_throughput

gpus = load_gpu_profiles()
cluster = make_cluster({"H100": 8, "MI250": 4}, ["MI250"])
print("break-even speedup", round(breakeven_speedup(cluster), 4))
for s in (1.0, 1.074, 1.15, 1.3):
    print(f"s={s}: relative throughput {relative_throughput(cluster, s):.3f}")

# %%
# Asking the planner for the best split under a training-capacity requirement.
# With no requirement every GPU serves (and speculates with the current draft).
for demand in (None, 3.0, 12.0):
    c, rel = best_assignment(gpus, {"H100": 8, "MI250": 4}, 1.15, training_demand=demand)
    print(f"demand={demand}: {c.describe()} -> {rel:.3f}")
