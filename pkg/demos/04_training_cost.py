"""
Cost of training a draft
========================

Offline training pays for one prefill pass to capture target hidden states,
then trains. Online training re-runs the target every epoch. Training on
signals captured while serving skips the prefill entirely.
"""

# %%
from specsim.serving import SignalGeometry
from specsim.trainer import OFFLINE, TIDE, TrainerProfile, compare_training_modes, format_training_table, storage_footprint

prof = TrainerProfile.from_hours(dataset_samples=100_000, train_hours=9.16, prefill_hours=6.16, epochs=3)
print(format_training_table(compare_training_modes(100_000, prof)))

# %%
# Storage: the offline set holds every token's signal, the serving-time buffer
# only a window. The ratio is the token ratio, whatever the model width.
for hidden in (2880, 5120, 8192):
    g = SignalGeometry(hidden_dim=hidden)
    off = storage_footprint(OFFLINE, 24_000_000, 1_000_000, g)
    tide = storage_footprint(TIDE, 24_000_000, 1_000_000, g)
    print(f"hidden={hidden}: offline {off / 2**30:7.1f} GiB, buffer {tide / 2**30:5.2f} GiB, ratio {off / tide:.1f}x")
