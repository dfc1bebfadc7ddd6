"""
Spotting an acceptance drop
===========================

Two moving averages follow the measured acceptance rate. A fast one reacts to
a shift within a few observations; a slow one remembers the old level. The gap
between them switches signal collection on.
"""

# %%
from specsim.controller import ControllerParams, init_from_warmup

params = ControllerParams(lambda_short=0.9, lambda_long=0.99, epsilon=0.05, n_init=1, n_threshold=8)
state = init_from_warmup([0.8], params)

# %%
# Acceptance falls from 0.8 to 0.5. Collection turns on at the second observation.
for k in range(1, 6):
    fired = state.observe(0.5)
    print(f"k={k} short={state.ema_short:.4f} long={state.ema_long:.4f} collecting={state.collection_enabled}"
          + ("  <- switched on" if fired else ""))

# %%
# Once enough samples are stored a training round runs. The deploy gate keeps
# the new draft only if it does better on held-out samples than on the train set.
class Trainer:
    def __init__(self, gain):
        self.gain = gain

    def __call__(self, job):
        return type("Outcome", (), {"alpha_eval": job.alpha_train + self.gain})()


for i in range(8):
    state.record_sample(i, 0.5)
state.maybe_trigger_training(Trainer(+0.05))
print("after a better draft:", state.draft_version, state.collection_enabled)

for i in range(8):
    state.record_sample(i, 0.55)
state.maybe_trigger_training(Trainer(-0.01))
print("after a worse draft: ", state.draft_version, state.collection_enabled)
print([e for _, e in state.events])
