# %% [markdown]
# # Mode coverage on the 5x5 mixture of Gaussians
#
# One seed of the coverage study: a single GAN against GAP x4 with the same
# per-worker budget, the GAP worker chosen by GAM-II.  The acceptance suite
# runs five seeds of this; here the budget is cut to keep the script short.

# %%
from dataclasses import replace

from gapforge import experiments

study = replace(experiments.StudyConfig(), total_updates=1500, populations=(1, 4))
data = experiments.mog_data()
outcome = experiments.run_seed(0, data, data, study)
print("covered modes:", outcome.covered)
print("high-quality fraction:", {k: round(v, 3) for k, v in outcome.hq.items()})
print("GAM-II pick among GAP workers:", outcome.best_gap_worker["gap4"])
print("train/val spread:", {k: round(v, 5) for k, v in outcome.spread.items()})
print(f"{outcome.seconds:.0f} s")
