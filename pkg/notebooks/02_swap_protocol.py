# %% [markdown]
# # Discriminator swapping
#
# Workers train in lockstep.  Every K updates a uniform random perfect
# matching pairs them up and each pair exchanges discriminators, together
# with their Adam state.  Lineage ids record which discriminator is where.

# %%
from collections import Counter

import numpy as np

from gapforge import datasets
from gapforge.game import WorkerConfig
from gapforge.orchestrator import GapConfig, random_perfect_matching, run_gap, seen_sets_from_swap_log

rng = np.random.default_rng(0)
print(Counter(tuple(random_perfect_matching(4, rng)) for _ in range(3000)))

# %%
data = datasets.normalize_to_unit(datasets.make_mog(500, 0.2, rng=np.random.default_rng(0)))[0]
cfg = GapConfig(n_workers=4, total_updates=100, swap_every=20, batch_size=32, seed=0,
                worker=WorkerConfig(g_hidden=(16,) * 3, d_hidden=(16,) * 3))
result = run_gap(cfg, data)
for event in result.group.swap_log:
    print(event.at_update, event.pairs)

# %% [markdown]
# The swap log alone reconstructs which discriminator each worker holds and
# which ones its generator has trained against.

# %%
seen, holder = seen_sets_from_swap_log(4, result.group.swap_log)
print("holders:", holder, "==", result.group.lineages())
print("seen:", seen)
