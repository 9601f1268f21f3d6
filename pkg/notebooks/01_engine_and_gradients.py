# %% [markdown]
# # The dense engine and its gradients
#
# Four-layer batchnorm MLPs for both players, checked against central
# finite differences.

# %%
import numpy as np

from gapforge import game, nn
from gapforge.game import WorkerConfig

cfg = WorkerConfig(g_hidden=(16, 16, 16), d_hidden=(16, 16, 16))
w = game.make_worker(0, cfg, seed=0)
print([(l.spec.in_dim, l.spec.out_dim, l.spec.has_batchnorm) for l in w.discriminator.layers])

# %% [markdown]
# At the 0.02 initialization batchnorm makes each unit nearly scale
# invariant, which inflates finite-difference truncation error.  Unit-scale
# weights give a clean comparison.

# %%
rng = np.random.default_rng(1)
w.generator = nn.init_params(w.generator.specs, rng, 0.5)
w.discriminator = nn.init_params(w.discriminator.specs, rng, 0.5)
real = rng.uniform(0, 1, (8, 2))
z = game.sample_prior(w.prior, 8, rng)
fake = game.sample_generator(w.generator, w.prior, 8, rng)

d_err = nn.grad_check(w.discriminator, lambda d: game.d_loss_terms(d, real, fake)[:2])
g_err = nn.grad_check(w.generator, lambda g: game.g_loss_terms(g, w.discriminator, z)[:2])
print(f"max relative error: D loss {d_err:.2e}, G loss {g_err:.2e}")

# %% [markdown]
# A ReLU input lying within h of zero makes the central difference straddle
# the kink, so a random draw can show a large error.  Shrinking h moves the
# probe back onto one linear piece; a wrong backward pass would not improve.

# %%
for h in (1e-5, 1e-6, 1e-7):
    err = nn.grad_check(w.discriminator, lambda d: game.d_loss_terms(d, real, fake)[:2], h)
    print(f"h={h:g}: D loss {err:.2e}")

# %% [markdown]
# A deliberately wrong gradient is caught immediately.

# %%
def doubled(d):
    loss, grads = game.d_loss_terms(d, real, fake)[:2]
    return loss, [2 * g for g in grads]

print(f"doubled gradient: {nn.grad_check(w.discriminator, doubled):.3f}")
