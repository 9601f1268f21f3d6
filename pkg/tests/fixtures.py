"""Shared test fixtures built from package types."""

from types import SimpleNamespace

import numpy as np

from gapforge.metrics import ErrorTable
from gapforge.orchestrator import GapGroup


def random_table(rng, n_gen=None, n_judge=None):
    n_gen = n_gen or int(rng.integers(1, 11))
    n_judge = n_judge or int(rng.integers(1, 11))
    # coarse grid of values so ties actually occur
    errors = rng.integers(0, 9, size=(n_gen, n_judge)) / 8
    eligible = rng.random((n_gen, n_judge)) < 0.6
    for r in range(n_gen):
        if not eligible[r].any():
            eligible[r, rng.integers(n_judge)] = True
    return ErrorTable(list(range(n_gen)), list(range(n_judge)), errors, eligible)


def dummy_group(n, seed=0):
    """Workers whose discriminator and optimizer state are opaque byte strings."""
    rng = np.random.default_rng(seed)
    workers = [SimpleNamespace(id=k, discriminator=rng.bytes(16), d_opt=rng.bytes(8), d_lineage=k,
                               seen_discriminators={k}) for k in range(n)]
    return GapGroup(workers, swap_rng=np.random.default_rng(seed + 1))
