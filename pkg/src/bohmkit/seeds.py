"""Deterministic random-stream management.

Every stochastic routine takes a single integer master seed.  Independent
streams are derived from it with numpy's SeedSequence, using the rule

    stream(master, *key) = default_rng(SeedSequence([master, *key]))

where ``key`` is a tuple of small non-negative integers: first a module tag,
then any per-run indices (run number, collision record, ...).  The same master
seed and key always reproduce the same stream, and distinct keys give
statistically independent streams.
"""

import numpy as np

# module tags; keep stable, they are part of the reproducibility contract
TAG_SAMPLING = 1
TAG_MEASUREMENT = 2
TAG_COLLISIONS = 3
TAG_SCENARIO = 4


def seed_sequence(master, *key):
    return np.random.SeedSequence([int(master), *[int(k) for k in key]])


def rng_stream(master, *key):
    """Generator for the stream identified by (master, *key)."""
    return np.random.default_rng(seed_sequence(master, *key))


def child_seeds(master, n, *key):
    """n reproducible child seeds for per-run streams."""
    return [int(s) for s in seed_sequence(master, *key).generate_state(n)]
