"""Deterministic derivation of independent random streams.

Every stream is keyed by the master seed plus a tuple of integers naming the
task (replication, block, chunk ...), so results never depend on the order
in which tasks run.
"""

import zlib

import numpy as np


def _tag(name):
    return zlib.crc32(name.encode())


def seed_sequence(master_seed, name, *keys):
    return np.random.SeedSequence(int(master_seed), spawn_key=(_tag(name),) + tuple(int(k) for k in keys))


def chunk_generator(master_seed, name, *keys):
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, name, *keys)))


def derived_seed(master_seed, name, *keys):
    """A 63-bit integer seed for a sub-task, suitable for reporting."""
    return int(seed_sequence(master_seed, name, *keys).generate_state(2, np.uint64)[0] >> np.uint64(1))
