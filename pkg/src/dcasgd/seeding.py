"""Master-seed to per-purpose random substreams.

Every consumer of randomness asks for a generator keyed by
``(master_seed, purpose, *counters)``.  The key is fed to
:class:`numpy.random.SeedSequence` as ``entropy=master_seed`` and
``spawn_key=(purpose, *counters)``, so changing how much randomness one
purpose consumes never shifts the stream of another one.

Purpose ids are part of the on-disk reproducibility contract; never
renumber them.
"""

import numpy as np

FEATURES = 0
LABELS = 1
PARTITION = 2
COMPUTE = 3
INIT = 4
EVAL = 5
PLANTED = 6
MINIBATCH = 7
PROBES = 8


def substream(master_seed, purpose, *counters):
    """Return a fresh generator for ``purpose`` (plus optional counters)."""
    key = (int(purpose),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
