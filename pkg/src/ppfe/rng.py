"""Deterministic random-stream derivation for reproducible trials."""
from __future__ import annotations

import numpy as np

# Fixed role codes are part of the reproducibility contract: changing a code
# changes every seeded result downstream.
_ROLE_CODES = {
    "plant": 0,
    "channel": 1,
    "quantizer": 2,
}


def substream(master_seed: int, role: str, trial: int = 0) -> np.random.Generator:
    """Independent generator for a (master seed, role, trial) triple.

    Distinct (role, trial) pairs get statistically independent streams, so
    trials may run concurrently and extra draws in one role never shift
    another role's sequence.
    """
    try:
        code = _ROLE_CODES[role]
    except KeyError:
        raise ValueError(f"unknown stream role {role!r}; known roles: {sorted(_ROLE_CODES)}") from None
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(code, int(trial)))
    return np.random.default_rng(seq)
