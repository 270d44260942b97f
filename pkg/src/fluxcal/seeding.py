"""Deterministic RNG stream derivation.

All randomness in the package flows through numpy Generators created from an
explicit integer seed. Sub-tasks (sweep points, repetitions, per-qubit draws)
derive child seeds from the parent seed plus integer keys, so parallel and
serial execution orders produce identical results.
"""

from __future__ import annotations

import numpy as np


def child_seed(root: int, *keys: int) -> int:
    """Derive a reproducible child seed from a root seed and integer keys."""
    seq = np.random.SeedSequence([int(root), *(int(k) for k in keys)])
    return int(seq.generate_state(1, np.uint64)[0])


def child_rng(root: int, *keys: int) -> np.random.Generator:
    """Generator seeded by ``child_seed(root, *keys)``."""
    return np.random.default_rng(child_seed(root, *keys))
