"""
Seeded random streams. Every stochastic choice in the pipeline draws from a
generator that was passed in explicitly; nothing touches numpy's global state.
"""

from typing import Any, Dict, Sequence, TypeVar

import numpy as np

T = TypeVar('T')


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for ``seed``."""
    return np.random.default_rng(int(seed))


def uniform_choice(rng: np.random.Generator, items: Sequence[T]) -> T:
    return items[int(rng.integers(len(items)))]


def spawn(rng: np.random.Generator, n: int):
    """Independent child generators seeded from draws of ``rng`` (one per worker or per clip)."""
    return [np.random.default_rng(int(seed)) for seed in rng.integers(2 ** 63, size=n)]


def rng_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def restore_rng(state: Dict[str, Any]) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
