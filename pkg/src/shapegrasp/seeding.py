"""Deterministic RNG stream derivation.

Every stochastic entry point accepts either an integer seed or a
``numpy.random.Generator``.  Sub-streams are always derived through
``SeedSequence`` spawn keys so that results are independent of how many
draws a sibling stream consumed, and independent of worker scheduling.
"""
from __future__ import annotations

import numpy as np

RngLike = "int | np.random.Generator | np.random.SeedSequence"


def as_generator(rng) -> np.random.Generator:
    """Coerce an int seed / SeedSequence / Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.SeedSequence):
        return np.random.default_rng(rng)
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    raise TypeError(f"expected int seed or numpy Generator, got {type(rng)!r}")


def substreams(rng, n: int) -> list[np.random.Generator]:
    """Split `rng` into `n` independent generators.

    The split depends only on the parent's seed material (not on how much
    of the parent was consumed before the first spawn), so callers that
    skip one stream still see identical siblings.
    """
    gen = as_generator(rng)
    return gen.spawn(n)


def keyed_generator(seed: int, *key: int) -> np.random.Generator:
    """Generator for a fixed (seed, key...) address, e.g. (seed, view, method)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
