"""Offspring placement shared by the envelope, the attrition process and
the cluster floods.

A parent at site ``y`` flips one Bernoulli(p) coin per neighbour
``y +- 1, ..., y +- N``.  The set of successes is a uniformly random subset
of the ``2N`` neighbours with Binomial(2N, p) size, which is what is sampled
here in O(k) work per parent.
"""

from __future__ import annotations

import numpy as np


def offsets_from_index(d: np.ndarray, N: int) -> np.ndarray:
    """Map ``0 .. 2N-1`` onto ``-N .. -1, 1 .. N``."""
    return np.where(d < N, d - N, d - N + 1)


def distinct_draws(k: np.ndarray, n_choices: int, rng: np.random.Generator) -> np.ndarray:
    """For parent ``i`` draw ``k[i]`` distinct values in ``[0, n_choices)``.

    Draws are concatenated parent by parent.  Repeated values inside a parent
    are redrawn until all are distinct; the procedure commutes with any
    relabelling of the choices, so each parent receives a uniform
    ``k[i]``-subset.
    """
    k = np.asarray(k, dtype=np.int64)
    if np.any(k > n_choices):
        raise ValueError("cannot draw more distinct values than choices")
    total = int(k.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    draws = rng.integers(0, n_choices, size=total, dtype=np.int64)
    # duplicates can only involve parents with k >= 2
    multi = np.repeat(k >= 2, k)
    if not multi.any():
        return draws
    pos = np.nonzero(multi)[0]
    group = np.repeat(np.arange(k.size, dtype=np.int64), k)[pos]
    while True:
        order = np.lexsort((draws[pos], group))
        g, d = group[order], draws[pos[order]]
        dup = np.zeros(pos.size, dtype=bool)
        dup[1:] = (g[1:] == g[:-1]) & (d[1:] == d[:-1])
        if not dup.any():
            return draws
        redo = pos[order[dup]]
        draws[redo] = rng.integers(0, n_choices, size=redo.size, dtype=np.int64)


def branch(parents: np.ndarray, N: int, p: float, rng: np.random.Generator):
    """One generation of range-N binomial branching.

    Returns ``(children, parent_index)``: the landing sites of all offspring
    and, for each child, the position of its parent in ``parents``.
    """
    parents = np.asarray(parents, dtype=np.int64)
    if parents.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    k = rng.binomial(2 * N, p, size=parents.size)
    d = distinct_draws(k, 2 * N, rng)
    idx = np.repeat(np.arange(parents.size, dtype=np.int64), k)
    return parents[idx] + offsets_from_index(d, N), idx
