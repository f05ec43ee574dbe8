"""Hard correspondences between two spaces and their distortion.

A :class:`Matching` records a correspondence as explicit pairs plus, when it
is functional, the map array.  ``distortion`` always stores the
Gromov-Hausdorff upper-bound value ``0.5 * max |d_X - d_Y|`` over matched
pairs (certified whenever the matching is bijective).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .metric import FiniteMetricSpace


@dataclass(frozen=True)
class Matching:
    """Hard correspondence X -> Y with its distortion value."""

    pairs: tuple[tuple[int, int], ...]
    n: int
    m: int
    bijective: bool
    distortion: Optional[float] = None

    @property
    def map(self) -> Optional[np.ndarray]:
        """i -> j array when every left point maps to exactly one right point."""
        targets = {}
        for i, j in self.pairs:
            if i in targets:
                return None
            targets[i] = j
        if len(targets) != self.n:
            return None
        return np.array([targets[i] for i in range(self.n)], dtype=int)


def pair_distortion(
    x: FiniteMetricSpace, y: FiniteMetricSpace, pairs: Sequence[tuple[int, int]]
) -> float:
    """0.5 * max |d_X(i, i') - d_Y(j, j')| over all pairs of matched pairs."""
    idx = np.asarray(list(pairs), dtype=int)
    dx = x.dist[np.ix_(idx[:, 0], idx[:, 0])]
    dy = y.dist[np.ix_(idx[:, 1], idx[:, 1])]
    return 0.5 * float(np.abs(dx - dy).max())


def matching_from_map(
    mapping: Sequence[int],
    x: FiniteMetricSpace,
    y: FiniteMetricSpace,
) -> Matching:
    mp = [int(j) for j in mapping]
    pairs = tuple((i, j) for i, j in enumerate(mp))
    bij = len(set(mp)) == len(mp) == y.n and x.n == y.n
    return Matching(
        pairs=pairs, n=x.n, m=y.n, bijective=bij,
        distortion=pair_distortion(x, y, pairs),
    )


def hungarian_max_weight(soft: np.ndarray) -> np.ndarray:
    """Maximum-weight perfect matching on a square score matrix (perm array)."""
    rows, cols = linear_sum_assignment(soft, maximize=True)
    perm = np.empty(soft.shape[0], dtype=int)
    perm[rows] = cols
    return perm
