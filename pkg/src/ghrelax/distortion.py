"""The distortion tensor Gamma and its entrywise powers.

Gamma compares every pair of point-pairs across two spaces:
``Gamma[(i,j),(i',j')] = |d_X(x_i, x_i') - d_Y(y_j, y_j')|``, flattened to an
nm x nm matrix by the fixed convention ``(i, j) -> i*m + j``.  Every solver
in the package shares this flattening.  Entries are computed once per
unordered pair, so the flattened matrix is symmetric bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptySupport
from .metric import FiniteMetricSpace

#: Power marker for the unpowered tensor used by the sup-distortion objective.
INF = math.inf


def flat_index(i: int, j: int, m: int) -> int:
    """Shared pair flattening (i, j) -> i*m + j."""
    return i * m + j


def _abs_diff_tensor(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    n, m = dx.shape[0], dy.shape[0]
    g = np.abs(dx[:, None, :, None] - dy[None, :, None, :])
    return g.reshape(n * m, n * m)


@dataclass(frozen=True)
class DistortionTensor:
    """nm x nm matrix of (powered) pairwise metric distortions.

    ``gamma`` holds |d_X - d_Y| ** p for finite p, or the unpowered values
    when ``p`` is the infinity marker.  ``base()`` always recovers the
    unpowered tensor.
    """

    n: int
    m: int
    gamma: np.ndarray
    p: float

    def __post_init__(self):
        self.gamma.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.n * self.m

    def base(self) -> np.ndarray:
        """Unpowered distortions |d_X - d_Y| (entrywise p-th root)."""
        if self.p == 1.0 or math.isinf(self.p):
            return self.gamma
        return self.gamma ** (1.0 / self.p)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.gamma @ v


def build_gamma(x: FiniteMetricSpace, y: FiniteMetricSpace, p: float = 1.0) -> DistortionTensor:
    """Distortion tensor of (x, y) with entrywise power p >= 1.

    Pass ``math.inf`` to store the unpowered tensor (the sup-objective case).
    """
    if not math.isinf(p) and p < 1.0:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    g = _abs_diff_tensor(x.dist, y.dist)
    if not math.isinf(p) and p != 1.0:
        g = g**p
    return DistortionTensor(x.n, y.n, g, float(p))


def max_support_value(t: DistortionTensor, support: Iterable[tuple[int, int]]) -> float:
    """Maximum unpowered distortion over a set of flattened index pairs.

    ``support`` is a collection of (row, col) indices into the nm x nm
    tensor; this is the sup-objective evaluated on the support of a lifted
    correspondence.
    """
    rows, cols = [], []
    for r, c in support:
        rows.append(r)
        cols.append(c)
    if not rows:
        raise EmptySupport("support set is empty")
    base = t.base()
    return float(base[np.asarray(rows), np.asarray(cols)].max())


class GammaOperator:
    """Matrix-vector products with Gamma**(p) without always materializing it.

    GHMatch only needs ``Gamma @ y`` products.  At small scale the dense
    tensor is cached; past ``dense_limit`` points per space the products are
    computed in row blocks, keeping memory at O(block * n * m) while leaving
    the result identical to the dense path.
    """

    def __init__(
        self,
        x: FiniteMetricSpace,
        y: FiniteMetricSpace,
        p: float = 1.0,
        dense_limit: int = 60,
        block_rows: int = 256,
    ):
        if not math.isinf(p) and p < 1.0:
            raise ValueError(f"p must be >= 1 or inf, got {p}")
        self.n, self.m = x.n, y.n
        self.p = float(p)
        self.dim = self.n * self.m
        self.block_rows = int(block_rows)
        self._dx = x.dist
        self._dy = y.dist
        self._dense = None
        if max(self.n, self.m) <= dense_limit:
            self._dense = build_gamma(x, y, p).gamma

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self._dense is not None:
            return self._dense @ v
        out = np.empty(self.dim)
        vm = v.reshape(self.n, self.m)
        for i0 in range(0, self.n, max(1, self.block_rows // self.m)):
            i1 = min(self.n, i0 + max(1, self.block_rows // self.m))
            # rows (i, j) for i in [i0, i1): |dx[i, i'] - dy[j, j']| ** p
            blk = np.abs(self._dx[i0:i1, None, :, None] - self._dy[None, :, None, :])
            if self.p != 1.0:
                blk = blk**self.p
            out[i0 * self.m : i1 * self.m] = blk.reshape(
                (i1 - i0) * self.m, self.dim
            ) @ v.ravel()
        return out

    def quad(self, v: np.ndarray) -> float:
        """v' Gamma^(p) v."""
        return float(v @ self.matvec(v))
