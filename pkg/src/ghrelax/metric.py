"""Finite metric spaces: validation, constructors, and transforms.

A :class:`FiniteMetricSpace` is n points plus a symmetric nonnegative
distance matrix.  Pseudometrics (zero distances between distinct points)
are first-class: duplicate points arise naturally from padding and from
graph-induced distances, and every downstream solver accepts them.  Only
symmetry, a zero diagonal, and the triangle inequality are ever enforced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import floyd_warshall
from scipy.spatial.distance import pdist, squareform

from .errors import (
    AsymmetricMatrix,
    BadTarget,
    DimensionMismatch,
    Empty,
    InvalidK,
    NonFinite,
    NonzeroDiagonal,
    TriangleViolation,
)

#: Default triangle/symmetry tolerance, relative to the largest entry.
#: Floating-point geodesic pipelines (Dijkstra over float edge lengths)
#: introduce rounding at this scale.
DEFAULT_METRIC_RTOL = 1e-9


def _as_matrix(dist) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DimensionMismatch(f"distance matrix must be square, got shape {d.shape}")
    return d


@dataclass(frozen=True)
class FiniteMetricSpace:
    """n points with a validated symmetric distance matrix.

    Instances are immutable (the matrix is marked read-only) and safe to
    share across threads.  Construct through :func:`validate_metric`,
    :func:`from_point_cloud`, or :func:`graph_to_metric` rather than
    directly, unless you knowingly hold an already-valid matrix.
    """

    dist: np.ndarray
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        d = _as_matrix(self.dist)
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != d.shape[0]:
                raise DimensionMismatch(
                    f"{len(labels)} labels for {d.shape[0]} points"
                )
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def diameter(self) -> float:
        return float(self.dist.max()) if self.n else 0.0

    def scaled(self, c: float) -> "FiniteMetricSpace":
        """Same space with every distance multiplied by c > 0."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return FiniteMetricSpace(self.dist * c, self.labels)

    def permuted(self, perm: Sequence[int]) -> "FiniteMetricSpace":
        """Isometric copy with points reordered by ``perm`` (new i = old perm[i])."""
        p = np.asarray(perm, dtype=int)
        if sorted(p.tolist()) != list(range(self.n)):
            raise ValueError("perm must be a permutation of range(n)")
        labels = tuple(self.labels[i] for i in p) if self.labels else None
        return FiniteMetricSpace(self.dist[np.ix_(p, p)], labels)

    def __repr__(self) -> str:  # keep reprs short; matrices can be large
        return f"FiniteMetricSpace(n={self.n}, diam={self.diameter():.6g})"


@dataclass(frozen=True)
class SimpleGraph:
    """Undirected simple graph: vertex count plus a set of unordered edges."""

    vertex_count: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        canon = set()
        for u, v in self.edges:
            if not (0 <= u < self.vertex_count and 0 <= v < self.vertex_count):
                raise DimensionMismatch(f"edge ({u},{v}) out of range")
            if u == v:
                raise DimensionMismatch(f"self-loop at vertex {u}")
            canon.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_edges(cls, vertex_count: int, edges: Iterable[tuple[int, int]]) -> "SimpleGraph":
        return cls(vertex_count, frozenset((u, v) for u, v in edges))

    def degree_multiset(self) -> tuple[int, ...]:
        deg = [0] * self.vertex_count
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return tuple(sorted(deg))

    def permuted(self, perm: Sequence[int]) -> "SimpleGraph":
        p = list(perm)
        return SimpleGraph.from_edges(
            self.vertex_count, ((p[u], p[v]) for u, v in self.edges)
        )


@dataclass(frozen=True)
class EpsilonNet:
    """Indices of a covering subset of a parent space, with its radius."""

    indices: tuple[int, ...]
    epsilon: float

    def covers(self, space: FiniteMetricSpace) -> bool:
        """Exhaustive coverage check: every point within epsilon of the net."""
        sel = np.asarray(self.indices, dtype=int)
        return bool((space.dist[:, sel].min(axis=1) <= self.epsilon + 1e-12).all())


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def validate_metric(
    dist,
    tau_metric: float = DEFAULT_METRIC_RTOL,
    labels: Optional[Sequence[str]] = None,
    strict: bool = False,
) -> FiniteMetricSpace:
    """Validate a square matrix as a (pseudo)metric and wrap it.

    ``tau_metric`` is relative to the largest entry.  Checks, in order:
    finiteness, zero diagonal, symmetry, triangle inequality.  Zero
    distances between distinct points are accepted; ``strict=True``
    additionally rejects them (a true metric is required).

    Raises NonFinite, NonzeroDiagonal, AsymmetricMatrix, TriangleViolation.
    """
    d = _as_matrix(dist)
    n = d.shape[0]
    if not np.isfinite(d).all():
        bad = np.argwhere(~np.isfinite(d))[0]
        raise NonFinite(f"non-finite entry at {tuple(bad)}")
    scale = float(np.abs(d).max()) if n else 0.0
    tol = tau_metric * max(scale, 1.0) if scale > 0 else tau_metric
    if np.abs(np.diag(d)).max(initial=0.0) > tol:
        i = int(np.argmax(np.abs(np.diag(d))))
        raise NonzeroDiagonal(f"dist[{i}][{i}] = {d[i, i]!r}")
    if np.abs(d - d.T).max(initial=0.0) > tol:
        i, j = np.unravel_index(np.argmax(np.abs(d - d.T)), d.shape)
        raise AsymmetricMatrix(f"dist[{i}][{j}]={d[i, j]!r} vs dist[{j}][{i}]={d[j, i]!r}")
    # Triangle scan over all ordered triples, one intermediate at a time.
    # Degenerate triples (j == i or j == k) also flag negative entries,
    # since d[i][i]=0 <= 2*d[i][j] fails when d[i][j] < 0.
    for j in range(n):
        slack = d - (d[:, j, None] + d[None, j, :])
        if slack.max(initial=0.0) > tol:
            i, k = np.unravel_index(np.argmax(slack), slack.shape)
            raise TriangleViolation(int(i), int(j), int(k))
    if strict:
        off = d[~np.eye(n, dtype=bool)]
        if off.size and off.min() <= tol:
            i, j = np.unravel_index(
                np.argmin(d + np.eye(n) * (scale + 1.0)), d.shape
            )
            raise TriangleViolation(int(i), int(i), int(j), "zero distance between distinct points")
    return FiniteMetricSpace(d, tuple(labels) if labels is not None else None)


def from_point_cloud(points, labels: Optional[Sequence[str]] = None) -> FiniteMetricSpace:
    """Euclidean metric space over rows of a point array."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise Empty("point cloud is empty")
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DimensionMismatch(f"expected 2-D point array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise NonFinite("point cloud has non-finite coordinates")
    d = squareform(pdist(pts)) if pts.shape[0] > 1 else np.zeros((1, 1))
    return FiniteMetricSpace(d, tuple(labels) if labels is not None else None)


def graph_to_metric(
    g: SimpleGraph, K: float = 2.0, strict: bool = True
) -> FiniteMetricSpace:
    """Two-valued metric of a graph: 1 on edges, K between non-adjacent vertices.

    Any triple with two edges and one non-edge needs K <= 2 for the triangle
    inequality, while K <= 1 would collapse edges into non-edges, so strict
    mode enforces 1 < K <= 2 (default K = 2, the largest valid choice).
    ``strict=False`` accepts any K > 1 -- e.g. a huge gap value -- and skips
    metric validation, yielding a pseudo-distance matrix that downstream
    solvers still accept.  Zero-distance detection only needs the two level
    values to differ.
    """
    if strict and not (1.0 < K <= 2.0):
        raise InvalidK(f"K = {K!r} outside (1, 2]; pass strict=False to force")
    if K <= 1.0:
        raise InvalidK(f"K = {K!r} must exceed the edge distance 1")
    n = g.vertex_count
    d = np.full((n, n), float(K))
    np.fill_diagonal(d, 0.0)
    for u, v in g.edges:
        d[u, v] = d[v, u] = 1.0
    return FiniteMetricSpace(d)


def load_graph(path) -> SimpleGraph:
    """Read the ``n m`` / ``u v`` edge-list format."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise Empty(f"{path}: missing graph header")
    n, m = int(tokens[0]), int(tokens[1])
    nums = [int(t) for t in tokens[2:]]
    if len(nums) != 2 * m:
        raise DimensionMismatch(f"{path}: expected {m} edges, found {len(nums) // 2}")
    edges = [(nums[2 * i], nums[2 * i + 1]) for i in range(m)]
    return SimpleGraph.from_edges(n, edges)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def restrict(space: FiniteMetricSpace, indices: Sequence[int]) -> FiniteMetricSpace:
    """Sub-space induced by a list of point indices (repeats allowed)."""
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise Empty("cannot restrict to zero points")
    if idx.min() < 0 or idx.max() >= space.n:
        raise BadTarget(f"index out of range for n={space.n}")
    labels = tuple(space.labels[i] for i in idx) if space.labels else None
    return FiniteMetricSpace(space.dist[np.ix_(idx, idx)], labels)


def epsilon_net(space: FiniteMetricSpace, epsilon: float) -> EpsilonNet:
    """Greedy farthest-point net covering the space at radius <= epsilon.

    Starts from point 0 and repeatedly adds the point farthest from the
    current net (lowest index on ties) until everything is covered.
    The result is a valid cover but not necessarily a minimum one.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    chosen = [0]
    gap = space.dist[:, 0].copy()
    while True:
        far = int(np.argmax(gap))
        if gap[far] <= epsilon:
            break
        chosen.append(far)
        np.minimum(gap, space.dist[:, far], out=gap)
    return EpsilonNet(tuple(chosen), float(epsilon))


def pad_with_repeats(
    space: FiniteMetricSpace,
    target_n: int,
    indices: Optional[Sequence[int]] = None,
) -> FiniteMetricSpace:
    """Pseudometric copy of the space with points repeated up to ``target_n``.

    ``indices``, when given, lists which original point each output row is a
    copy of; it must have length target_n and include every original point.
    The default repeats points round-robin.  Copies sit at distance zero, so
    the result is generally only a pseudometric.
    """
    n = space.n
    if target_n < n:
        raise BadTarget(f"target_n = {target_n} < n = {n}")
    if indices is None:
        idx = [i % n for i in range(target_n)]
    else:
        idx = [int(i) for i in indices]
        if len(idx) != target_n:
            raise BadTarget(f"multiset has {len(idx)} entries, expected {target_n}")
        if any(i < 0 or i >= n for i in idx):
            raise BadTarget("multiset index out of range")
        if set(idx) != set(range(n)):
            raise BadTarget("multiset must cover every original point")
    return restrict(space, idx)


def perturb(space: FiniteMetricSpace, magnitude: float, seed: int) -> FiniteMetricSpace:
    """Add bounded symmetric noise to every off-diagonal entry, then repair.

    Each entry moves by uniform noise in [-magnitude, +magnitude] (clipped at
    zero) and the result is closed under shortest paths (Floyd-Warshall), so
    the output always validates.  Deterministic for a fixed seed.  After
    closure no entry differs from the original by more than n * magnitude.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be nonnegative")
    n = space.n
    if magnitude == 0 or n < 2:
        return space
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-magnitude, magnitude, size=(n, n))
    noise = np.triu(noise, k=1)
    noise = noise + noise.T
    d = np.maximum(space.dist + noise, 0.0)
    np.fill_diagonal(d, 0.0)
    closed = floyd_warshall(d, directed=False)
    return FiniteMetricSpace(closed, space.labels)


def is_generic(space: FiniteMetricSpace, tol: float = 0.0) -> tuple[bool, float]:
    """Whether all pairwise distances are distinct and nonzero, plus the gap.

    Returns ``(generic, delta)`` where delta is the smallest nonzero entry of
    the self-distortion tensor Gamma(X, X) -- i.e. the smallest nonzero
    absolute difference among {0} and all off-diagonal distances.  Spaces
    within delta-scaled perturbations of a generic space keep its optimal
    correspondence structure, which is what makes delta useful to callers.
    """
    n = space.n
    iu = np.triu_indices(n, k=1)
    vals = space.dist[iu]
    if vals.size == 0:
        return True, 0.0
    levels = np.sort(np.concatenate(([0.0], vals)))
    gaps = np.abs(levels[:, None] - levels[None, :])
    nonzero = gaps[gaps > tol]
    delta = float(nonzero.min()) if nonzero.size else 0.0
    generic = bool(vals.min() > tol) and bool(
        np.diff(np.sort(vals)).min(initial=np.inf) > tol
    )
    return generic, delta
