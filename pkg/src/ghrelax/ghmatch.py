"""GHMatch: non-convex registration via a projected augmented Lagrangian.

For equal-size spaces the registration objective ``y' Gamma^(p) y`` over the
box [0, 1]^(n^2) with doubly-stochastic marginals ``A y = 1`` is attacked
directly (no lifting): an outer augmented-Lagrangian loop drives the
marginal violation to zero under a geometrically growing penalty while an
inner projected-gradient solver with Barzilai-Borwein steps minimizes the
smooth penalized objective over the box.  The final vector is decoded into a
hard map by per-block argmax; bijective outputs certify a Gromov-Hausdorff
upper bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .distortion import GammaOperator
from .errors import CardinalityMismatch
from .matching import Matching, hungarian_max_weight, matching_from_map, pair_distortion
from .metric import FiniteMetricSpace


@dataclass
class GhMatchConfig:
    """Algorithm parameters; the published defaults are sigma0=5, mu=10."""

    sigma0: float = 5.0
    mu: float = 10.0
    lambda0: float = 1.0
    outer_iters: int = 12
    inner_tol: float = 1e-8
    inner_max_iters: int = 1000
    p: float = 1.0
    # optional in-loop sparsification (off by default): entries below the
    # threshold are zeroed between outer iterations
    threshold_enabled: bool = False
    threshold: float = 1e-3
    early_exit_violation: float = 1e-8
    dense_limit: int = 60

    def __post_init__(self):
        if self.sigma0 <= 0 or self.mu <= 1:
            raise ValueError("need sigma0 > 0 and mu > 1")


@dataclass(frozen=True)
class OuterRecord:
    """Per-outer-iteration trajectory entry."""

    k: int
    sigma: float
    objective: float
    violation: float
    sparsity: float
    inner_iters: int
    inner_stalled: bool


@dataclass
class GhMatchResult:
    """Final relaxed vector, decoded matching, and diagnostics."""

    y: np.ndarray
    matching: Matching
    repaired: Optional[Matching]
    upper_bound: float
    p_mean_value: float
    constraint_violation: float
    sparsity: float
    trajectory: list[OuterRecord]

    @property
    def bijective(self) -> bool:
        return self.matching.bijective

    def best_bijection(self) -> Matching:
        return self.matching if self.matching.bijective else self.repaired

    def dump_trajectory(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "sigma", "objective", "violation", "sparsity",
                        "inner_iters", "inner_stalled"])
            for r in self.trajectory:
                w.writerow([r.k, r.sigma, r.objective, r.violation, r.sparsity,
                            r.inner_iters, r.inner_stalled])


class MarginalOperator:
    """Implicit row/column-sum operator A in R^{2n x n^2} with b = 1."""

    def __init__(self, n: int):
        self.n = n

    def apply(self, y: np.ndarray) -> np.ndarray:
        Y = y.reshape(self.n, self.n)
        return np.concatenate([Y.sum(axis=1), Y.sum(axis=0)])

    def adjoint(self, w: np.ndarray) -> np.ndarray:
        n = self.n
        return (w[:n, None] + w[None, n:]).ravel()

    def violation(self, y: np.ndarray) -> float:
        return float(np.abs(self.apply(y) - 1.0).max())


def box_qp_minimize(
    quad: Callable[[np.ndarray], np.ndarray],
    linear: np.ndarray,
    start: np.ndarray,
    tol: float,
    max_iters: int,
    lower: float = 0.0,
    upper: float = 1.0,
) -> tuple[np.ndarray, int, bool]:
    """Minimize y' Q y + linear . y over a box, Q given as a product operator.

    Projected gradient with a safeguarded Barzilai-Borwein step and monotone
    Armijo backtracking (halving, c = 1e-4).  Stops when the unit-step
    projected gradient is below ``tol`` in the infinity norm.  Returns the
    best iterate seen, the iteration count, and a stall flag (set when
    backtracking cannot find any decrease).
    """
    c_armijo = 1e-4
    y = np.clip(start, lower, upper)
    Qy = quad(y)
    f = float(y @ Qy + linear @ y)
    g = 2.0 * Qy + linear
    best_y, best_f = y, f
    alpha = 1.0 / max(float(np.abs(g).max()), 1.0)
    stalled = False
    it = 0
    for it in range(1, max_iters + 1):
        pg = y - np.clip(y - g, lower, upper)
        if float(np.abs(pg).max()) <= tol:
            break
        step = alpha
        decreased = False
        for _ in range(60):
            y_new = np.clip(y - step * g, lower, upper)
            d = y_new - y
            gd = float(g @ d)
            if not d.any():
                break
            Qy_new = quad(y_new)
            f_new = float(y_new @ Qy_new + linear @ y_new)
            if f_new <= f + c_armijo * gd:
                decreased = True
                break
            step *= 0.5
        if not decreased:
            stalled = True
            break
        g_new = 2.0 * Qy_new + linear
        s = y_new - y
        dg = g_new - g
        sdg = float(s @ dg)
        if sdg > 1e-30:
            alpha = float(s @ s) / sdg
            alpha = min(max(alpha, 1e-12), 1e12)
        else:
            alpha = min(step * 2.0, 1e12)
        y, f, g = y_new, f_new, g_new
        if f < best_f:
            best_y, best_f = y, f
    return best_y, it, stalled


def extract_map(y: np.ndarray, n: int) -> tuple[np.ndarray, bool, np.ndarray]:
    """Decode a relaxed vector into map(i) = argmax of block i.

    Ties break to the lowest index.  Returns (map, bijective, repaired) where
    ``repaired`` is a maximum-weight bijection on the same scores (equal to
    the map whenever the map is already bijective).
    """
    Y = np.asarray(y, dtype=float).reshape(n, n)
    mapping = np.argmax(Y, axis=1)
    bijective = len(set(mapping.tolist())) == n
    if bijective:
        repaired = mapping.copy()
    else:
        gaps = np.unique(Y)
        eps = (np.diff(gaps).min() if gaps.size > 1 else 1.0) / (4.0 * n * n)
        bias = -eps * (np.arange(n)[:, None] * n + np.arange(n)[None, :]) / (n * n)
        repaired = hungarian_max_weight(Y + bias)
    return mapping, bijective, repaired


def distortion_of_matching(
    x: FiniteMetricSpace,
    y: FiniteMetricSpace,
    matching: Union[Matching, Sequence[int]],
) -> float:
    """0.5 * max |d_X(i,i') - d_Y(map i, map i')|: a GH upper bound when bijective."""
    if isinstance(matching, Matching):
        return pair_distortion(x, y, matching.pairs)
    mp = np.asarray(matching, dtype=int)
    pairs = [(i, int(mp[i])) for i in range(x.n)]
    return pair_distortion(x, y, pairs)


def sparsity_fraction(y: np.ndarray, tol: float = 1e-3) -> float:
    """Fraction of entries within tol of {0, 1}."""
    return float(np.mean((np.abs(y) <= tol) | (np.abs(y - 1.0) <= tol)))


def gh_match(
    x: FiniteMetricSpace,
    y: FiniteMetricSpace,
    cfg: GhMatchConfig = GhMatchConfig(),
) -> GhMatchResult:
    """Run GHMatch between two equal-size spaces.

    Outer loop: minimize the augmented Lagrangian over the box (warm-started
    at the previous iterate), then update multipliers against the marginal
    residual and grow the penalty by ``mu``.  Everything is deterministic for
    fixed inputs and configuration.
    """
    if x.n != y.n:
        raise CardinalityMismatch(f"GHMatch needs |X| = |Y|, got {x.n} != {y.n}")
    n = x.n
    op = GammaOperator(x, y, cfg.p, dense_limit=cfg.dense_limit)
    A = MarginalOperator(n)
    b = np.ones(2 * n)

    yk = np.full(n * n, 1.0 / n)
    lam = np.full(2 * n, cfg.lambda0)
    sigma = cfg.sigma0
    trajectory: list[OuterRecord] = []

    for k in range(cfg.outer_iters):
        sig = sigma  # bind for the closures below

        def quad(v, _sig=sig):
            return op.matvec(v) + 0.5 * _sig * A.adjoint(A.apply(v))

        linear = -A.adjoint(lam + sigma * b)
        yk, inner_iters, stalled = box_qp_minimize(
            quad, linear, yk, cfg.inner_tol, cfg.inner_max_iters
        )
        if cfg.threshold_enabled:
            yk = np.where(yk < cfg.threshold, 0.0, yk)
        resid = A.apply(yk) - b
        viol = float(np.abs(resid).max())
        trajectory.append(
            OuterRecord(
                k=k,
                sigma=sigma,
                objective=op.quad(yk),
                violation=viol,
                sparsity=sparsity_fraction(yk),
                inner_iters=inner_iters,
                inner_stalled=stalled,
            )
        )
        lam = lam - sigma * resid
        sigma = cfg.mu * sigma
        if viol <= cfg.early_exit_violation:
            break

    mapping, bijective, repaired_perm = extract_map(yk, n)
    matching = matching_from_map(mapping, x, y)
    repaired = None if bijective else matching_from_map(repaired_perm, x, y)
    p_mean = 0.5 * (max(op.quad(yk), 0.0) / n**2) ** (1.0 / cfg.p)
    return GhMatchResult(
        y=yk,
        matching=matching,
        repaired=repaired,
        upper_bound=matching.distortion,
        p_mean_value=p_mean,
        constraint_violation=float(np.abs(A.apply(yk) - b).max()),
        sparsity=sparsity_fraction(yk),
        trajectory=trajectory,
    )
