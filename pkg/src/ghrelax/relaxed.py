"""Relaxed Gromov-Hausdorff distances over three lifted feasible sets.

The lifted variable is the bordered symmetric matrix ``Z = [[Zhat, z], [z',
1]]`` of side nm+1, where ``Zhat`` stands in for outer products of a relaxed
correspondence indicator and ``z`` for the indicator itself.  Three convex
feasible sets are provided:

* ``GH``  -- relaxes arbitrary correspondences; the p-distance over it is a
  true lower bound on the Gromov-Hausdorff distance.
* ``REG`` -- relaxes bijections (registration); requires equal sizes.
* ``SUR`` -- relaxes surjective functions from the larger space onto the
  smaller one.

The order-p distance is ``0.5 * (trace(Gamma^(p) Zhat) / N^2) ** (1/p)`` at
the SDP optimum with N = max(n, m); the sup version is computed by bisecting
feasibility problems over the distinct distortion values instead of
optimizing the nonsmooth max objective directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .distortion import build_gamma, flat_index
from .errors import (
    BisectionExhausted,
    DimensionMismatch,
    IncompatibleCardinalities,
    NotACorrespondence,
)
from .matching import Matching, hungarian_max_weight, matching_from_map, pair_distortion
from .metric import FiniteMetricSpace
from .sdp import (
    ConicProgram,
    FeasibilityReport,
    SdpSolution,
    SolverConfig,
    check_feasible,
    solve,
)

#: Entry threshold below which a solution entry counts as structurally zero
#: when detecting the support of a sup-norm solution.
TAU_SUPP = 1e-5


class FeasibleSetKind(Enum):
    GH = "gh"
    REG = "reg"
    SUR = "sur"

    @classmethod
    def parse(cls, name: Union[str, "FeasibleSetKind"]) -> "FeasibleSetKind":
        if isinstance(name, cls):
            return name
        return cls(str(name).lower())


@dataclass
class RelaxedDistanceResult:
    """One relaxed-distance evaluation: value, solver output, soft matching."""

    value: float
    p: float
    kind: FeasibleSetKind
    solution: SdpSolution
    soft_assignment: np.ndarray
    lower_bound_of_gh: bool

    def to_json_dict(self, matching: Optional[Matching] = None) -> dict:
        d = {
            "value": self.value,
            "p": "inf" if math.isinf(self.p) else self.p,
            "kind": self.kind.value,
            "iterations": self.solution.iterations,
            "status": self.solution.status,
            "rank": self.solution.numerical_rank,
            "residuals": {
                "primal": self.solution.primal_residual,
                "dual": self.solution.dual_residual,
            },
            "soft_assignment": np.asarray(self.soft_assignment).tolist(),
            "lower_bound_of_gh": self.lower_bound_of_gh,
        }
        if matching is not None:
            d["matching"] = {
                "pairs": [list(p) for p in matching.pairs],
                "bijective": matching.bijective,
                "distortion": matching.distortion,
            }
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_json_dict(**kw), indent=2)


@dataclass
class CompositionCertificate:
    """Numerical witness of the triangle-inequality composition argument.

    ``T`` composes two lifted solutions for (X, Y) and (Y, W) into a feasible
    candidate for (X, W); the certificate reports its feasibility residuals
    and compares its objective against the sum of the two input objectives.
    """

    T: np.ndarray
    feasibility_report: FeasibilityReport
    objective_T: float
    objective_sum: float


# ---------------------------------------------------------------------------
# feasible sets
# ---------------------------------------------------------------------------

def build_feasible_set(kind: FeasibleSetKind, n: int, m: int) -> ConicProgram:
    """Constraint-only program (no objective) for one lifted feasible set.

    Emits the constraint families exactly as published, including the
    redundant ones; the equality projection tolerates linear dependence.
    Entry (i, j) |-> i*m + j; the border column has index nm.
    """
    kind = FeasibleSetKind.parse(kind)
    if n < 1 or m < 1:
        raise IncompatibleCardinalities("spaces must be nonempty")
    if kind is FeasibleSetKind.REG and n != m:
        raise IncompatibleCardinalities(f"REG needs n == m, got {n} != {m}")
    if kind is FeasibleSetKind.SUR and n < m:
        raise IncompatibleCardinalities(f"SUR needs n >= m, got {n} < {m}")

    nm = n * m
    B = nm  # border index
    N = max(n, m)
    prog = ConicProgram(dim=nm + 1)
    prog.pin(B, B, 1.0)

    def idx(i, j):
        return flat_index(i, j, m)

    # marginals of the border column
    for j in range(m):
        rows = [idx(i, j) for i in range(n)]
        ones = [1.0] * n
        if kind is FeasibleSetKind.GH:
            prog.add_inequality(rows, [B] * n, ones, 1.0)
        elif kind is FeasibleSetKind.SUR:
            prog.add_inequality(rows, [B] * n, ones, 1.0)
        else:
            prog.add_equality(rows, [B] * n, ones, 1.0)
    for i in range(n):
        rows = [idx(i, j) for j in range(m)]
        ones = [1.0] * m
        if kind is FeasibleSetKind.GH:
            prog.add_inequality(rows, [B] * m, ones, 1.0)
        else:
            prog.add_equality(rows, [B] * m, ones, 1.0)

    # block sums of Zhat: over (i, i') for fixed (j, j'), and vice versa
    for j in range(m):
        for jp in range(m):
            rows = [idx(i, j) for i in range(n) for _ in range(n)]
            cols = [idx(ip, jp) for _ in range(n) for ip in range(n)]
            ones = [1.0] * (n * n)
            if kind is FeasibleSetKind.REG:
                prog.add_equality(rows, cols, ones, 1.0)
            else:
                prog.add_inequality(rows, cols, ones, 1.0)
    for i in range(n):
        for ip in range(n):
            rows = [idx(i, j) for j in range(m) for _ in range(m)]
            cols = [idx(ip, jp) for _ in range(m) for jp in range(m)]
            ones = [1.0] * (m * m)
            if kind is FeasibleSetKind.GH:
                prog.add_inequality(rows, cols, ones, 1.0)
            else:
                prog.add_equality(rows, cols, ones, 1.0)

    # functional zero patterns: one x-point cannot split across two y-points
    # (REG and SUR), nor one y-point across two x-points (REG only)
    if kind in (FeasibleSetKind.REG, FeasibleSetKind.SUR):
        for i in range(n):
            for j in range(m):
                for jp in range(j + 1, m):
                    prog.pin(idx(i, j), idx(i, jp), 0.0)
    if kind is FeasibleSetKind.REG:
        for j in range(m):
            for i in range(n):
                for ip in range(i + 1, n):
                    prog.pin(idx(i, j), idx(ip, j), 0.0)

    # trace pin (REG / SUR) and the row-sum coupling Zhat 1 = N z
    if kind in (FeasibleSetKind.REG, FeasibleSetKind.SUR):
        diag = list(range(nm + 1))
        prog.add_equality(diag, diag, [1.0] * (nm + 1), float(n + 1))
    coupling = float(N)
    for k in range(nm):
        rows = [k] * nm + [k]
        cols = list(range(nm)) + [B]
        vals = [1.0] * nm + [-coupling]
        prog.add_equality(rows, cols, vals, 0.0)

    return prog


# ---------------------------------------------------------------------------
# lifts and rounding
# ---------------------------------------------------------------------------

def lift_correspondence(
    R: Union[Sequence[int], Sequence[tuple[int, int]]], n: int, m: int
) -> np.ndarray:
    """Rank-1 lifted matrix of a correspondence.

    ``R`` is either a permutation array (length n, requires n == m) or an
    iterable of (i, j) pairs covering both spaces.  Each left point splits
    unit mass equally over its partners (so relations that pair one x with
    several y's show the published mass-splitting behaviour), giving the
    indicator vector mu and ``Z = [[mu mu', mu], [mu', 1]]``.  Lifts of
    bijections and of surjective functions from the larger space land
    exactly inside the matching feasible sets.
    """
    pairs: list[tuple[int, int]]
    seq = list(R)
    if seq and not isinstance(seq[0], (tuple, list, np.ndarray)):
        if n != m or len(seq) != n:
            raise NotACorrespondence("permutation form requires len(R) == n == m")
        pairs = [(i, int(j)) for i, j in enumerate(seq)]
        if sorted(j for _, j in pairs) != list(range(m)):
            raise NotACorrespondence("not a bijection")
    else:
        pairs = [(int(i), int(j)) for i, j in seq]
    if any(not (0 <= i < n and 0 <= j < m) for i, j in pairs):
        raise NotACorrespondence("pair index out of range")
    mu = np.zeros((n, m))
    for i, j in pairs:
        mu[i, j] = 1.0
    if (mu.sum(axis=1) == 0).any() or (mu.sum(axis=0) == 0).any():
        raise NotACorrespondence("relation must cover both spaces")
    mu /= mu.sum(axis=1, keepdims=True)
    v = np.concatenate([mu.ravel(), [1.0]])
    return np.outer(v, v)


def round_soft(solution: Union[SdpSolution, np.ndarray], n: int, m: int) -> np.ndarray:
    """Soft assignment: row sums of Zhat, rescaled to unit total row mass.

    Computes ``Zhat 1`` and rescales by the border mass, which equals
    1/max(n, m) on feasible solutions; a rank-1 lift of a permutation rounds
    back to the exact permutation matrix, and mass-split lifts reproduce
    their fractional rows.
    """
    Z = solution.Z if isinstance(solution, SdpSolution) else np.asarray(solution)
    nm = n * m
    if Z.shape != (nm + 1, nm + 1):
        raise DimensionMismatch(f"solution side {Z.shape[0]} != nm+1 = {nm + 1}")
    v = Z[:nm, :nm] @ np.ones(nm)
    border_mass = float(Z[:nm, nm].sum())
    if border_mass <= 1e-12:
        return np.zeros((n, m))
    return (v / border_mass).reshape(n, m)


def round_hard(
    soft: np.ndarray,
    x: Optional[FiniteMetricSpace] = None,
    y: Optional[FiniteMetricSpace] = None,
) -> Matching:
    """Extract a hard matching from a soft assignment.

    Square inputs get a maximum-weight perfect matching; rectangular ones map
    each row to its argmax column (lowest index on ties).  When the two
    spaces are supplied the matching carries its true distortion value, a
    certified GH upper bound for bijections.
    """
    soft = np.asarray(soft, dtype=float)
    n, m = soft.shape
    if n == m:
        # bias ties toward the identity ordering so rounding is deterministic
        gaps = np.unique(soft)
        eps = (np.diff(gaps).min() if gaps.size > 1 else 1.0) / (4.0 * n * m)
        bias = -eps * (np.arange(n)[:, None] * m + np.arange(m)[None, :]) / (n * m)
        perm = hungarian_max_weight(soft + bias)
        pairs = tuple((i, int(perm[i])) for i in range(n))
        bijective = True
    else:
        choice = np.argmax(soft, axis=1)
        pairs = tuple((i, int(j)) for i, j in enumerate(choice))
        bijective = False
    distortion = None
    if x is not None and y is not None:
        distortion = pair_distortion(x, y, pairs)
    return Matching(pairs=pairs, n=n, m=m, bijective=bijective, distortion=distortion)


# ---------------------------------------------------------------------------
# the distances
# ---------------------------------------------------------------------------

def _oriented(x, y, kind):
    """SUR is defined for n >= m; evaluate with the larger space first."""
    if kind is FeasibleSetKind.SUR and x.n < y.n:
        return y, x, True
    return x, y, False


def _finish(value, p, kind, sol, n, m, swapped) -> RelaxedDistanceResult:
    soft = round_soft(sol, n, m)
    if swapped:
        soft = soft.T
    return RelaxedDistanceResult(
        value=float(value),
        p=p,
        kind=kind,
        solution=sol,
        soft_assignment=soft,
        lower_bound_of_gh=(kind is FeasibleSetKind.GH),
    )


def relaxed_distance(
    x: FiniteMetricSpace,
    y: FiniteMetricSpace,
    kind: Union[str, FeasibleSetKind] = FeasibleSetKind.GH,
    p: float = 1.0,
    cfg: SolverConfig = SolverConfig(),
    warm=None,
) -> RelaxedDistanceResult:
    """Order-p relaxed distance ``0.5 * (min trace(Gamma^(p) Zhat) / N^2)^(1/p)``.

    N = max(n, m).  For ``kind=GH`` the value is a lower bound on the
    Gromov-Hausdorff distance of the two spaces.
    """
    kind = FeasibleSetKind.parse(kind)
    if math.isinf(p):
        return relaxed_distance_inf(x, y, kind, cfg)
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    a, b, swapped = _oriented(x, y, kind)
    n, m = a.n, b.n
    N = max(n, m)
    prog = build_feasible_set(kind, n, m)
    gamma = build_gamma(a, b, p)
    C = np.zeros((n * m + 1, n * m + 1))
    C[: n * m, : n * m] = gamma.gamma
    prog.objective = (C + C.T) / 2.0
    first_cfg = cfg if p <= 2 else replace(cfg, max_iter=min(cfg.max_iter, 5000))
    if warm is None and p > 8:
        # Heavily powered objectives span so many decades that a cold start
        # rarely lands on the optimum's scale.  The sup distance bounds the
        # order-p distance from above, so N^2 (2 d_inf)^p is a certified
        # upper bound on the optimal objective and a sound starting scale.
        value_inf, _ = _inf_oriented(a, b, kind, cfg, TAU_SUPP)
        ub = float(N**2 * (2.0 * value_inf) ** p)
        if ub > 0.0:
            first_cfg = replace(cfg, objective_scale=ub)
    sol = solve(prog, first_cfg, warm=warm)
    obj = max(sol.objective_value, 0.0)
    # Residual tolerances are absolute at the scale of the largest objective
    # entry.  Large powers compress the optimum far below that scale and the
    # p-th root then amplifies the absolute error, so re-solve with the
    # objective rescaled to the measured optimum until the estimate is
    # scale-stable.  Rescaling the objective by f while multiplying the
    # penalty by f leaves the iteration map unchanged, so the warm restart
    # continues exactly where the previous pass stopped, with tolerances now
    # acting relative to the optimum.
    refine_below = 1e-3 if p <= 2 else 0.3
    scale_now = float(first_cfg.objective_scale or np.abs(prog.objective).max())
    for _ in range(6):
        if obj <= 0.0 or obj >= refine_below * scale_now:
            break
        z_prev, dus_prev, rho_prev = sol._warm
        f = scale_now / obj
        refined = solve(
            prog,
            replace(cfg, objective_scale=obj),
            warm=(z_prev, dus_prev, rho_prev * f),
        )
        if refined.status != "Optimal" and refined.primal_residual > sol.primal_residual:
            break
        scale_now = obj
        obj_new = max(refined.objective_value, 0.0)
        sol = refined
        stable = obj_new == 0.0 or (0.25 <= obj_new / obj <= 4.0)
        obj = obj_new
        if stable:
            break
    value = 0.5 * (obj / N**2) ** (1.0 / p)
    return _finish(value, p, kind, sol, n, m, swapped)


def _inf_oriented(
    a: FiniteMetricSpace,
    b: FiniteMetricSpace,
    kind: FeasibleSetKind,
    cfg: SolverConfig,
    tau_supp: float,
) -> tuple[float, SdpSolution]:
    """Bisection core of the sup-distance on already-oriented spaces."""
    n, m = a.n, b.n
    nm = n * m
    base_prog = build_feasible_set(kind, n, m)
    gamma = build_gamma(a, b, math.inf).gamma  # unpowered
    levels = np.unique(gamma)

    # feasibility probes plateau quickly when infeasible; use a snappier
    # stall detector than the optimizing solves
    probe_cfg = replace(cfg, stall_check_every=150, stall_windows=5)

    def probe(level_idx: int, warm):
        t = levels[level_idx]
        extra = [tuple(e) for e in np.argwhere(gamma > t)]
        prog = base_prog.with_extra_zeros(extra)
        sol = solve(prog, probe_cfg, warm=warm)
        return sol

    def support_level(sol) -> int:
        # smallest level index consistent with the solution's visible support
        mask = np.abs(sol.Z[:nm, :nm]) > tau_supp
        if not mask.any():
            return 0
        achieved = float(gamma[mask].max())
        return int(np.searchsorted(levels, achieved))

    lo, hi = 0, len(levels) - 1
    sol = probe(hi, None)
    if sol.status != "Optimal":
        raise BisectionExhausted(
            f"feasibility failed even at the largest distortion level "
            f"(status {sol.status}, residual {sol.primal_residual:.3g})"
        )
    best_sol = sol
    warm = sol._warm
    while lo < hi:
        mid = (lo + hi) // 2
        # a feasible solution whose support already fits a smaller level is a
        # strong hint of the answer; probe there first (still verified)
        hint = support_level(best_sol)
        if lo <= hint < mid:
            mid = hint
        sol = probe(mid, warm)
        if sol.status == "Optimal":
            warm = sol._warm
            best_sol = sol
            hi = mid
        else:
            lo = mid + 1
    return 0.5 * float(levels[hi]), best_sol


def relaxed_distance_inf(
    x: FiniteMetricSpace,
    y: FiniteMetricSpace,
    kind: Union[str, FeasibleSetKind] = FeasibleSetKind.GH,
    cfg: SolverConfig = SolverConfig(),
    tau_supp: float = TAU_SUPP,
) -> RelaxedDistanceResult:
    """Sup-distortion relaxed distance by bisection over feasibility SDPs.

    The max objective is convex but nonsmooth, which hurts first-order
    solvers badly, so instead we bisect over the sorted distinct values t of
    the unpowered distortion tensor: threshold t is admissible when the
    feasibility program with every entry of distortion > t pinned to zero
    has a solution.  The value is half the smallest admissible t.  After
    each feasible probe the support of the solution (entries above
    ``tau_supp``) may certify an even smaller admissible t, which tightens
    the bracket for free.
    """
    kind = FeasibleSetKind.parse(kind)
    a, b, swapped = _oriented(x, y, kind)
    value, best_sol = _inf_oriented(a, b, kind, cfg, tau_supp)
    return _finish(value, math.inf, kind, best_sol, a.n, b.n, swapped)


def compose_certificate(
    x: FiniteMetricSpace,
    y: FiniteMetricSpace,
    w: FiniteMetricSpace,
    sol_xy: SdpSolution,
    sol_yw: SdpSolution,
    kind: Union[str, FeasibleSetKind] = FeasibleSetKind.REG,
    p: float = 1.0,
) -> CompositionCertificate:
    """Compose lifted solutions for (X,Y) and (Y,W) into a candidate for (X,W).

    ``That[ik, i'k'] = sum_{j,j'} Zhat[ij, i'j'] * Vhat[jk, j'k']`` with the
    border completed from the row-sum coupling of the target set.  For
    equal-cardinality spaces the composed objective never exceeds the sum of
    the two input objectives (at p = 1), which is the numerical content of
    the triangle inequality for the relaxed distance.
    """
    kind = FeasibleSetKind.parse(kind)
    n, m, q = x.n, y.n, w.n
    nm, mq, nq = n * m, m * q, n * q
    if sol_xy.Z.shape[0] != nm + 1 or sol_yw.Z.shape[0] != mq + 1:
        raise DimensionMismatch("solution dimensions do not match the spaces")
    Z4 = sol_xy.Z[:nm, :nm].reshape(n, m, n, m)
    V4 = sol_yw.Z[:mq, :mq].reshape(m, q, m, q)
    T4 = np.einsum("ijab,jkbc->ikac", Z4, V4)
    That = T4.reshape(nq, nq)
    That = (That + That.T) / 2.0
    N = max(n, q)
    t = That @ np.ones(nq) / N
    T = np.zeros((nq + 1, nq + 1))
    T[:nq, :nq] = That
    T[:nq, nq] = t
    T[nq, :nq] = t
    T[nq, nq] = 1.0

    prog = build_feasible_set(kind, n, q)
    report = check_feasible(prog, T)
    gamma_xw = build_gamma(x, w, p).gamma
    objective_T = float(np.sum(gamma_xw * That))
    objective_sum = sol_xy.objective_value + sol_yw.objective_value
    return CompositionCertificate(
        T=T,
        feasibility_report=report,
        objective_T=objective_T,
        objective_sum=objective_sum,
    )
