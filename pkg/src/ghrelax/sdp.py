"""First-order solver for the package's one SDP shape.

Programs are ``min <C, Z>`` over symmetric Z subject to sparse linear
equalities, >= inequalities, entrywise box bounds [0, 1], entries pinned to
fixed values (zero patterns, the corner), and Z PSD.  The solver is an
operator-splitting (ADMM) iteration alternating projection onto the PSD cone
(full symmetric eigendecomposition, negative eigenvalues clipped) with
projection onto the polyhedral part (equalities through a once-factorized
Gram system; inequalities and the box through a capped Dykstra cycle),
plus a scaled dual update.

Accuracy is moderate by design (defaults target 1e-7 residuals): distance
comparison does not need interior-point precision, and the dense
eigendecomposition per iteration dominates cost at dimensions up to a few
thousand.
"""

from __future__ import annotations

import csv
import itertools
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NumericalBreakdown

TRACE_ENV = "GHRELAX_SDP_TRACE"

_solve_counter = itertools.count()


# ---------------------------------------------------------------------------
# program description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearTerm:
    """One sparse linear functional  sum_t vals[t] * Z[rows[t], cols[t]]  (cmp rhs).

    Positions are listed literally; on symmetric Z the compiled projections
    use the symmetrized coefficient matrix, which evaluates to the same
    functional.
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: float

    @classmethod
    def make(cls, rows, cols, vals, rhs) -> "LinearTerm":
        r = np.asarray(rows, dtype=np.intp)
        c = np.asarray(cols, dtype=np.intp)
        v = np.asarray(vals, dtype=float)
        if not (r.shape == c.shape == v.shape):
            raise ValueError("rows/cols/vals must have equal length")
        return cls(r, c, v, float(rhs))

    def value(self, Z: np.ndarray) -> float:
        return float(Z[self.rows, self.cols] @ self.vals)


@dataclass
class ConicProgram:
    """Declarative container for one SDP instance.

    ``objective`` may be None (pure feasibility).  ``zero_pattern`` holds
    entry indices pinned to 0 and ``pinned_entries`` maps entries to fixed
    values; both are applied symmetrically and must not conflict.
    """

    dim: int
    objective: Optional[np.ndarray] = None
    eq_constraints: list[LinearTerm] = field(default_factory=list)
    ineq_constraints: list[LinearTerm] = field(default_factory=list)
    zero_pattern: set[tuple[int, int]] = field(default_factory=set)
    pinned_entries: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.objective is not None:
            C = np.asarray(self.objective, dtype=float)
            if C.shape != (self.dim, self.dim):
                raise ValueError(f"objective shape {C.shape} != ({self.dim}, {self.dim})")
            self.objective = (C + C.T) / 2.0
        for r, c in self.zero_pattern:
            if (r, c) in self.pinned_entries or (c, r) in self.pinned_entries:
                raise ValueError(f"entry ({r},{c}) both zero-pinned and value-pinned")
        self._compiled = None

    # -- constraint builders -------------------------------------------------

    def add_equality(self, rows, cols, vals, rhs) -> None:
        self.eq_constraints.append(LinearTerm.make(rows, cols, vals, rhs))
        self._compiled = None

    def add_inequality(self, rows, cols, vals, rhs) -> None:
        """Adds  sum vals * Z[rows, cols] >= rhs."""
        self.ineq_constraints.append(LinearTerm.make(rows, cols, vals, rhs))
        self._compiled = None

    def pin(self, r: int, c: int, value: float) -> None:
        if value == 0.0:
            self.zero_pattern.add((r, c))
        else:
            self.pinned_entries[(r, c)] = float(value)
        self._compiled = None

    def with_extra_zeros(self, entries: Sequence[tuple[int, int]]) -> "ConicProgram":
        """Copy of the program with additional zero-pinned entries."""
        prog = ConicProgram(
            dim=self.dim,
            objective=self.objective,
            eq_constraints=list(self.eq_constraints),
            ineq_constraints=list(self.ineq_constraints),
            zero_pattern=set(self.zero_pattern) | {(int(r), int(c)) for r, c in entries},
            pinned_entries=dict(self.pinned_entries),
        )
        return prog

    def compiled(self) -> "_Compiled":
        if self._compiled is None:
            self._compiled = _Compiled(self)
        return self._compiled


@dataclass
class SolverConfig:
    """Knobs for :func:`solve`.

    ``rho`` is the ADMM penalty; with ``adaptive_rho`` it doubles/halves
    whenever one residual exceeds the other tenfold.  ``rank_tol`` scales the
    eigenvalue cutoff for the numerical-rank estimate.
    """

    tol: float = 1e-7
    max_iter: int = 50000
    rho: float = 1.0
    adaptive_rho: bool = True
    rank_tol: float = 1e-6
    over_relaxation: float = 1.6
    # The iteration normalizes the objective by its largest entry, making
    # residual tolerances absolute at that scale.  When the optimum is known
    # to be far below it (heavily powered distortion tensors), pass an
    # estimate here so tolerances act relative to the optimum instead.
    objective_scale: Optional[float] = None
    # Infeasibility heuristic: declare Infeasible when the primal residual
    # sits above stall_ratio * tol and has improved by less than stall_rel
    # per window over stall_windows consecutive windows.
    stall_check_every: int = 400
    stall_windows: int = 6
    stall_ratio: float = 50.0
    stall_rel: float = 1e-3


@dataclass
class SdpSolution:
    """Solver output: the iterate, residuals, and spectral diagnostics."""

    Z: np.ndarray
    objective_value: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str  # "Optimal" | "MaxIter" | "Infeasible"
    eigenvalues: np.ndarray
    numerical_rank: int
    rho_final: float = 1.0

    # internal state for warm restarts (e.g. across bisection thresholds)
    _warm: Optional[tuple] = None

    def __repr__(self) -> str:
        return (
            f"SdpSolution(status={self.status}, obj={self.objective_value:.6g}, "
            f"pri={self.primal_residual:.2e}, dua={self.dual_residual:.2e}, "
            f"iters={self.iterations}, rank={self.numerical_rank})"
        )


@dataclass
class FeasibilityReport:
    """Worst violation per constraint family for a candidate matrix."""

    eq: float
    ineq: float
    box: float
    zero: float
    pins: float
    min_eigenvalue: float

    def max_violation(self, include_psd: bool = True) -> float:
        worst = max(self.eq, self.ineq, self.box, self.zero, self.pins)
        if include_psd:
            worst = max(worst, -min(self.min_eigenvalue, 0.0))
        return worst

    def ok(self, tol: float) -> bool:
        return self.max_violation() <= tol


# ---------------------------------------------------------------------------
# dense symmetric eigensolver wrappers
# ---------------------------------------------------------------------------

def symmetric_eigen(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of symmetric M.

    Thin wrapper over the LAPACK divide-and-conquer driver; re-raises
    non-convergence as :class:`NumericalBreakdown`.
    """
    try:
        w, V = scipy.linalg.eigh(M, check_finite=False)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NumericalBreakdown(f"symmetric eigendecomposition failed: {exc}") from exc
    return w, V

def project_psd(M: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix: clip negative eigenvalues to zero."""
    w, V = symmetric_eigen(M)
    if w[0] >= 0.0:
        return M
    pos = w > 0.0
    if not pos.any():
        return np.zeros_like(M)
    Vp = V[:, pos]
    out = (Vp * w[pos]) @ Vp.T
    return (out + out.T) / 2.0


# ---------------------------------------------------------------------------
# compiled projection machinery
# ---------------------------------------------------------------------------

def _sym_vec_row(term: LinearTerm, dim: int) -> dict[int, float]:
    """Symmetrized coefficient of a raw functional as {vec index: value}."""
    entries: dict[int, float] = {}
    for r, c, v in zip(term.rows, term.cols, term.vals):
        if r == c:
            entries[r * dim + c] = entries.get(r * dim + c, 0.0) + v
        else:
            entries[r * dim + c] = entries.get(r * dim + c, 0.0) + v / 2.0
            entries[c * dim + r] = entries.get(c * dim + r, 0.0) + v / 2.0
    return entries


def _stack_terms(terms: list[LinearTerm], dim: int) -> tuple[sp.csr_matrix, np.ndarray]:
    data, indices, indptr = [], [], [0]
    rhs = np.empty(len(terms))
    for k, t in enumerate(terms):
        row = _sym_vec_row(t, dim)
        indices.extend(row.keys())
        data.extend(row.values())
        indptr.append(len(indices))
        rhs[k] = t.rhs
    mat = sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int32)),
        shape=(len(terms), dim * dim),
    )
    return mat, rhs


class _Compiled:
    """Numeric form of a ConicProgram on the extended variable (vec(Z), s).

    Inequalities  <A_k, Z> >= rhs_k  become equality rows  <A_k, Z> - s_k =
    rhs_k  with slack bounds s_k >= 0, so the linear part is a single affine
    subspace projected exactly through one factorized Gram system, and the
    remaining entrywise part (box, pins, slack signs) is a clip.  Together
    with the PSD cone this yields three sets with closed-form projections,
    which the solver couples by consensus; no inexact inner cycle is needed.
    """

    def __init__(self, prog: ConicProgram):
        dim = prog.dim
        self.dim = dim
        n2 = dim * dim
        self.n_slack = len(prog.ineq_constraints)
        self.total = n2 + self.n_slack

        # entrywise clip set: box [0,1] plus pins on the Z block, s >= 0
        lo = np.zeros(self.total)
        hi = np.ones(self.total)
        hi[n2:] = np.inf
        for r, c in prog.zero_pattern:
            for a, b in ((r, c), (c, r)):
                lo[a * dim + b] = hi[a * dim + b] = 0.0
        for (r, c), v in prog.pinned_entries.items():
            for a, b in ((r, c), (c, r)):
                lo[a * dim + b] = hi[a * dim + b] = v
        self.clip_lo, self.clip_hi = lo, hi

        # one affine subspace: equality rows, then inequality rows - slack
        eq_mat, eq_rhs = _stack_terms(prog.eq_constraints, dim)
        ineq_mat, ineq_rhs = _stack_terms(prog.ineq_constraints, dim)
        self.ineq_mat, self.ineq_rhs = ineq_mat, ineq_rhs
        blocks = []
        if eq_mat.shape[0]:
            blocks.append(sp.hstack([eq_mat, sp.csr_matrix((eq_mat.shape[0], self.n_slack))]))
        if ineq_mat.shape[0]:
            blocks.append(
                sp.hstack([ineq_mat, -sp.eye(self.n_slack, format="csr")])
            )
        if blocks:
            self.E = sp.vstack(blocks).tocsr()
            self.rhs = np.concatenate([eq_rhs, ineq_rhs])
            G = (self.E @ self.E.T).toarray()
            w, Q = symmetric_eigen(G)
            cutoff = max(w.max(), 1.0) * 1e-12
            inv = np.where(w > cutoff, 1.0 / np.maximum(w, cutoff), 0.0)
            self._Q = np.ascontiguousarray(Q)
            self._winv = inv
            self.ET = self.E.T.tocsr()
        else:
            self.E = None
            self.rhs = np.zeros(0)
        self.eq_mat, self.eq_rhs = eq_mat, eq_rhs

    # -- projections on the extended variable --

    def proj_affine(self, u: np.ndarray) -> np.ndarray:
        if self.E is None:
            return u
        resid = self.E @ u - self.rhs
        coef = self._Q @ (self._winv * (resid @ self._Q))
        return u - self.ET @ coef

    def proj_clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.clip_lo, self.clip_hi)

    def violation(self, u: np.ndarray) -> float:
        """Worst original equality/inequality violation at the Z block of u."""
        v = u[: self.dim * self.dim]
        worst = 0.0
        if self.eq_mat.shape[0]:
            worst = float(np.abs(self.eq_mat @ v - self.eq_rhs).max())
        if self.ineq_mat.shape[0]:
            deficit = self.ineq_rhs - self.ineq_mat @ v
            worst = max(worst, float(deficit.max(initial=0.0)))
        return worst


# ---------------------------------------------------------------------------
# feasibility report
# ---------------------------------------------------------------------------

def check_feasible(prog: ConicProgram, Z: np.ndarray, tol: float = 0.0) -> FeasibilityReport:
    """Worst violation of each constraint family at Z (tol is advisory only)."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (prog.dim, prog.dim):
        raise ValueError(f"Z shape {Z.shape} != ({prog.dim}, {prog.dim})")
    eq = max((abs(t.value(Z) - t.rhs) for t in prog.eq_constraints), default=0.0)
    ineq = max((max(0.0, t.rhs - t.value(Z)) for t in prog.ineq_constraints), default=0.0)
    box = float(max(np.max(Z - 1.0, initial=0.0), np.max(-Z, initial=0.0)))
    zero = max((abs(Z[r, c]) for r, c in prog.zero_pattern), default=0.0)
    pins = max(
        (abs(Z[r, c] - v) for (r, c), v in prog.pinned_entries.items()), default=0.0
    )
    w = scipy.linalg.eigvalsh((Z + Z.T) / 2.0, check_finite=False)
    return FeasibilityReport(
        eq=float(eq), ineq=float(ineq), box=box, zero=float(zero), pins=float(pins),
        min_eigenvalue=float(w[0]),
    )


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

def _trace_writer(dim: int):
    trace_dir = os.environ.get(TRACE_ENV)
    if not trace_dir:
        return None, None
    os.makedirs(trace_dir, exist_ok=True)
    path = os.path.join(
        trace_dir, f"sdp_{os.getpid()}_{next(_solve_counter):05d}_dim{dim}.csv"
    )
    fh = open(path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(["iteration", "objective", "primal_residual", "dual_residual", "rho"])
    return fh, writer


def solve(
    prog: ConicProgram,
    cfg: SolverConfig = SolverConfig(),
    warm: Optional[tuple] = None,
) -> SdpSolution:
    """Run the consensus operator-splitting iteration on one program.

    Three copies of the extended variable are projected in parallel onto the
    PSD cone, the affine subspace, and the clip box; a central average
    carries the linear objective and scaled dual updates enforce agreement.
    The reported matrix is the clipped central iterate, so box bounds and
    pins hold exactly and the remaining families are within the reported
    primal residual.  ``warm`` accepts the ``_warm`` state of a previous
    solution of a related program of the same shape, which speeds up
    threshold sweeps considerably.
    """
    comp = prog.compiled()
    D = prog.dim
    n2 = D * D
    tol = cfg.tol
    alpha = cfg.over_relaxation

    C = prog.objective
    if C is not None and np.abs(C).max() > 0.0:
        c_scale = float(cfg.objective_scale or np.abs(C).max())
        C_step = np.zeros(comp.total)
        C_step[:n2] = (C / c_scale).ravel() / 3.0
    else:
        C_step = None

    if warm is not None and len(warm[0]) == comp.total:
        z = warm[0].copy()
        dus = [d.copy() for d in warm[1]]
        rho = float(warm[2])
    else:
        z = comp.proj_clip(np.zeros(comp.total))
        dus = [np.zeros(comp.total) for _ in range(3)]
        rho = cfg.rho

    def proj_cone(u):
        out = u.copy()
        out[:n2] = project_psd(np.reshape(u[:n2], (D, D))).ravel()
        return out

    projections = (proj_cone, comp.proj_affine, comp.proj_clip)

    fh, tracer = _trace_writer(D)
    status = "MaxIter"
    primal = dual = np.inf
    stall_hist: list[tuple[float, float]] = []
    it = 0
    # candidate termination uses the cheap consensus residuals, then the
    # reported (clipped central) iterate is re-measured family by family;
    # the internal target tightens whenever verification fails
    thresh = tol / 2.0
    verified: Optional[tuple[float, np.ndarray]] = None
    try:
        for it in range(1, cfg.max_iter + 1):
            xs = [proj(z - du) for proj, du in zip(projections, dus)]
            if alpha != 1.0:
                xs = [alpha * x + (1.0 - alpha) * z for x in xs]
            z_new = (xs[0] + dus[0] + xs[1] + dus[1] + xs[2] + dus[2]) / 3.0
            if C_step is not None:
                z_new = z_new - C_step / rho
            primal = float(
                np.sqrt(sum(np.linalg.norm(x - z_new) ** 2 for x in xs))
            )
            movement = float(np.linalg.norm(z_new - z))
            dual = rho * np.sqrt(3.0) * movement
            for du, x in zip(dus, xs):
                du += x - z_new
            z = z_new

            if tracer is not None and (it % 25 == 0 or it == 1):
                obj = float(C.ravel() @ z[:n2]) if C is not None else 0.0
                tracer.writerow([it, obj, primal, dual, rho])

            # movement gate: a small rho can make the dual residual look
            # converged while the center still drifts, so require the raw
            # step to be small too
            if primal <= thresh and dual <= tol and movement <= 10.0 * tol:
                u_try = comp.proj_clip(z)
                w_try = scipy.linalg.eigvalsh(
                    np.reshape(u_try[:n2], (D, D)), check_finite=False
                )
                rep = max(comp.violation(u_try), -min(float(w_try[0]), 0.0))
                if rep <= tol:
                    status = "Optimal"
                    verified = (rep, w_try)
                    break
                thresh *= 0.25

            if cfg.adaptive_rho and it % 25 == 0:
                if primal > 10.0 * dual and rho < 1e6:
                    rho *= 2.0
                    for du in dus:
                        du /= 2.0
                elif dual > 10.0 * primal and rho > 1e-6:
                    rho /= 2.0
                    for du in dus:
                        du *= 2.0

            # the stagnation-implies-infeasible heuristic only makes sense
            # for pure feasibility programs (empty polytopes plateau there);
            # optimizing solves just run to MaxIter when slow
            if C_step is None and it % cfg.stall_check_every == 0:
                dual_norm = float(sum(np.linalg.norm(du) for du in dus))
                stall_hist.append((primal, dual_norm))
                if len(stall_hist) > cfg.stall_windows:
                    old, old_dual = stall_hist[-cfg.stall_windows - 1]
                    flat = all(
                        stall_hist[-k][0] > (1.0 - cfg.stall_rel) * old
                        for k in range(1, cfg.stall_windows + 1)
                    )
                    growing = dual_norm > 1.5 * max(old_dual, 1e-12)
                    if flat and growing and primal > cfg.stall_ratio * tol:
                        status = "Infeasible"
                        break
    finally:
        if fh is not None:
            fh.close()

    u_rep = comp.proj_clip(z)
    Z = np.reshape(u_rep[:n2], (D, D))
    Z = (Z + Z.T) / 2.0
    if verified is not None:
        primal_rep, w = verified
    else:
        w = scipy.linalg.eigvalsh(Z, check_finite=False)
        primal_rep = max(comp.violation(u_rep), -min(float(w[0]), 0.0))
    lam_max = max(float(w[-1]), 0.0)
    rank = int(np.count_nonzero(w > cfg.rank_tol * max(lam_max, 1e-30)))
    objective = float(np.sum(C * Z)) if C is not None else 0.0
    sol = SdpSolution(
        Z=Z,
        objective_value=objective,
        primal_residual=primal_rep,
        dual_residual=dual,
        iterations=it,
        status=status,
        eigenvalues=w,
        numerical_rank=rank,
        rho_final=rho,
        _warm=(z, dus, rho),
    )
    return sol
