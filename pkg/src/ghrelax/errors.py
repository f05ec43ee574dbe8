"""Exception hierarchy shared across the package.

Everything derives from :class:`GhRelaxError` so callers can catch library
failures with a single except clause.  Input-validation errors additionally
derive from ``ValueError`` to keep the usual Python contract for bad
arguments.
"""

from __future__ import annotations


class GhRelaxError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GhRelaxError, ValueError):
    """Malformed or inconsistent user input."""


# -- metric construction -----------------------------------------------------

class NonFinite(InputError):
    """A distance matrix contains NaN or infinite entries."""


class AsymmetricMatrix(InputError):
    """dist[i][j] != dist[j][i] beyond tolerance."""


class NonzeroDiagonal(InputError):
    """dist[i][i] != 0 beyond tolerance."""


class TriangleViolation(InputError):
    """The triangle inequality fails for a triple of indices.

    Attributes i, j, k identify the violating triple:
    dist[i][k] > dist[i][j] + dist[j][k] + tol.
    """

    def __init__(self, i: int, j: int, k: int, message: str = ""):
        self.i, self.j, self.k = i, j, k
        super().__init__(message or f"triangle inequality violated at ({i}, {j}, {k})")


class DimensionMismatch(InputError):
    """Point-cloud rows have inconsistent dimensions."""


class Empty(InputError):
    """An operation that needs at least one point received none."""


class InvalidK(InputError):
    """Graph-metric gap parameter outside the metric-valid range (1, 2]."""


class BadTarget(InputError):
    """pad_with_repeats asked to shrink a space or given a bad multiset."""


class BadIndex(InputError):
    """A vertex or point index is out of range."""


# -- distortion / oracle -----------------------------------------------------

class EmptySupport(InputError):
    """max_support_value called with an empty support set."""


class NotACorrespondence(InputError):
    """A relation does not cover both spaces (or is not a bijection where required)."""


class TooLarge(InputError):
    """Instance exceeds the exhaustive-enumeration bound of the exact oracle."""


class CardinalityMismatch(InputError):
    """Operation requires |X| = |Y|."""


class IncompatibleCardinalities(InputError):
    """Feasible-set kind is incompatible with the given point counts."""


# -- solver ------------------------------------------------------------------

class SolverError(GhRelaxError):
    """Numerical failure inside an optimization routine."""


class NumericalBreakdown(SolverError):
    """Eigendecomposition (or another dense kernel) failed to converge."""


class BisectionExhausted(SolverError):
    """No feasible threshold found while bisecting d-tilde-infinity."""


# -- harness -----------------------------------------------------------------

class DisconnectedMesh(InputError):
    """Mesh sample vertices are not mutually reachable along edges."""


class TooMany(InputError):
    """Requested more sample vertices than the mesh has."""
