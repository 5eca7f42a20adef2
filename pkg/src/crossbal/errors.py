"""Exception types shared across the package.

Solvers distinguish between fatal conditions (raised) and recoverable ones
(recorded as diagnostic flags on the returned object). Only conditions that
make the requested computation meaningless are raised.
"""

from __future__ import annotations


class CrossBalError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CrossBalError):
    """Input shapes are inconsistent with each other."""


class NotPositiveDefinite(CrossBalError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class RankDeficient(CrossBalError):
    """A design matrix is rank deficient beyond what the ridge floor covers."""


class NotConverged(CrossBalError):
    """An iterative solver hit its iteration cap.

    Carries the best iterate found and its residual so callers can decide
    whether the partial answer is usable.
    """

    def __init__(self, message: str, best=None, residual: float | None = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DegenerateOutcome(CrossBalError):
    """Outcome vector is constant; model fitting degenerates."""


class SeparableData(CrossBalError):
    """Logistic fit separated; predictions saturate at the clip bounds."""


class TooFewUnits(CrossBalError):
    """A treatment group is too small for the requested fold split."""


class EmptyComponents(CrossBalError):
    """A feature map was requested with no fitted components."""


class EmptySelection(CrossBalError):
    """A selection step produced no columns to balance."""


class MissingOracles(CrossBalError):
    """An oracle estimator was requested on data without oracle values."""


class IdentityMismatch(CrossBalError):
    """The two Monte Carlo forms of theta0 disagree, signalling a DGP bug."""


class ResampleDegenerate(CrossBalError):
    """Bootstrap redraws exhausted without a usable resample."""


class DegenerateVariance(CrossBalError):
    """Variance estimate collapsed to zero; the CI is a point."""


class ConfigError(CrossBalError):
    """A configuration file or flag set failed validation."""
