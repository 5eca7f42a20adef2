"""Dataset container shared by estimators, diagnostics, and the CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class Dataset:
    """Covariates, binary treatment, and outcome for one analysis.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    T : ndarray, shape (n,)
        Binary treatment indicator (0/1). Both groups must be nonempty.
    Y : ndarray, shape (n,)
    column_names : tuple of str, optional
    """

    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.X, dtype=np.float64)
        t = np.asarray(self.T)
        y = np.asarray(self.Y, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionMismatch("X must be 2-dimensional")
        n = x.shape[0]
        if t.shape != (n,) or y.shape != (n,):
            raise DimensionMismatch("X, T, Y must have matching length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("X and Y must be finite")
        uniq = np.unique(t)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValueError("T must be coded 0/1")
        if uniq.size < 2:
            raise ValueError("both treatment groups must be nonempty")
        if self.column_names is not None and len(self.column_names) != x.shape[1]:
            raise DimensionMismatch("column_names must match X columns")
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "T", t.astype(np.int8))
        object.__setattr__(self, "Y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(self.T == 0)

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.T == 1)

    @property
    def n_c(self) -> int:
        return int(np.sum(self.T == 0))

    @property
    def n_t(self) -> int:
        return int(np.sum(self.T == 1))
