"""Dictionary construction: polynomial, spline, and interaction bases.

Levels are nested: ``raw`` < ``poly3`` < ``splines`` <
``poly3_interactions`` < ``spline_interactions``, matching the
increasingly rich dictionaries used for selection-based balancing.

The spline block uses a truncated-power cubic family per feature. With
``knots`` interior knots the knot grid spans the per-column min and max
(``knots + 2`` equally spaced points); each grid point except the right
boundary contributes ``(x - k)+^3``, and the right boundary enters as
the reflected term ``(max - x)+^3``, giving ``knots + 2`` spline columns
per feature on top of the x, x^2, x^3 block. The reflected and left
terms complete the polynomial directions without emitting an
identically-zero column; the family can be collinear by construction,
which downstream solvers absorb through their ridge floor.

Interactions are pairwise products of distinct features' base columns:
the up-to-cubic pool for ``poly3_interactions`` and the spline blocks
for ``spline_interactions``; provenance records every factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

LEVELS = ("raw", "poly3", "splines", "poly3_interactions", "spline_interactions")


@dataclass(frozen=True)
class BasisExpansion:
    """A constructed dictionary: matrix, provenance, and re-application."""

    level: str
    matrix: np.ndarray
    provenance: tuple[str, ...]
    knot_grid: tuple[tuple[float, ...] | None, ...]
    flags: tuple[str, ...]
    n_features: int
    knots: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def transform(self, x_new) -> np.ndarray:
        """Apply the same dictionary (stored knots) to new rows."""
        x_new = np.asarray(x_new, dtype=np.float64)
        if x_new.shape[1] != self.n_features:
            raise DimensionMismatch("new data must have the original feature count")
        cols, _, _ = _build_columns(x_new, self.level, self.knots, self.knot_grid)
        return cols


def _spline_block(col: np.ndarray, grid: np.ndarray):
    """Truncated-power columns over one feature's knot grid."""
    cols = [np.maximum(col - k, 0.0) ** 3 for k in grid[:-1]]
    cols.append(np.maximum(grid[-1] - col, 0.0) ** 3)
    return cols


def _build_columns(x, level, knots, fixed_grid=None):
    n, d = x.shape
    cols: list[np.ndarray] = []
    labels: list[str] = []
    flags: list[str] = []
    grids: list[tuple[float, ...] | None] = []

    def add(col, label):
        cols.append(col)
        labels.append(label)

    for j in range(d):
        add(x[:, j], f"x{j + 1}")
    if level == "raw":
        return np.column_stack(cols), labels, (flags, [None] * d)

    for j in range(d):
        add(x[:, j] ** 2, f"x{j + 1}^2")
        add(x[:, j] ** 3, f"x{j + 1}^3")

    if level != "poly3":
        for j in range(d):
            if fixed_grid is not None:
                grid = None if fixed_grid[j] is None else np.asarray(fixed_grid[j])
            else:
                lo, hi = float(x[:, j].min()), float(x[:, j].max())
                if hi - lo <= 1e-12 * (1.0 + abs(lo)):
                    grid = None
                    flags.append(f"constant_column:x{j + 1}")
                else:
                    grid = np.linspace(lo, hi, knots + 2)
            grids.append(None if grid is None else tuple(float(g) for g in grid))
            if grid is None:
                continue
            block = _spline_block(x[:, j], grid)
            for k, col in enumerate(block):
                tag = "refl" if k == len(block) - 1 else f"k{k}"
                add(col, f"x{j + 1}:spl:{tag}")
    else:
        grids = [None] * d

    if level in ("poly3_interactions", "spline_interactions"):
        poly_pool = {
            j: [(x[:, j], f"x{j + 1}"), (x[:, j] ** 2, f"x{j + 1}^2"),
                (x[:, j] ** 3, f"x{j + 1}^3")]
            for j in range(d)
        }
        for i in range(d):
            for j in range(i + 1, d):
                for ci, li in poly_pool[i]:
                    for cj, lj in poly_pool[j]:
                        add(ci * cj, f"{li}*{lj}")

    if level == "spline_interactions":
        spline_pool = {}
        for j in range(d):
            grid = grids[j]
            if grid is None:
                spline_pool[j] = []
                continue
            block = _spline_block(x[:, j], np.asarray(grid))
            spline_pool[j] = [
                (col, f"x{j + 1}:spl:{'refl' if k == len(block) - 1 else f'k{k}'}")
                for k, col in enumerate(block)
            ]
        for i in range(d):
            for j in range(i + 1, d):
                for ci, li in spline_pool[i]:
                    for cj, lj in spline_pool[j]:
                        add(ci * cj, f"{li}*{lj}")

    return np.column_stack(cols), labels, (flags, grids)


def basis_expand(x, level: str = "raw", knots: int = 10) -> BasisExpansion:
    """Construct a feature dictionary with column provenance.

    Knot placement is equally spaced between the per-column min and max
    of the provided sample; constant columns skip their spline block
    with a flag instead of failing.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("X must be 2-dimensional")
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    if level not in ("raw", "poly3") and knots < 2:
        raise ValueError("spline levels need at least 2 knots")
    matrix, labels, (flags, grids) = _build_columns(x, level, knots)
    return BasisExpansion(
        level=level,
        matrix=matrix,
        provenance=tuple(labels),
        knot_grid=tuple(grids),
        flags=tuple(flags),
        n_features=x.shape[1],
        knots=knots,
    )
