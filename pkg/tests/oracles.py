"""Independent brute-force oracles used by the balance-solver tests.

These deliberately avoid the dual/coordinate-descent path of the library:
the minimum-variance program is the Euclidean projection of the origin
onto the constraint polytope, computed here by Dykstra's alternating
projections; tiny nonnegative instances are solved exactly by exhaustive
active-set enumeration.
"""

import itertools

import numpy as np


def dykstra_min_norm(phi, lo, hi, nonneg=False, cycles=20_000, tol=1e-12):
    """Project 0 onto {w : lo <= phi' w / n <= hi} (optionally w >= 0).

    phi has one column per constraint; lo/hi are the per-constraint
    bounds on phi' w / n. Returns the minimum-norm feasible point.
    """
    phi = np.asarray(phi, dtype=float)
    n, d = phi.shape
    normals = phi / n
    sq = np.sum(normals**2, axis=0)
    x = np.zeros(n)
    incs = [np.zeros(n) for _ in range(d + (1 if nonneg else 0))]
    for _ in range(cycles):
        x_prev = x.copy()
        for j in range(d):
            v = x + incs[j]
            a = normals[:, j]
            val = a @ v
            proj = v + a * ((np.clip(val, lo[j], hi[j]) - val) / sq[j])
            incs[j] = v - proj
            x = proj
        if nonneg:
            v = x + incs[d]
            proj = np.maximum(v, 0.0)
            incs[d] = v - proj
            x = proj
        if np.linalg.norm(x - x_prev) <= tol * (1.0 + np.linalg.norm(x)):
            break
    return x


def enumerate_nonneg_qp(phi, lo, hi):
    """Exact minimizer of ||w||^2 s.t. w >= 0, phi' w / n in [lo, hi].

    Enumerates every combination of (zeroed weights) x (binding pattern
    per box constraint); each candidate is the minimum-norm point of its
    equality-restricted face, kept only if feasible. Exponential: use for
    n <= 8 and few constraints only.
    """
    phi = np.asarray(phi, dtype=float)
    n, d = phi.shape
    equality = (hi - lo) <= 1e-12
    options = [(2,) if equality[j] else (0, 1, -1) for j in range(d)]
    best, best_obj = None, np.inf
    for zero_mask in itertools.product((False, True), repeat=n):
        free = ~np.array(zero_mask)
        if not free.any():
            continue
        for pattern in itertools.product(*options):
            bind = [j for j, p in enumerate(pattern) if p != 0]
            w = np.zeros(n)
            if bind:
                g = np.array(
                    [hi[j] if pattern[j] in (1, 2) else lo[j] for j in bind]
                )
                c = phi[np.ix_(free, bind)]
                sol, *_ = np.linalg.lstsq(c.T, n * g, rcond=None)
                w[free] = sol
            val = phi.T @ w / n
            if (
                w.min(initial=0.0) >= -1e-9
                and np.all(val <= hi + 1e-9)
                and np.all(val >= lo - 1e-9)
            ):
                obj = float(w @ w)
                if obj < best_obj - 1e-15:
                    best, best_obj = w, obj
    return best, best_obj
