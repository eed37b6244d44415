"""Shared test oracles: brute-force minimizers kept independent of the
library's closed-form code paths."""

import numpy as np


def prox_objective(f, U, x, y):
    """f(y) + 1/2 ||x - y||^2 weighted by the inverse metric."""
    diff = x - y
    return f(y) + 0.5 * float(np.sum(diff * diff / U.weights))


def candidate_cloud(rng, x, count, spread=2.0):
    """Random candidates around x plus coordinate-aligned grid jitter."""
    d = x.size
    cands = x + spread * rng.standard_normal((count, d))
    cands[0] = x
    return cands


def best_candidate_value(f, U, x, candidates):
    vals = [prox_objective(f, U, x, c) for c in candidates]
    return min(vals)


def brute_force_prox_1d(objective, lo, hi, n_grid=200001):
    """Dense 1-d grid minimizer followed by local parabolic refinement."""
    ys = np.linspace(lo, hi, n_grid)
    vals = np.array([objective(y) for y in ys])
    i = int(np.argmin(vals))
    lo2 = ys[max(0, i - 2)]
    hi2 = ys[min(n_grid - 1, i + 2)]
    ys2 = np.linspace(lo2, hi2, 20001)
    vals2 = np.array([objective(y) for y in ys2])
    return float(ys2[int(np.argmin(vals2))])
