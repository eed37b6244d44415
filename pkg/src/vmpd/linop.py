"""Finite-dimensional linear operators with adjoints and norm estimation.

Operators are immutable after construction and safe for concurrent
read-only use; the spectral-norm cache is guarded by a per-operator lock.
Images are handled as flat row-major vectors of length ``width * height``.
"""

import threading
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .rng import STREAM_ADJOINT_X, STREAM_ADJOINT_Y, STREAM_POWER_ITER, gaussians


class DimensionError(ValueError):
    """Vector length does not match the operator's domain or codomain."""


def _as_vector(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(f"{what}: expected vector of length {dim}, got shape {x.shape}")
    return x


class LinearMap:
    """Base class: a bounded linear operator R^domain_dim -> R^codomain_dim."""

    kind = "abstract"

    def __init__(self, domain_dim, codomain_dim):
        if domain_dim < 1 or codomain_dim < 1:
            raise ValueError("operator dimensions must be positive")
        self.domain_dim = int(domain_dim)
        self.codomain_dim = int(codomain_dim)
        self._norm_cache = {}
        self._norm_lock = threading.Lock()

    def apply(self, x):
        x = _as_vector(x, self.domain_dim, f"{self.kind}.apply")
        return self._apply(x)

    def adjoint_apply(self, y):
        y = _as_vector(y, self.codomain_dim, f"{self.kind}.adjoint_apply")
        return self._adjoint_apply(y)

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint_apply(self, y):
        raise NotImplementedError

    @property
    def T(self):
        """Adjoint as a first-class operator."""
        return AdjointView(self)


class Identity(LinearMap):
    kind = "identity"

    def __init__(self, dim):
        super().__init__(dim, dim)

    def _apply(self, x):
        return x.copy()

    def _adjoint_apply(self, y):
        return y.copy()


class ScaledIdentity(LinearMap):
    kind = "scaled-identity"

    def __init__(self, factor, dim):
        super().__init__(dim, dim)
        self.factor = float(factor)

    def _apply(self, x):
        return self.factor * x

    def _adjoint_apply(self, y):
        return self.factor * y


class Diagonal(LinearMap):
    kind = "diagonal"

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 1 or entries.size == 0:
            raise ValueError("diagonal entries must be a nonempty 1-d array")
        super().__init__(entries.size, entries.size)
        self.entries = entries.copy()

    def _apply(self, x):
        return self.entries * x

    def _adjoint_apply(self, y):
        return self.entries * y


class Dense(LinearMap):
    kind = "dense-matrix"

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("dense operator needs a 2-d matrix")
        super().__init__(matrix.shape[1], matrix.shape[0])
        self.matrix = matrix.copy()

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint_apply(self, y):
        return self.matrix.T @ y


class Convolution2D(LinearMap):
    """Periodic (circular) 2-d convolution with an odd square kernel.

    The adjoint of periodic convolution is periodic correlation with the
    same kernel, which is what ``_adjoint_apply`` computes.
    """

    kind = "convolution-2d"

    def __init__(self, kernel, width, height):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
            raise ValueError("kernel must be square")
        if kernel.shape[0] % 2 == 0:
            raise ValueError("kernel size must be odd")
        n = int(width) * int(height)
        super().__init__(n, n)
        self.kernel = kernel.copy()
        self.width = int(width)
        self.height = int(height)

    def _grid(self, x):
        return x.reshape(self.height, self.width)

    def _apply(self, x):
        out = ndimage.convolve(self._grid(x), self.kernel, mode="wrap")
        return out.reshape(-1)

    def _adjoint_apply(self, y):
        out = ndimage.correlate(self._grid(y), self.kernel, mode="wrap")
        return out.reshape(-1)


class ForwardDifference2D(LinearMap):
    """Forward difference along one image axis, Neumann boundary.

    ``axis="horizontal"`` differences along columns (out[i, j] =
    x[i, j+1] - x[i, j], zero in the last column); ``axis="vertical"``
    differences along rows. Row-major vectorization.
    """

    kind = "forward-difference-2d"

    def __init__(self, width, height, axis):
        if axis not in ("horizontal", "vertical"):
            raise ValueError("axis must be 'horizontal' or 'vertical'")
        n = int(width) * int(height)
        super().__init__(n, n)
        self.width = int(width)
        self.height = int(height)
        self.axis = axis

    def _apply(self, x):
        g = x.reshape(self.height, self.width)
        out = np.zeros_like(g)
        if self.axis == "horizontal":
            out[:, :-1] = g[:, 1:] - g[:, :-1]
        else:
            out[:-1, :] = g[1:, :] - g[:-1, :]
        return out.reshape(-1)

    def _adjoint_apply(self, y):
        g = y.reshape(self.height, self.width)
        out = np.zeros_like(g)
        if self.axis == "horizontal":
            out[:, 1:] += g[:, :-1]
            out[:, :-1] -= g[:, :-1]
        else:
            out[1:, :] += g[:-1, :]
            out[:-1, :] -= g[:-1, :]
        return out.reshape(-1)


class VStack(LinearMap):
    """Vertical stack: apply concatenates child outputs in list order."""

    kind = "vertical-stack"

    def __init__(self, maps):
        maps = tuple(maps)
        if not maps:
            raise ValueError("stack needs at least one operator")
        dom = maps[0].domain_dim
        for m in maps:
            if m.domain_dim != dom:
                raise DimensionError("stacked operators must share the domain dimension")
        super().__init__(dom, sum(m.codomain_dim for m in maps))
        self.children = maps
        offsets = np.cumsum([0] + [m.codomain_dim for m in maps])
        self._offsets = offsets

    def _apply(self, x):
        return np.concatenate([m._apply(x) for m in self.children])

    def _adjoint_apply(self, y):
        out = np.zeros(self.domain_dim)
        for m, lo, hi in zip(self.children, self._offsets[:-1], self._offsets[1:]):
            out += m._adjoint_apply(y[lo:hi])
        return out

    def split(self, y):
        """Slice a codomain vector into per-child pieces."""
        y = _as_vector(y, self.codomain_dim, "vertical-stack.split")
        return [y[lo:hi] for lo, hi in zip(self._offsets[:-1], self._offsets[1:])]


class Composition(LinearMap):
    """outer o inner: apply(x) = outer(inner(x))."""

    kind = "composition"

    def __init__(self, outer, inner):
        if inner.codomain_dim != outer.domain_dim:
            raise DimensionError("composition: inner codomain must match outer domain")
        super().__init__(inner.domain_dim, outer.codomain_dim)
        self.outer = outer
        self.inner = inner

    def _apply(self, x):
        return self.outer._apply(self.inner._apply(x))

    def _adjoint_apply(self, y):
        return self.inner._adjoint_apply(self.outer._adjoint_apply(y))


class AdjointView(LinearMap):
    kind = "adjoint-view"

    def __init__(self, child):
        super().__init__(child.codomain_dim, child.domain_dim)
        self.child = child

    def _apply(self, x):
        return self.child._adjoint_apply(x)

    def _adjoint_apply(self, y):
        return self.child._apply(y)

    @property
    def T(self):
        return self.child


def stack(maps):
    """Vertical stack of operators sharing a domain."""
    return VStack(maps)


def compose(outer, inner):
    """Composition outer o inner."""
    return Composition(outer, inner)


def to_dense(L):
    """Materialize the operator as a dense matrix (small dims only)."""
    cols = [L.apply(e) for e in np.eye(L.domain_dim)]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class NormEstimate:
    """Spectral-norm estimate from power iteration.

    ``value`` already includes the (1 + tol) safety factor, so it upper
    bounds the true norm whenever the iteration converged
    (``is_upper_bound``); ``residual`` is the final relative eigen-residual
    of L*L.
    """

    value: float
    is_upper_bound: bool
    iterations_used: int
    residual: float


def estimate_norm(L, tol=1e-4, max_iter=2000, seed=0):
    """Estimate ||L|| by power iteration on L*L from a seeded start.

    Results are cached on the operator keyed by (tol, max_iter, seed).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    key = (float(tol), int(max_iter), int(seed))
    with L._norm_lock:
        cached = L._norm_cache.get(key)
    if cached is not None:
        return cached

    x = gaussians(seed, STREAM_POWER_ITER, 0, L.domain_dim)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        x = np.zeros(L.domain_dim)
        x[0] = 1.0
    else:
        x = x / nx

    rho = 0.0
    rel_res = np.inf
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        y = L._adjoint_apply(L._apply(x))
        rho = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # x is in the kernel of L*L; with a Gaussian start this means L = 0.
            rho = 0.0
            rel_res = 0.0
            converged = True
            break
        res = np.linalg.norm(y - rho * x)
        rel_res = res / max(rho, np.finfo(float).tiny)
        if rel_res <= tol:
            converged = True
            break
        x = y / ny

    value = float(np.sqrt(max(rho, 0.0)) * (1.0 + tol))
    est = NormEstimate(value=value, is_upper_bound=converged,
                       iterations_used=iterations, residual=float(rel_res))
    with L._norm_lock:
        L._norm_cache[key] = est
    return est


def adjoint_check(L, trials=100, seed=0):
    """Max normalized discrepancy |<Lx,y> - <x,L*y>| over seeded Gaussian probes."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    worst = 0.0
    for t in range(trials):
        x = gaussians(seed, STREAM_ADJOINT_X, t * L.domain_dim, L.domain_dim)
        y = gaussians(seed, STREAM_ADJOINT_Y, t * L.codomain_dim, L.codomain_dim)
        Lx = L._apply(x)
        Lty = L._adjoint_apply(y)
        gap = abs(float(Lx @ y) - float(x @ Lty))
        scale = 1.0 + np.linalg.norm(Lx) * np.linalg.norm(y)
        worst = max(worst, gap / scale)
    return worst
