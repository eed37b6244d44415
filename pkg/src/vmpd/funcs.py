"""Convex function catalog: proximity operators under diagonal metrics,
smooth terms with certified curvature, and conjugation.

Metric convention
-----------------
Every prox entry point takes the algorithm's *preconditioner* ``U`` and
computes the prox with weighting ``U^{-1}``, i.e.

    prox_in_metric(f, U, x) = argmin_y  f(y) + 1/2 ||x - y||^2_{U^{-1}}

so callers hand over the same ``U`` that scales their forward steps and
never invert anything themselves.
"""

import math

import numpy as np

from . import linop

DEFAULT_METRIC_FLOOR = 1e-8


class MetricError(ValueError):
    """Invalid diagonal metric (nonpositive weights, floor, block mismatch)."""


class UnsupportedEvaluationError(ValueError):
    """The requested closed-form evaluation does not exist in the catalog."""


class BlockStructure:
    """Partition of 0..dim-1 into disjoint covering groups."""

    def __init__(self, groups, dim):
        self.dim = int(dim)
        self.groups = tuple(tuple(int(i) for i in g) for g in groups)
        labels = np.full(self.dim, -1, dtype=np.int64)
        for b, g in enumerate(self.groups):
            if len(g) == 0:
                raise ValueError("empty block")
            for i in g:
                if i < 0 or i >= self.dim:
                    raise ValueError(f"block index {i} out of range")
                if labels[i] != -1:
                    raise ValueError(f"index {i} appears in two blocks")
                labels[i] = b
        if np.any(labels < 0):
            raise ValueError("blocks must cover every index")
        self.labels = labels
        self.n_blocks = len(self.groups)
        self.first_index = np.array([g[0] for g in self.groups], dtype=np.int64)

    @classmethod
    def pixel_pairs(cls, n_pixels):
        """Blocks {j, j + n} pairing the two gradient components of pixel j."""
        return cls([(j, j + n_pixels) for j in range(n_pixels)], 2 * n_pixels)

    def block_norms(self, x):
        sq = np.bincount(self.labels, weights=x * x, minlength=self.n_blocks)
        return np.sqrt(sq)

    def is_block_constant(self, weights):
        return bool(np.all(weights == weights[self.first_index][self.labels]))


class DiagonalMetric:
    """Strictly positive diagonal preconditioner, constant over a run."""

    def __init__(self, weights, block_constant_over=None, floor=DEFAULT_METRIC_FLOOR):
        weights = np.asarray(weights, dtype=np.float64)
        if floor <= 0:
            raise MetricError("metric floor must be strictly positive")
        if weights.ndim != 1 or weights.size == 0:
            raise MetricError("weights must be a nonempty 1-d array")
        if not np.all(np.isfinite(weights)):
            raise MetricError("weights must be finite")
        if np.any(weights < floor):
            raise MetricError(f"weights must be >= floor {floor}")
        if block_constant_over is not None:
            if block_constant_over.dim != weights.size:
                raise MetricError("block structure dimension mismatch")
            if not block_constant_over.is_block_constant(weights):
                raise MetricError("weights not constant within declared blocks")
        self.dim = weights.size
        self.weights = weights.copy()
        self.block_constant_over = block_constant_over
        self.floor = float(floor)

    @classmethod
    def scalar(cls, value, dim, **kw):
        return cls(np.full(dim, float(value)), **kw)

    def apply(self, x):
        return self.weights * x

    def inv_apply(self, x):
        return x / self.weights

    def sqrt_map(self):
        return linop.Diagonal(np.sqrt(self.weights))

    def inverse(self):
        return DiagonalMetric(1.0 / self.weights,
                              block_constant_over=self.block_constant_over,
                              floor=min(self.floor, float(np.min(1.0 / self.weights))))

    def scaled(self, s):
        if s <= 0:
            raise MetricError("scale must be positive")
        return DiagonalMetric(self.weights * s,
                              block_constant_over=self.block_constant_over,
                              floor=min(self.floor, float(np.min(self.weights * s))))

    @property
    def max_weight(self):
        return float(np.max(self.weights))


class ProxTerm:
    """Catalog function with a prox rule; evaluate with ``f(x)``.

    Rules: zero, box-indicator, scaled-l12, indicator-zero, conjugate-of.
    """

    def __init__(self, rule, dim, lo=None, hi=None, kappa=None, blocks=None, child=None):
        self.rule = rule
        self.dim = int(dim)
        self.lo = lo
        self.hi = hi
        self.kappa = kappa
        self.blocks = blocks
        self.child = child

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise linop.DimensionError(f"expected vector of length {self.dim}")
        if self.rule == "zero":
            return 0.0
        if self.rule == "indicator-zero":
            return 0.0 if np.all(x == 0.0) else math.inf
        if self.rule == "box-indicator":
            return 0.0 if np.all((x >= self.lo) & (x <= self.hi)) else math.inf
        if self.rule == "scaled-l12":
            return float(self.kappa * np.sum(self.blocks.block_norms(x)))
        if self.rule == "conjugate-of":
            return _evaluate_conjugate(self.child, x)
        raise UnsupportedEvaluationError(self.rule)


def zero_prox(dim):
    return ProxTerm("zero", dim)


def indicator_zero(dim):
    return ProxTerm("indicator-zero", dim)


def box_indicator(lo, hi, dim):
    if not lo < hi:
        raise ValueError("box bounds must satisfy lo < hi")
    return ProxTerm("box-indicator", dim, lo=float(lo), hi=float(hi))


def scaled_l12(kappa, blocks):
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return ProxTerm("scaled-l12", blocks.dim, kappa=float(kappa), blocks=blocks)


def conjugate_of(child):
    return ProxTerm("conjugate-of", child.dim, child=child)


def _evaluate_conjugate(f, v):
    """Closed-form f*(v) for the catalog."""
    if f.rule == "zero":
        return 0.0 if np.all(v == 0.0) else math.inf
    if f.rule == "indicator-zero":
        return 0.0
    if f.rule == "box-indicator":
        return float(np.sum(np.maximum(f.lo * v, f.hi * v)))
    if f.rule == "scaled-l12":
        # Indicator of the product of Euclidean balls of radius kappa; the
        # relative slack absorbs roundoff from exact-radius projections.
        if np.all(f.blocks.block_norms(v) <= f.kappa * (1.0 + 1e-12)):
            return 0.0
        return math.inf
    if f.rule == "conjugate-of":
        return f.child(v)
    raise UnsupportedEvaluationError(f.rule)


def prox_in_metric(f, U, x):
    """argmin_y f(y) + 1/2 ||x - y||^2_{U^{-1}} for catalog f, diagonal U."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (f.dim,) or U.dim != f.dim:
        raise linop.DimensionError("prox_in_metric: dimension mismatch")
    if f.rule == "zero":
        return x.copy()
    if f.rule == "indicator-zero":
        return np.zeros_like(x)
    if f.rule == "box-indicator":
        # Separable: clamping is exact under any diagonal metric.
        return np.clip(x, f.lo, f.hi)
    if f.rule == "scaled-l12":
        blocks = f.blocks
        if not blocks.is_block_constant(U.weights):
            raise MetricError(
                "scaled-l12 prox needs a metric that is block-constant over "
                "the norm's blocks; no radial closed form otherwise")
        norms = blocks.block_norms(x)
        u_b = U.weights[blocks.first_index]
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(norms > 0.0,
                              np.maximum(0.0, 1.0 - f.kappa * u_b / norms), 0.0)
        return x * factor[blocks.labels]
    if f.rule == "conjugate-of":
        return prox_conjugate_in_metric(f.child, U, x)
    raise UnsupportedEvaluationError(f.rule)


def prox_conjugate_in_metric(f, U, v):
    """prox of f* with weighting U^{-1}, via the generalized Moreau identity

    prox^{U^{-1}}_{f*}(v) = v - U prox^{U}_f(U^{-1} v).

    The zero / indicator-zero conjugate pair is dispatched directly (their
    conjugates are catalog members), keeping those cases exact.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (f.dim,) or U.dim != f.dim:
        raise linop.DimensionError("prox_conjugate_in_metric: dimension mismatch")
    if f.rule == "zero":          # f* is the indicator of {0}
        return np.zeros_like(v)
    if f.rule == "indicator-zero":  # f* is identically 0
        return v.copy()
    return v - U.apply(prox_in_metric(f, U.inverse(), U.inv_apply(v)))


class SmoothTerm:
    """Differentiable convex term: value, gradient, Lipschitz gradient bound.

    ``hessian`` (a LinearMap) is set for the quadratic catalog and enables
    certified metric-weighted curvature bounds.
    """

    def __init__(self, dim, evaluator, gradient, lipschitz, hessian=None):
        self.dim = int(dim)
        self._evaluator = evaluator
        self._gradient = gradient
        self.lipschitz = float(lipschitz)
        self.hessian = hessian
        if self.lipschitz < 0:
            raise ValueError("lipschitz bound must be nonnegative")

    def __call__(self, x):
        return float(self._evaluator(np.asarray(x, dtype=np.float64)))

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise linop.DimensionError(f"expected vector of length {self.dim}")
        return self._gradient(x)


def gradient(h, x):
    """Gradient of a SmoothTerm at x."""
    return h.gradient(x)


def zero_smooth(dim):
    return SmoothTerm(dim, lambda x: 0.0, lambda x: np.zeros_like(x),
                      lipschitz=0.0, hessian=linop.ScaledIdentity(0.0, dim))


def quadratic_around(center, curvature=1.0):
    """h(x) = (curvature/2) ||x - center||^2."""
    center = np.asarray(center, dtype=np.float64)
    a = float(curvature)
    return SmoothTerm(
        center.size,
        lambda x: 0.5 * a * float(np.sum((x - center) ** 2)),
        lambda x: a * (x - center),
        lipschitz=a,
        hessian=linop.ScaledIdentity(a, center.size))


def two_observation_data_term(w1, w2, H, theta1_sq, theta2_sq, H_norm_bound=1.0):
    """h(x) = (1/theta1^2) ||x - w1||^2 + (1/theta2^2) ||H x - w2||^2.

    ``H_norm_bound`` is an attested bound on ||H|| (1 for a normalized
    nonnegative kernel); it only feeds the unweighted Lipschitz field,
    metric-weighted bounds are estimated from the Hessian map.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    n = w1.size
    if H.domain_dim != n or H.codomain_dim != w2.size:
        raise linop.DimensionError("two_observation_data_term: dimension mismatch")
    a1 = 1.0 / float(theta1_sq)
    a2 = 1.0 / float(theta2_sq)

    def value(x):
        r2 = H.apply(x) - w2
        return a1 * float(np.sum((x - w1) ** 2)) + a2 * float(np.sum(r2 ** 2))

    def grad(x):
        return 2.0 * a1 * (x - w1) + 2.0 * a2 * H.adjoint_apply(H.apply(x) - w2)

    # Hessian 2 a1 I + 2 a2 H*H as S*S with S = [sqrt(2 a1) I ; sqrt(2 a2) H].
    S = linop.stack([linop.ScaledIdentity(math.sqrt(2.0 * a1), n),
                     linop.compose(linop.ScaledIdentity(math.sqrt(2.0 * a2), w2.size), H)])
    hessian = linop.compose(S.T, S)
    lip = 2.0 * a1 + 2.0 * a2 * H_norm_bound ** 2
    return SmoothTerm(n, value, grad, lipschitz=lip, hessian=hessian)


def lipschitz_under_metric(h, U, tol=1e-6, max_iter=5000, seed=0):
    """Lipschitz bound for sqrt(U) o grad h o sqrt(U).

    Quadratic catalog terms get a power-iteration estimate of
    ||sqrt(U) Q sqrt(U)|| (upper bound after the safety factor); anything
    else falls back to lipschitz(h) * max(U).
    """
    if U.dim != h.dim:
        raise linop.DimensionError("lipschitz_under_metric: dimension mismatch")
    if h.hessian is not None:
        s = U.sqrt_map()
        M = linop.compose(s, linop.compose(h.hessian, s))
        return linop.estimate_norm(M, tol=tol, max_iter=max_iter, seed=seed).value
    return h.lipschitz * U.max_weight


class InfConvTerm:
    """Strongly convex smoothing term l_i of an infimal convolution g_i [] l_i.

    Catalog: ``indicator-zero`` (the convolution reduces to g_i) and
    ``quadratic`` with l(y) = ||y||^2 / (2 nu), whose conjugate has the
    nu-Lipschitz gradient  grad l*(v) = nu v.
    """

    def __init__(self, kind, nu=0.0):
        if kind not in ("indicator-zero", "quadratic"):
            raise ValueError("kind must be 'indicator-zero' or 'quadratic'")
        if kind == "quadratic" and nu <= 0:
            raise ValueError("quadratic smoothing needs nu > 0")
        self.kind = kind
        self.nu = float(nu) if kind == "quadratic" else 0.0

    @classmethod
    def exact(cls):
        return cls("indicator-zero")

    @classmethod
    def quadratic(cls, nu):
        return cls("quadratic", nu)

    def conjugate_gradient(self, v):
        if self.kind == "indicator-zero":
            return np.zeros_like(v)
        return self.nu * v

    def conjugate_smooth(self, dim):
        """l* as a SmoothTerm, for metric-weighted Lipschitz bounds."""
        if self.kind == "indicator-zero":
            return zero_smooth(dim)
        nu = self.nu
        return SmoothTerm(dim,
                          lambda v: 0.5 * nu * float(np.sum(v ** 2)),
                          lambda v: nu * v,
                          lipschitz=nu,
                          hessian=linop.ScaledIdentity(nu, dim))

    def infconv_value(self, g, t):
        """(g [] l)(t): g(t) exactly, or the Moreau envelope for quadratic l."""
        if self.kind == "indicator-zero":
            return g(t)
        t = np.asarray(t, dtype=np.float64)
        p = prox_in_metric(g, DiagonalMetric.scalar(self.nu, g.dim), t)
        return g(p) + float(np.sum((t - p) ** 2)) / (2.0 * self.nu)
