"""Primal-dual solvers built on the variable-metric forward-backward scheme.

Two explicit algorithm classes are provided (``pd1_step`` / ``pd2_step``)
together with the generic forward-backward engine (``fb_step``), parameter
admissibility validation, error-sequence injection, and a driver with
per-iteration tracing.

Metrics are constant per run; the monotone-metric condition of the
underlying theory is then trivially satisfied and is not re-checked.
"""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import funcs, linop
from .funcs import DiagonalMetric, InfConvTerm, ProxTerm, SmoothTerm
from .linop import LinearMap
from .rng import (STREAM_ERR_A, STREAM_ERR_B, STREAM_ERR_C, STREAM_ERR_D,
                  gaussians)


class InadmissibleError(RuntimeError):
    """Step-size / metric parameters violate the algorithm's admissibility condition."""

    def __init__(self, report):
        super().__init__(report.summary())
        self.report = report


class DivergenceError(RuntimeError):
    """A non-finite value appeared in the iterates."""


class StructuralError(ValueError):
    """The problem shape is incompatible with the requested algorithm."""


# Strict inequalities are enforced with this margin in floating point.
CONDITION_MARGIN = 1e-12


@dataclass
class Block:
    """One composite term (g_i [] l_i)(L_i x - r_i)."""

    g: ProxTerm
    ell: InfConvTerm
    L: LinearMap
    r: np.ndarray


class CompositeProblem:
    """min_x f(x) + sum_i (g_i [] l_i)(L_i x - r_i) + h(x) - <x, z>."""

    def __init__(self, primal_dim, f, h, z, blocks):
        self.primal_dim = int(primal_dim)
        self.f = f
        self.h = h
        self.z = np.asarray(z, dtype=np.float64)
        self.blocks = []
        for g, ell, L, r in blocks:
            r = np.asarray(r, dtype=np.float64)
            if L.domain_dim != self.primal_dim:
                raise linop.DimensionError("block operator domain mismatch")
            if g.dim != L.codomain_dim or r.shape != (L.codomain_dim,):
                raise linop.DimensionError("block codomain mismatch")
            probe = gaussians(7, 11, 0, L.domain_dim)
            if np.linalg.norm(L.apply(probe)) == 0.0:
                raise StructuralError("block operator must be nonzero")
            self.blocks.append(Block(g, ell, L, r))
        if not self.blocks:
            raise StructuralError("at least one composite block is required")
        if f.dim != self.primal_dim or h.dim != self.primal_dim:
            raise linop.DimensionError("f/h dimension mismatch")
        if self.z.shape != (self.primal_dim,):
            raise linop.DimensionError("z dimension mismatch")

    @property
    def m(self):
        return len(self.blocks)

    def dual_dims(self):
        return [b.L.codomain_dim for b in self.blocks]


class ErrorSchedule:
    """Summable perturbation sequences for the prox and gradient evaluations.

    Each term at iteration n is a seeded Gaussian vector scaled by
    rho / (n + 1)**decay; decay must exceed 1 so the norms are summable.
    """

    def __init__(self, rho, seed=0, decay=2.0):
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        if decay <= 1.0:
            raise ValueError("decay must exceed 1 for summability")
        self.rho = float(rho)
        self.seed = int(seed)
        self.decay = float(decay)

    def _draw(self, stream, block, n, dim):
        if self.rho == 0.0:
            return np.zeros(dim)
        scale = self.rho / (n + 1.0) ** self.decay
        start = (block * (1 << 32) + n) * dim
        return scale * gaussians(self.seed, stream, start, dim)

    def primal_prox_error(self, n, dim):
        return self._draw(STREAM_ERR_A, 0, n, dim)

    def primal_grad_error(self, n, dim):
        return self._draw(STREAM_ERR_C, 0, n, dim)

    def dual_prox_error(self, i, n, dim):
        return self._draw(STREAM_ERR_B, i + 1, n, dim)

    def dual_grad_error(self, i, n, dim):
        return self._draw(STREAM_ERR_D, i + 1, n, dim)


_ZERO_SCHEDULE = ErrorSchedule(0.0)


@dataclass
class PDParams:
    """Run parameters: primal metric U, dual metrics U_i, relaxation, stopping."""

    U: DiagonalMetric
    U_i: list
    lam: float = 1.0
    error_injector: ErrorSchedule = None
    max_iter: int = 1000
    stop_tol: float = 0.0
    wall_clock_limit: float = None
    x0: np.ndarray = None
    v0: list = None

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("relaxation parameter must lie in ]0, 1]")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    def errors(self):
        return self.error_injector if self.error_injector is not None else _ZERO_SCHEDULE


@dataclass
class SolverState:
    n: int
    x: np.ndarray
    v: list


def initial_state(problem, params):
    x0 = params.x0
    x = np.zeros(problem.primal_dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (problem.primal_dim,):
        raise linop.DimensionError("x0 dimension mismatch")
    if params.v0 is None:
        v = [np.zeros(d) for d in problem.dual_dims()]
    else:
        v = [np.asarray(vi, dtype=np.float64).copy() for vi in params.v0]
        if [vi.shape[0] for vi in v] != problem.dual_dims():
            raise linop.DimensionError("v0 dimension mismatch")
    return SolverState(n=0, x=x, v=v)


@dataclass
class AdmissibilityReport:
    """Outcome of the step-size condition check for one algorithm class."""

    algorithm: str
    norm_terms: list           # per-block ||sqrt(U_i) L_i sqrt(U)||^2
    mu: float
    nu: list
    delta: float = None        # PD1 only
    zeta: float = None         # PD2 only
    condition_lhs: float = math.inf
    admissible: bool = False
    message: str = ""
    bounds_certified: bool = True

    def summary(self):
        head = f"[{self.algorithm}] admissible={self.admissible}"
        if self.delta is not None:
            head += f" delta={self.delta:.6g}"
        if self.zeta is not None:
            head += f" zeta={self.zeta:.6g}"
        head += f" mu={self.mu:.6g} nu={[f'{v:.6g}' for v in self.nu]}"
        head += f" condition_lhs={self.condition_lhs:.6g}"
        if self.message:
            head += f" ({self.message})"
        return head

    def as_text(self):
        lines = [f"algorithm: {self.algorithm}",
                 f"admissible: {self.admissible}"]
        if self.delta is not None:
            lines.append(f"delta: {self.delta!r}")
        if self.zeta is not None:
            lines.append(f"zeta: {self.zeta!r}")
        lines.append(f"mu: {self.mu!r}")
        lines.append(f"nu: {[float(v) for v in self.nu]!r}")
        lines.append(f"norm_terms: {[float(v) for v in self.norm_terms]!r}")
        lines.append(f"condition_lhs: {self.condition_lhs!r}")
        lines.append(f"bounds_certified: {self.bounds_certified}")
        if self.message:
            lines.append(f"message: {self.message}")
        return "\n".join(lines) + "\n"


def weighted_norm_terms(problem, params, tol=1e-4, max_iter=5000, seed=0):
    """||sqrt(U_i) L_i sqrt(U)||^2 per block, with certification flags."""
    terms = []
    certified = True
    su = params.U.sqrt_map()
    for i, blk in enumerate(problem.blocks):
        sui = params.U_i[i].sqrt_map()
        M = linop.compose(sui, linop.compose(blk.L, su))
        est = linop.estimate_norm(M, tol=tol, max_iter=max_iter, seed=seed)
        terms.append(est.value ** 2)
        certified = certified and est.is_upper_bound
    return terms, certified


def _curvature_bounds(problem, params, tol, max_iter, seed):
    mu = funcs.lipschitz_under_metric(problem.h, params.U,
                                      tol=tol, max_iter=max_iter, seed=seed)
    nu = [funcs.lipschitz_under_metric(blk.ell.conjugate_smooth(blk.L.codomain_dim),
                                       params.U_i[i], tol=tol, max_iter=max_iter, seed=seed)
          for i, blk in enumerate(problem.blocks)]
    return mu, nu


def _check_metric_dims(problem, params):
    if params.U.dim != problem.primal_dim:
        raise linop.DimensionError("primal metric dimension mismatch")
    if len(params.U_i) != problem.m:
        raise ValueError("one dual metric per block is required")
    for Ui, d in zip(params.U_i, problem.dual_dims()):
        if Ui.dim != d:
            raise linop.DimensionError("dual metric dimension mismatch")


def validate_pd1(problem, params, tol=1e-4, max_iter=5000, seed=0):
    """Admissibility of the first algorithm class:

    delta = (sum_i ||sqrt(U_i) L_i sqrt(U)||^2)^{-1/2} - 1 must be positive
    and delta / ((1 + delta) max{mu, nu_1, ..., nu_m}) must exceed 1/2.
    """
    _check_metric_dims(problem, params)
    terms, certified = weighted_norm_terms(problem, params, tol, max_iter, seed)
    mu, nu = _curvature_bounds(problem, params, tol, max_iter, seed)
    delta = sum(terms) ** -0.5 - 1.0
    biggest = max([mu] + nu)
    if biggest > 0.0:
        lhs = delta / ((1.0 + delta) * biggest)
    else:
        lhs = math.inf
    admissible = delta > 0.0 and lhs > 0.5 + CONDITION_MARGIN
    msg = "" if admissible else "step-size condition violated"
    return AdmissibilityReport(algorithm="PD1", norm_terms=terms, mu=mu, nu=nu,
                               delta=delta, condition_lhs=lhs,
                               admissible=admissible, message=msg,
                               bounds_certified=certified)


def validate_pd2(problem, params, tol=1e-4, max_iter=5000, seed=0):
    """Admissibility of the second algorithm class:

    zeta = 1 - sum_i ||sqrt(U_i) L_i sqrt(U)||^2 must be positive,
    zeta / max{zeta mu, nu_1, ..., nu_m} must exceed 1/2, and the
    nonsmooth primal term f must be identically zero.
    """
    _check_metric_dims(problem, params)
    terms, certified = weighted_norm_terms(problem, params, tol, max_iter, seed)
    mu, nu = _curvature_bounds(problem, params, tol, max_iter, seed)
    zeta = 1.0 - sum(terms)
    biggest = max([zeta * mu] + nu)
    if biggest > 0.0:
        lhs = zeta / biggest
    else:
        lhs = math.inf
    admissible = zeta > 0.0 and lhs > 0.5 + CONDITION_MARGIN
    msg = "" if admissible else "step-size condition violated"
    if problem.f.rule != "zero":
        admissible = False
        msg = "this algorithm class requires f = 0"
    return AdmissibilityReport(algorithm="PD2", norm_terms=terms, mu=mu, nu=nu,
                               zeta=zeta, condition_lhs=lhs,
                               admissible=admissible, message=msg,
                               bounds_certified=certified)


def pd1_step(state, problem, params):
    """One iteration of the first primal-dual class.

    p = prox^{U^-1}_f(x - U(sum_i L_i* v_i + grad h(x) + c - z)) + a
    y = 2p - x;  x+ = x + lam (p - x)
    q_i = prox^{U_i^-1}_{g_i*}(v_i + U_i(L_i y - grad l_i*(v_i) - d_i - r_i)) + b_i
    v_i+ = v_i + lam (q_i - v_i)
    """
    errs = params.errors()
    n, x, v = state.n, state.x, state.v
    U = params.U
    lam = params.lam

    pull = sum(blk.L.adjoint_apply(v[i]) for i, blk in enumerate(problem.blocks))
    c = errs.primal_grad_error(n, problem.primal_dim)
    p = funcs.prox_in_metric(
        problem.f, U,
        x - U.apply(pull + problem.h.gradient(x) + c - problem.z))
    p = p + errs.primal_prox_error(n, problem.primal_dim)
    y = 2.0 * p - x
    x_next = x + lam * (p - x)

    v_next = []
    for i, blk in enumerate(problem.blocks):
        Ui = params.U_i[i]
        d = errs.dual_grad_error(i, n, blk.L.codomain_dim)
        q = funcs.prox_conjugate_in_metric(
            blk.g, Ui,
            v[i] + Ui.apply(blk.L.apply(y) - blk.ell.conjugate_gradient(v[i]) - d - blk.r))
        q = q + errs.dual_prox_error(i, n, blk.L.codomain_dim)
        v_next.append(v[i] + lam * (q - v[i]))
    return SolverState(n=n + 1, x=x_next, v=v_next)


def pd2_step(state, problem, params):
    """One iteration of the second primal-dual class (requires f = 0).

    s = x - U(grad h(x) + c - z);  y = s - U sum_i L_i* v_i
    q_i = prox^{U_i^-1}_{g_i*}(v_i + U_i(L_i y - grad l_i*(v_i) - d_i - r_i)) + b_i
    v_i+ = v_i + lam (q_i - v_i)
    p = s - U sum_i L_i* q_i;  x+ = x + lam (p - x)
    """
    if problem.f.rule != "zero":
        raise StructuralError("pd2_step requires the nonsmooth primal term f to be zero")
    errs = params.errors()
    n, x, v = state.n, state.x, state.v
    U = params.U
    lam = params.lam

    c = errs.primal_grad_error(n, problem.primal_dim)
    s = x - U.apply(problem.h.gradient(x) + c - problem.z)
    y = s - U.apply(sum(blk.L.adjoint_apply(v[i]) for i, blk in enumerate(problem.blocks)))

    v_next = []
    qs = []
    for i, blk in enumerate(problem.blocks):
        Ui = params.U_i[i]
        d = errs.dual_grad_error(i, n, blk.L.codomain_dim)
        q = funcs.prox_conjugate_in_metric(
            blk.g, Ui,
            v[i] + Ui.apply(blk.L.apply(y) - blk.ell.conjugate_gradient(v[i]) - d - blk.r))
        q = q + errs.dual_prox_error(i, n, blk.L.codomain_dim)
        qs.append(q)
        v_next.append(v[i] + lam * (q - v[i]))

    p = s - U.apply(sum(blk.L.adjoint_apply(qs[i]) for i, blk in enumerate(problem.blocks)))
    x_next = x + lam * (p - x)
    return SolverState(n=n + 1, x=x_next, v=v_next)


def _metric_apply(V, vec):
    if isinstance(V, DiagonalMetric):
        return V.apply(vec)
    if isinstance(V, LinearMap):
        return V.apply(vec)
    return V(vec)


def fb_step(x, B_apply, resolvent, V, gamma, lam, a=None, b=None, beta=None):
    """One relaxed forward-backward step in the metric V:

    y = x - gamma V (B(x) + b);  return x + lam (resolvent(gamma, V, y) + a - x)

    ``V`` may be a DiagonalMetric or any LinearMap (the product-space
    metrics of the primal-dual constructions are not diagonal).  ``beta``
    is the caller-attested cocoercivity constant of B in the metric; when
    given, gamma must lie in ]0, 2 beta[.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 < lam <= 1.0:
        raise ValueError("relaxation parameter must lie in ]0, 1]")
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    if beta is not None and not gamma < 2.0 * beta:
        raise ValueError("gamma must be below twice the cocoercivity constant")
    a = np.zeros_like(x) if a is None else np.asarray(a, dtype=np.float64)
    bx = np.asarray(B_apply(x), dtype=np.float64)
    if b is not None:
        bx = bx + np.asarray(b, dtype=np.float64)
    y = x - gamma * _metric_apply(V, bx)
    return x + lam * (np.asarray(resolvent(gamma, V, y), dtype=np.float64) + a - x)


class ProductSpaceFB:
    """Theorem-level forward-backward on the product space H x G_1 x ... x G_m,
    using the first-class (non-diagonal) metric of the PD1 construction.

    The metric inverse is materialized densely, so this path is limited to
    small instances; it exists as a runtime cross-check of the explicit
    primal-dual forms.
    """

    def __init__(self, problem, params, dim_limit=2048):
        dims = [problem.primal_dim] + problem.dual_dims()
        total = sum(dims)
        if total > dim_limit:
            raise StructuralError(
                f"product-space engine materializes a dense {total}x{total} metric; "
                f"limit is {dim_limit}")
        self.problem = problem
        self.params = params
        self.dims = dims
        self.total = total
        n = problem.primal_dim
        Vinv = np.zeros((total, total))
        Vinv[:n, :n] = np.diag(1.0 / params.U.weights)
        off = n
        for i, blk in enumerate(problem.blocks):
            d = blk.L.codomain_dim
            Ld = linop.to_dense(blk.L)
            Vinv[off:off + d, off:off + d] = np.diag(1.0 / params.U_i[i].weights)
            Vinv[:n, off:off + d] = -Ld.T
            Vinv[off:off + d, :n] = -Ld
            off += d
        self.V = linop.Dense(np.linalg.inv(Vinv))

    def join(self, x, v):
        return np.concatenate([x] + list(v))

    def split(self, w):
        parts = []
        off = 0
        for d in self.dims:
            parts.append(w[off:off + d])
            off += d
        return parts[0], parts[1:]

    def B_apply(self, w):
        x, v = self.split(w)
        out = [self.problem.h.gradient(x)]
        for i, blk in enumerate(self.problem.blocks):
            out.append(blk.ell.conjugate_gradient(v[i]))
        return np.concatenate(out)

    def resolvent(self, gamma, V, w):
        """J_{gamma V A} evaluated in two exact stages (primal prox, then dual)."""
        y_x, y_v = self.split(w)
        pb = self.problem
        U = self.params.U.scaled(gamma)
        pull = sum(blk.L.adjoint_apply(y_v[i]) for i, blk in enumerate(pb.blocks))
        x_plus = funcs.prox_in_metric(pb.f, U, y_x + U.apply(pb.z - pull))
        out = [x_plus]
        for i, blk in enumerate(pb.blocks):
            Ui = self.params.U_i[i].scaled(gamma)
            t = y_v[i] + Ui.apply(blk.L.apply(2.0 * x_plus - y_x) - blk.r)
            out.append(funcs.prox_conjugate_in_metric(blk.g, Ui, t))
        return np.concatenate(out)

    def step(self, state):
        errs = self.params.errors()
        n = state.n
        a = np.concatenate(
            [errs.primal_prox_error(n, self.problem.primal_dim)]
            + [errs.dual_prox_error(i, n, d) for i, d in enumerate(self.problem.dual_dims())])
        b = np.concatenate(
            [errs.primal_grad_error(n, self.problem.primal_dim)]
            + [errs.dual_grad_error(i, n, d) for i, d in enumerate(self.problem.dual_dims())])
        w = self.join(state.x, state.v)
        w_next = fb_step(w, self.B_apply, self.resolvent, self.V,
                         gamma=1.0, lam=self.params.lam, a=a, b=b)
        x, v = self.split(w_next)
        return SolverState(n=n + 1, x=x, v=list(v))


@dataclass
class TraceRecord:
    n: int
    wall_time_s: float
    rel_change: float
    objective: float = None
    dist_to_ref: float = None
    snr: float = None


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and rec.n <= self.records[-1].n:
            raise ValueError("trace iteration numbers must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path, include_time=False):
        """Write the trace; wall times are omitted by default so that runs
        with a fixed seed produce byte-identical files."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "time_s", "rel_change", "objective",
                        "dist_to_ref", "snr"])
            for r in self.records:
                w.writerow([
                    r.n,
                    _fmt(r.wall_time_s) if include_time else "",
                    _fmt(r.rel_change),
                    _fmt(r.objective),
                    _fmt(r.dist_to_ref),
                    _fmt(r.snr),
                ])


def _fmt(v):
    return "" if v is None else repr(float(v))


@dataclass
class Diagnostics:
    """Optional per-iteration measurements for the driver."""

    record_objective: bool = False
    reference: np.ndarray = None       # distance-to-reference target
    snr_reference: np.ndarray = None   # ground-truth image for SNR logging


def objective(problem, x):
    """Exact primal objective; +inf when an indicator constraint is violated."""
    x = np.asarray(x, dtype=np.float64)
    total = problem.f(x)
    for blk in problem.blocks:
        total += blk.ell.infconv_value(blk.g, blk.L.apply(x) - blk.r)
        if math.isinf(total):
            return math.inf
    total += problem.h(x)
    total -= float(x @ problem.z)
    return total


_STEPPERS = {"PD1": pd1_step, "PD2": pd2_step}
_VALIDATORS = {"PD1": validate_pd1, "PD2": validate_pd2, "FB": validate_pd1}


def validate(algorithm, problem, params, **kw):
    try:
        v = _VALIDATORS[algorithm.upper()]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    return v(problem, params, **kw)


def run(algorithm, problem, params, diagnostics=None, force=False):
    """Iterate the chosen algorithm until stop_tol, max_iter or wall clock.

    Returns (final SolverState, SolverTrace).  Raises InadmissibleError when
    validation fails (unless ``force``) and DivergenceError on non-finite
    iterates.
    """
    algorithm = algorithm.upper()
    report = validate(algorithm, problem, params)
    if not report.admissible and not force:
        raise InadmissibleError(report)
    diag = diagnostics if diagnostics is not None else Diagnostics()

    if algorithm == "FB":
        engine = ProductSpaceFB(problem, params)
        stepper = engine.step
    else:
        step_fn = _STEPPERS[algorithm]

        def stepper(st):
            return step_fn(st, problem, params)

    state = initial_state(problem, params)
    trace = SolverTrace()
    t0 = time.perf_counter()
    ref = diag.reference
    ref_norm = float(np.linalg.norm(ref)) if ref is not None else None

    for _ in range(params.max_iter):
        prev_x = state.x
        state = stepper(state)
        if not (np.all(np.isfinite(state.x))
                and all(np.all(np.isfinite(vi)) for vi in state.v)):
            raise DivergenceError(f"non-finite iterate at iteration {state.n}")
        rel = float(np.linalg.norm(state.x - prev_x) / max(np.linalg.norm(prev_x), 1.0))
        rec = TraceRecord(n=state.n,
                          wall_time_s=time.perf_counter() - t0,
                          rel_change=rel)
        if diag.record_objective:
            rec.objective = objective(problem, state.x)
        if ref is not None:
            rec.dist_to_ref = float(np.linalg.norm(state.x - ref) / max(ref_norm, 1.0))
        if diag.snr_reference is not None:
            rec.snr = _snr_db(diag.snr_reference, state.x)
        trace.append(rec)
        # stop_tol <= 0 disables the change criterion (the primal component
        # can stall for one iteration while the duals still move).
        if params.stop_tol > 0.0 and rel <= params.stop_tol:
            break
        if params.wall_clock_limit is not None and rec.wall_time_s >= params.wall_clock_limit:
            break
    return state, trace


def _snr_db(reference, x):
    err = float(np.linalg.norm(x - reference))
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(float(np.linalg.norm(reference)) / err)
