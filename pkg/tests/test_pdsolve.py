import math

import numpy as np
import pytest
from scipy import optimize

from vmpd import funcs, imaging, linop, pdsolve


def kkt_problem():
    """min 1/2 (x - 4)^2 + i_[0,2](x), solution x* = 2 with multiplier v* = 2."""
    return pdsolve.CompositeProblem(
        1, funcs.zero_prox(1), funcs.quadratic_around(np.array([4.0])), np.zeros(1),
        [(funcs.box_indicator(0.0, 2.0, 1), funcs.InfConvTerm.exact(),
          linop.Identity(1), np.zeros(1))])


def kkt_params(**kw):
    base = dict(U=funcs.DiagonalMetric.scalar(0.5, 1),
                U_i=[funcs.DiagonalMetric.scalar(0.5, 1)],
                max_iter=2000)
    base.update(kw)
    return pdsolve.PDParams(**base)


def tv_problem(size=8, kappa=0.15, seed=2):
    scene = imaging.test_scene(size, size)
    w1, w2, blur = imaging.degrade_pair(scene, imaging.uniform_kernel(3),
                                        576.0, 25.0, seed=seed)
    prob = imaging.build_restoration_problem(w1, w2, blur, 576.0, 25.0, kappa)
    U, U_i = imaging.scalar_metrics(16.0, 0.0296875, 0.0037109375, size * size)
    return prob, U, U_i, w1


# --- problem construction -----------------------------------------------------

def test_problem_rejects_zero_operator_and_bad_dims():
    f = funcs.zero_prox(2)
    h = funcs.zero_smooth(2)
    with pytest.raises(pdsolve.StructuralError):
        pdsolve.CompositeProblem(2, f, h, np.zeros(2),
                                 [(funcs.zero_prox(2), funcs.InfConvTerm.exact(),
                                   linop.ScaledIdentity(0.0, 2), np.zeros(2))])
    with pytest.raises(pdsolve.StructuralError):
        pdsolve.CompositeProblem(2, f, h, np.zeros(2), [])
    with pytest.raises(linop.DimensionError):
        pdsolve.CompositeProblem(2, f, h, np.zeros(3),
                                 [(funcs.zero_prox(2), funcs.InfConvTerm.exact(),
                                   linop.Identity(2), np.zeros(2))])


def test_error_schedule_validation():
    with pytest.raises(ValueError):
        pdsolve.ErrorSchedule(-0.1)
    with pytest.raises(ValueError):
        pdsolve.ErrorSchedule(0.1, decay=1.0)
    sched = pdsolve.ErrorSchedule(0.5, seed=1, decay=2.0)
    # norms decay like (n+1)^-2, hence summable
    n0 = np.linalg.norm(sched.primal_prox_error(0, 4))
    n3 = np.linalg.norm(sched.primal_prox_error(3, 4))
    assert n3 < n0
    assert np.array_equal(sched.primal_prox_error(2, 4), sched.primal_prox_error(2, 4))


# --- validators ----------------------------------------------------------------

def scalar_case_problem(norm_L=2.0, curvature=0.0, nu=None):
    """m = 1 with ||L1|| = norm_L exactly; optional h curvature and ell."""
    dim = 2
    f = funcs.zero_prox(dim)
    h = funcs.quadratic_around(np.zeros(dim), curvature) if curvature else funcs.zero_smooth(dim)
    ell = funcs.InfConvTerm.quadratic(nu) if nu else funcs.InfConvTerm.exact()
    L = linop.ScaledIdentity(norm_L, dim)
    return pdsolve.CompositeProblem(dim, f, h, np.zeros(dim),
                                    [(funcs.box_indicator(0, 1, dim), ell, L, np.zeros(dim))])


def test_validate_pd1_scalar_delta_formula():
    # tau = sigma = 1/4, ||L|| = 2: delta = (tau sigma ||L||^2)^(-1/2) - 1 = 1
    prob = scalar_case_problem()
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.25, 2),
                              U_i=[funcs.DiagonalMetric.scalar(0.25, 2)], max_iter=1)
    rep = pdsolve.validate_pd1(prob, params, tol=1e-7)
    dense_norm = np.linalg.svd(linop.to_dense(
        linop.compose(params.U_i[0].sqrt_map(),
                      linop.compose(prob.blocks[0].L, params.U.sqrt_map()))),
        compute_uv=False)[0]
    delta_oracle = dense_norm ** -1 - 1.0
    assert abs(rep.delta - delta_oracle) < 1e-5
    assert rep.admissible  # mu = nu = 0, so delta > 0 suffices
    assert rep.condition_lhs == math.inf


def test_validate_pd1_boundary_half_not_admissible():
    # mu = nu = 1 at delta = 1 puts the lhs exactly at the strict boundary 1/2
    prob = scalar_case_problem(curvature=4.0, nu=4.0)
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.25, 2),
                              U_i=[funcs.DiagonalMetric.scalar(0.25, 2)], max_iter=1)
    rep = pdsolve.validate_pd1(prob, params, tol=1e-7)
    assert abs(rep.mu - 1.0) < 1e-5 and abs(rep.nu[0] - 1.0) < 1e-5
    assert abs(rep.condition_lhs - 0.5) < 1e-4
    assert not rep.admissible


def test_validate_pd1_delta_zero_not_admissible():
    # tau sigma ||L||^2 = 1 -> delta = 0
    prob = scalar_case_problem()
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.5, 2),
                              U_i=[funcs.DiagonalMetric.scalar(0.5, 2)], max_iter=1)
    rep = pdsolve.validate_pd1(prob, params, tol=1e-7)
    assert rep.delta <= 1e-4
    assert not rep.admissible


def test_validate_pd2_reduces_to_mu_below_two():
    # all ell exact (nu = 0): admissible iff zeta > 0 and 1/mu > 1/2
    for curv, expect in ((1.0, True), (9.0, False)):
        prob = scalar_case_problem(curvature=curv)
        params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.25, 2),
                                  U_i=[funcs.DiagonalMetric.scalar(0.25, 2)], max_iter=1)
        rep = pdsolve.validate_pd2(prob, params, tol=1e-7)
        mu = rep.mu
        assert abs(rep.condition_lhs - 1.0 / mu) < 1e-9
        assert rep.admissible == expect == (mu < 2.0)


def test_validate_pd2_zeta_zero_not_admissible():
    prob = scalar_case_problem()
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.5, 2),
                              U_i=[funcs.DiagonalMetric.scalar(0.5, 2)], max_iter=1)
    rep = pdsolve.validate_pd2(prob, params, tol=1e-7)
    assert rep.zeta <= 1e-4
    assert not rep.admissible


def test_validate_pd2_rejects_nonzero_f():
    dim = 2
    prob = pdsolve.CompositeProblem(
        dim, funcs.box_indicator(0, 1, dim), funcs.zero_smooth(dim), np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.1, dim),
                              U_i=[funcs.DiagonalMetric.scalar(0.1, dim)], max_iter=1)
    rep = pdsolve.validate_pd2(prob, params)
    assert not rep.admissible
    assert "f = 0" in rep.message


def test_admissibility_monotone_under_metric_shrink():
    prob = scalar_case_problem(curvature=1.0)
    U = funcs.DiagonalMetric.scalar(0.25, 2)
    Ui = funcs.DiagonalMetric.scalar(0.25, 2)
    rep = pdsolve.validate_pd1(prob, pdsolve.PDParams(U=U, U_i=[Ui], max_iter=1))
    for s in (0.5, 0.1):
        shr = pdsolve.validate_pd1(
            prob, pdsolve.PDParams(U=U.scaled(s), U_i=[Ui.scaled(s)], max_iter=1))
        assert shr.delta > rep.delta
        if rep.admissible:
            assert shr.admissible or shr.condition_lhs > rep.condition_lhs


# --- steps ----------------------------------------------------------------------

def test_pd1_step_kkt_fixed_point():
    prob, params = kkt_problem(), kkt_params()
    st = pdsolve.SolverState(0, np.array([2.0]), [np.array([2.0])])
    out = pdsolve.pd1_step(st, prob, params)
    assert abs(out.x[0] - 2.0) <= 1e-12
    assert abs(out.v[0][0] - 2.0) <= 1e-12


def test_pd2_step_kkt_fixed_point():
    prob, params = kkt_problem(), kkt_params()
    st = pdsolve.SolverState(0, np.array([2.0]), [np.array([2.0])])
    out = pdsolve.pd2_step(st, prob, params)
    assert abs(out.x[0] - 2.0) <= 1e-12
    assert abs(out.v[0][0] - 2.0) <= 1e-12


def test_pd1_step_stationary_free_problem():
    dim = 3
    prob = pdsolve.CompositeProblem(
        dim, funcs.zero_prox(dim), funcs.zero_smooth(dim), np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(1.0, dim),
                              U_i=[funcs.DiagonalMetric.scalar(0.5, dim)], max_iter=1)
    st = pdsolve.SolverState(0, np.array([1.0, -2.0, 3.0]), [np.zeros(dim)])
    out = pdsolve.pd1_step(st, prob, params)
    assert np.array_equal(out.x, st.x)


def test_pd1_injected_prox_error_shifts_x_linearly():
    prob = kkt_problem()
    lam = 0.7
    eps = 1e-3

    class OneShot(pdsolve.ErrorSchedule):
        def primal_prox_error(self, n, dim):
            e = np.zeros(dim)
            e[0] = eps
            return e

    clean = pdsolve.pd1_step(pdsolve.SolverState(0, np.array([0.5]), [np.array([0.1])]),
                             prob, kkt_params(lam=lam))
    noisy = pdsolve.pd1_step(pdsolve.SolverState(0, np.array([0.5]), [np.array([0.1])]),
                             prob, kkt_params(lam=lam, error_injector=OneShot(0.0)))
    assert abs((noisy.x[0] - clean.x[0]) - lam * eps) <= 1e-15


def test_pd2_step_rejects_nonzero_f():
    dim = 1
    prob = pdsolve.CompositeProblem(
        dim, funcs.box_indicator(0, 2, dim), funcs.zero_smooth(dim), np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    with pytest.raises(pdsolve.StructuralError):
        pdsolve.pd2_step(pdsolve.SolverState(0, np.zeros(1), [np.zeros(1)]),
                         prob, kkt_params())


def test_pd2_dual_collapses_with_zero_g():
    # h = 0, z = 0, g = zero: q = 0 every step, x never moves
    dim = 2
    prob = pdsolve.CompositeProblem(
        dim, funcs.zero_prox(dim), funcs.zero_smooth(dim), np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(0.9, dim),
                              U_i=[funcs.DiagonalMetric.scalar(0.9, dim)], max_iter=2)
    st = pdsolve.SolverState(0, np.array([1.0, -1.0]), [np.array([0.7, 0.3])])
    s1 = pdsolve.pd2_step(st, prob, params)
    assert np.array_equal(s1.x, st.x)
    assert np.array_equal(s1.v[0], np.zeros(dim))  # lam = 1: v jumps to q = 0
    s2 = pdsolve.pd2_step(s1, prob, params)
    assert np.array_equal(s2.x, s1.x)
    assert np.array_equal(s2.v[0], np.zeros(dim))


def test_pd_steps_all_zero_problem_stationary():
    dim = 2
    prob = pdsolve.CompositeProblem(
        dim, funcs.zero_prox(dim), funcs.zero_smooth(dim), np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    params = pdsolve.PDParams(U=funcs.DiagonalMetric.scalar(1.0, dim),
                              U_i=[funcs.DiagonalMetric.scalar(0.5, dim)], max_iter=1)
    st = pdsolve.SolverState(0, np.array([0.3, -0.4]), [np.zeros(dim)])
    assert np.array_equal(pdsolve.pd2_step(st, prob, params).x, st.x)
    assert np.array_equal(pdsolve.pd1_step(st, prob, params).x, st.x)


# --- fb_step ---------------------------------------------------------------------

def test_fb_step_identity_when_operator_zero():
    x = np.array([1.0, 2.0])
    out = pdsolve.fb_step(x, lambda v: np.zeros_like(v),
                          lambda g, V, y: y, funcs.DiagonalMetric.scalar(1.0, 2),
                          gamma=1.0, lam=1.0)
    assert np.array_equal(out, x)


def test_fb_step_projected_gradient_hand_case():
    # A = subdifferential of i_[0,1], B = grad of 1/2 (. - 2)^2, x = 0:
    # y = 0 - 1*(0 - 2) = 2, clamp -> 1
    out = pdsolve.fb_step(np.array([0.0]), lambda v: v - 2.0,
                          lambda g, V, y: np.clip(y, 0.0, 1.0),
                          funcs.DiagonalMetric.scalar(1.0, 1), gamma=1.0, lam=1.0)
    assert np.array_equal(out, [1.0])


def test_fb_step_relaxation_halves_displacement():
    x = np.array([0.0])
    full = pdsolve.fb_step(x, lambda v: v - 2.0,
                           lambda g, V, y: np.clip(y, 0.0, 1.0),
                           funcs.DiagonalMetric.scalar(1.0, 1), gamma=1.0, lam=1.0)
    half = pdsolve.fb_step(x, lambda v: v - 2.0,
                           lambda g, V, y: np.clip(y, 0.0, 1.0),
                           funcs.DiagonalMetric.scalar(1.0, 1), gamma=1.0, lam=0.5)
    assert abs(half[0] - 0.5 * full[0]) <= 1e-15


def test_fb_step_rejects_bad_gamma_and_lambda():
    x = np.zeros(1)
    ident = lambda g, V, y: y
    B = lambda v: v
    V = funcs.DiagonalMetric.scalar(1.0, 1)
    with pytest.raises(ValueError):
        pdsolve.fb_step(x, B, ident, V, gamma=0.0, lam=1.0)
    with pytest.raises(ValueError):
        pdsolve.fb_step(x, B, ident, V, gamma=1.0, lam=0.0)
    with pytest.raises(ValueError):
        pdsolve.fb_step(x, B, ident, V, gamma=2.0, lam=1.0, beta=1.0)
    pdsolve.fb_step(x, B, ident, V, gamma=1.9, lam=1.0, beta=1.0)


# --- product-space consistency ------------------------------------------------------

def product_instance():
    Lmat = np.array([[1.0, 0.4], [-0.3, 0.8]])
    B = funcs.BlockStructure([(0, 1)], 2)
    prob = pdsolve.CompositeProblem(
        2, funcs.box_indicator(0.0, 1.0, 2),
        funcs.quadratic_around(np.array([2.0, -1.0]), 0.8),
        np.array([0.1, -0.2]),
        [(funcs.scaled_l12(0.7, B), funcs.InfConvTerm.quadratic(0.3),
          linop.Dense(Lmat), np.array([0.05, 0.0]))])
    params = pdsolve.PDParams(U=funcs.DiagonalMetric(np.array([0.5, 0.35])),
                              U_i=[funcs.DiagonalMetric(np.array([0.4, 0.4]),
                                                        block_constant_over=B)],
                              lam=1.0, max_iter=1)
    return prob, params


def brute_force_resolvent(prob, params):
    """J_{gamma V A} solved stage-wise with scipy minimizers (independent of
    the library's prox catalog)."""
    L = prob.blocks[0].L
    kappa = prob.blocks[0].g.kappa
    r = prob.blocks[0].r

    def resolvent(gamma, V, y):
        y_x, y_v = y[:2], y[2:]
        t = y_x + gamma * params.U.apply(prob.z - L.adjoint_apply(y_v))
        w = 1.0 / (gamma * params.U.weights)
        res1 = optimize.minimize(lambda x: 0.5 * np.sum(w * (t - x) ** 2),
                                 np.clip(t, 0, 1), bounds=[(0, 1), (0, 1)],
                                 method="L-BFGS-B",
                                 options={"ftol": 1e-16, "gtol": 1e-14})
        x_plus = res1.x
        s = y_v + gamma * params.U_i[0].apply(L.apply(2 * x_plus - y_x) - r)
        wi = 1.0 / (gamma * params.U_i[0].weights)
        cons = [{"type": "ineq", "fun": lambda v: kappa ** 2 - v @ v}]
        v0 = s * min(1.0, kappa / max(np.linalg.norm(s), 1e-12)) * 0.99
        res2 = optimize.minimize(lambda v: 0.5 * np.sum(wi * (s - v) ** 2), v0,
                                 constraints=cons, method="SLSQP",
                                 options={"ftol": 1e-18, "maxiter": 500})
        return np.concatenate([x_plus, res2.x])

    return resolvent


def test_pd1_step_equals_product_space_fb_step():
    prob, params = product_instance()
    x0 = np.array([0.3, 0.9])
    v0 = np.array([0.2, -0.5])
    out = pdsolve.pd1_step(pdsolve.SolverState(0, x0.copy(), [v0.copy()]), prob, params)

    engine = pdsolve.ProductSpaceFB(prob, params)
    w = engine.join(x0, [v0])
    w_next = pdsolve.fb_step(w, engine.B_apply, brute_force_resolvent(prob, params),
                             engine.V, gamma=1.0, lam=1.0)
    diff = max(np.max(np.abs(out.x - w_next[:2])), np.max(np.abs(out.v[0] - w_next[2:])))
    assert diff <= 1e-6


def test_run_fb_agrees_with_run_pd1():
    prob, params = product_instance()
    params_run = pdsolve.PDParams(U=params.U, U_i=params.U_i, lam=0.9, max_iter=50,
                                  x0=np.array([0.3, 0.9]))
    st_fb, _ = pdsolve.run("FB", prob, params_run, force=True)
    st_pd, _ = pdsolve.run("PD1", prob, params_run, force=True)
    assert np.allclose(st_fb.x, st_pd.x, atol=1e-10)
    assert np.allclose(st_fb.v[0], st_pd.v[0], atol=1e-10)


def test_product_space_engine_guards_dimension():
    prob, _, _, w1 = tv_problem(size=8)
    U, U_i = imaging.scalar_metrics(1.0, 0.1, 0.01, 64)
    params = pdsolve.PDParams(U=U, U_i=U_i, max_iter=1)
    with pytest.raises(pdsolve.StructuralError):
        pdsolve.ProductSpaceFB(prob, params, dim_limit=100)


# --- run -----------------------------------------------------------------------

def test_run_kkt_both_algorithms_reach_solution():
    prob = kkt_problem()
    for alg in ("PD1", "PD2"):
        st, trace = pdsolve.run(alg, prob, kkt_params(x0=np.zeros(1)))
        assert abs(st.x[0] - 2.0) <= 1e-8, alg
        assert len(trace) == 2000


def test_run_zero_iterations_returns_initial_state():
    prob = kkt_problem()
    params = kkt_params(max_iter=0, stop_tol=math.inf, x0=np.array([0.25]))
    st, trace = pdsolve.run("PD2", prob, params)
    assert st.n == 0
    assert np.array_equal(st.x, [0.25])
    assert len(trace) == 0


def test_run_stops_on_relative_change():
    prob = kkt_problem()
    st, trace = pdsolve.run("PD2", prob, kkt_params(stop_tol=1e-6, x0=np.zeros(1)))
    assert len(trace) < 2000
    assert trace.records[-1].rel_change <= 1e-6


def test_run_rejects_inadmissible_unless_forced():
    prob = kkt_problem()
    bad = kkt_params(U=funcs.DiagonalMetric.scalar(3.0, 1),
                     U_i=[funcs.DiagonalMetric.scalar(3.0, 1)], max_iter=5)
    with pytest.raises(pdsolve.InadmissibleError) as exc:
        pdsolve.run("PD2", prob, bad)
    assert exc.value.report.zeta <= 0
    pdsolve.run("PD2", prob, bad, force=True)  # force path still runs


def test_run_detects_divergence():
    dim = 1
    blowup = funcs.SmoothTerm(dim, lambda x: 0.0,
                              lambda x: np.array([np.inf]),
                              lipschitz=0.0)
    prob = pdsolve.CompositeProblem(
        dim, funcs.zero_prox(dim), blowup, np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    params = kkt_params(max_iter=10, x0=np.array([1.0]))
    with pytest.raises(pdsolve.DivergenceError):
        pdsolve.run("PD2", prob, params, force=True)


def test_run_limit_invariant_under_relaxation():
    prob = kkt_problem()
    limits = []
    for lam in (0.4, 0.7, 1.0):
        st, _ = pdsolve.run("PD1", prob, kkt_params(lam=lam, max_iter=6000, x0=np.zeros(1)))
        limits.append(st.x[0])
    assert max(limits) - min(limits) <= 1e-8


def test_run_error_robustness_kkt():
    prob = kkt_problem()
    clean, _ = pdsolve.run("PD1", prob, kkt_params(max_iter=5000, x0=np.zeros(1)))
    for rho in (0.05, 0.1):
        noisy, _ = pdsolve.run(
            "PD1", prob,
            kkt_params(max_iter=5000, x0=np.zeros(1),
                       error_injector=pdsolve.ErrorSchedule(rho, seed=11)))
        rel = abs(noisy.x[0] - clean.x[0]) / max(abs(clean.x[0]), 1.0)
        assert rel <= 1e-4


def test_fixed_point_satisfies_optimality_inclusions():
    prob = kkt_problem()
    st, _ = pdsolve.run("PD1", prob, kkt_params(max_iter=4000, x0=np.zeros(1)))
    x, v = st.x, st.v[0]
    # primal: 0 in grad h(x) + L* v  (f = 0)
    assert abs(prob.h.gradient(x)[0] + v[0]) <= 1e-8
    # dual: v in subdiff g(Lx - r)  <=>  Lx - r = prox_g(Lx - r + v)
    t = prob.blocks[0].L.apply(x) - prob.blocks[0].r
    back = funcs.prox_in_metric(prob.blocks[0].g,
                                funcs.DiagonalMetric.scalar(1.0, 1), t + v)
    assert abs(back[0] - t[0]) <= 1e-8


def test_cross_algorithm_agreement_small_tv():
    prob, U, U_i, w1 = tv_problem(size=8)
    ref, _ = pdsolve.run("PD2", prob,
                         pdsolve.PDParams(U=U, U_i=U_i, max_iter=6000, x0=w1.pixels))
    U1, U1_i = imaging.scalar_metrics(4.0, 0.3 / 4, 0.3 / 32, 64)
    st1, _ = pdsolve.run("PD1", prob,
                         pdsolve.PDParams(U=U1, U_i=U1_i, max_iter=6000, x0=w1.pixels))
    rel = np.linalg.norm(st1.x - ref.x) / np.linalg.norm(ref.x)
    assert rel <= 1e-5


# --- objective / trace ------------------------------------------------------------

def test_objective_values():
    prob, _, _, w1 = tv_problem(size=8)
    inside = np.clip(w1.pixels, 0.0, 255.0)
    val = pdsolve.objective(prob, inside)
    assert math.isfinite(val)
    # independent evaluation of every term
    blur_term = prob.h(inside)
    g2 = prob.blocks[1]
    tv = g2.g(g2.L.apply(inside))
    assert abs(val - (blur_term + tv)) <= 1e-9 * max(1.0, abs(val))
    outside = inside.copy()
    outside[0] = 300.0
    assert pdsolve.objective(prob, outside) == math.inf


def test_objective_zero_problem():
    dim = 2
    prob = pdsolve.CompositeProblem(
        dim, funcs.zero_prox(dim), funcs.zero_smooth(dim), np.zeros(dim),
        [(funcs.zero_prox(dim), funcs.InfConvTerm.exact(), linop.Identity(dim),
          np.zeros(dim))])
    assert pdsolve.objective(prob, np.array([5.0, -3.0])) == 0.0


def test_trace_csv_round_trip(tmp_path):
    prob = kkt_problem()
    diag = pdsolve.Diagnostics(record_objective=True, reference=np.array([1.5]))
    st, trace = pdsolve.run("PD2", prob, kkt_params(max_iter=5, x0=np.zeros(1)), diag)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,time_s,rel_change,objective,dist_to_ref,snr"
    assert len(lines) == 6
    first = lines[1].split(",")
    assert first[0] == "1"
    assert first[1] == ""          # wall time suppressed by default
    assert first[5] == ""          # snr diagnostic off
    assert float(first[4]) > 0.0   # dist_to_ref populated
    # wall times opt-in
    trace.to_csv(path, include_time=True)
    assert path.read_text().splitlines()[1].split(",")[1] != ""


def test_trace_requires_increasing_iterations():
    tr = pdsolve.SolverTrace()
    tr.append(pdsolve.TraceRecord(1, 0.0, 1.0))
    with pytest.raises(ValueError):
        tr.append(pdsolve.TraceRecord(1, 0.0, 0.5))
