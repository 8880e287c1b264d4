"""Tests for the Gauss-Newton path-following solver."""

import numpy as np
import pytest

from snledm.model import generate, with_bounds
from snledm.operators import smat
from snledm.pipeline import prepare
from snledm.relax import PrimalDualPoint
from snledm.solve import (
    IterationTrace,
    SolveError,
    SolverConfig,
    gauss_newton_step,
    init_feasible,
    least_squares_min_norm,
    relative_gap,
    solve,
    step_length,
)


def dense_instance(seed=5, n=10, m=4, noise=0.0):
    return generate(r=2, n=n, m=m, radio_range=10.0, density=1.0,
                    noise_sigma=noise, square_half_width=0.5, seed=seed)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(sigma=0.0)
    with pytest.raises(ValueError):
        SolverConfig(ftb=1.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)


def test_init_feasible_no_bounds():
    f = prepare(dense_instance(), kind="quadratic", cliques="none").formulation
    p, exterior = init_feasible(f)
    assert np.all(p.x == 0)
    s_u, s_l, z = f.slacks(p.x, p.y)
    assert np.linalg.eigvalsh(z)[0] > 0
    assert s_u.size == 0 and s_l.size == 0
    # deterministic
    p2, _ = init_feasible(f)
    assert np.array_equal(p.y, p2.y)


def test_init_feasible_with_bounds():
    inst = dense_instance()
    # bounds on a couple of pairs, consistent with the truth
    p_true = inst.points()
    d2 = float(np.sum((p_true[0] - p_true[3]) ** 2))
    inst = with_bounds(inst, [(0, 3, 4.0 * d2)], [(0, 3, 0.1 * d2)])
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    p, _ = init_feasible(f)
    s_u, s_l, z = f.slacks(p.x, p.y)
    assert np.all(s_u > 0) and np.all(s_l > 0)
    assert np.all(p.lam_u == 1.0) and np.all(p.lam_l == 1.0)


def test_init_feasible_contradictory_bounds():
    inst = dense_instance()
    # the same pair bounded above by less than it is bounded below
    inst = with_bounds(inst, [(0, 3, 0.05)], [(0, 4, 50.0)])
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    with pytest.raises(SolveError, match="contradictory"):
        init_feasible(f)


def test_step_length_rules():
    f = prepare(dense_instance(), kind="quadratic", cliques="none").formulation
    p, _ = init_feasible(f)
    st = f.state(p)
    zero = f.unpack_direction(np.zeros(f.num_vars))
    assert step_length(f, st, zero, ftb=0.95) == 1.0
    # direction scaling y down: the cone slack would vanish at alpha = 0.5,
    # so the boundary rule caps the step at most at ftb * 0.5 (the damping
    # on the derived multiplier may bind earlier)
    d = f.unpack_direction(np.zeros(f.num_vars))
    d.dy[:] = -2.0 * p.y
    alpha = step_length(f, st, d, ftb=0.95)
    assert 0.0 < alpha <= 0.95 * 0.5 + 1e-9
    z = f.cone_matrix(p.x + alpha * d.dx, p.y + alpha * d.dy)
    assert np.linalg.eigvalsh(z)[0] > 0


def test_step_length_scalar_ratio_oracle():
    # the documented rule on one slack: a direction zeroing it at 0.5 gives
    # the ftb-adjusted step ftb * 0.5
    from snledm.solve import _vector_ratio
    s = np.array([1.7])
    ds = np.array([-2.0 * 1.7])
    assert _vector_ratio(s, ds, 0.95) == pytest.approx(0.475, rel=1e-12)
    # an all-increasing direction is unrestricted
    assert _vector_ratio(s, np.array([0.3]), 0.95) == np.inf


def test_vector_ratio_matches_scalar_oracle():
    from snledm.solve import _vector_ratio
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.uniform(0.1, 2.0, 7)
        dv = rng.standard_normal(7)
        ftb = 0.9
        alpha = _vector_ratio(v, dv, ftb)
        # brute-force oracle on a fine grid
        if np.isfinite(alpha):
            assert np.all(v + alpha * dv >= (1 - ftb) * v - 1e-12)
            assert np.any(v + (alpha * 1.01) * dv < (1 - ftb) * v)
        else:
            assert np.all(v + 100.0 * dv >= (1 - ftb) * v)


def test_matrix_ratio_against_bisection():
    from snledm.solve import _matrix_ratio
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = rng.standard_normal((5, 5))
        z = g @ g.T + 0.5 * np.eye(5)
        dz = rng.standard_normal((5, 5))
        dz = dz + dz.T
        ftb = 0.95
        alpha = _matrix_ratio(z, dz, ftb)
        floor = (1 - ftb) * np.linalg.eigvalsh(z)[0]
        if np.isfinite(alpha):
            assert np.linalg.eigvalsh(z + alpha * dz)[0] >= floor - 1e-8
            assert np.linalg.eigvalsh(z + 1.05 * alpha * dz)[0] <= floor + 1e-8
        else:
            assert np.linalg.eigvalsh(z + 50.0 * dz)[0] >= floor


def test_least_squares_min_norm():
    rng = np.random.default_rng(2)
    jac = rng.standard_normal((12, 6))
    jac[:, 5] = jac[:, 0] + jac[:, 1]          # engineered rank deficiency
    rhs = rng.standard_normal(12)
    sol, rank, _ = least_squares_min_norm(jac, rhs)
    assert rank == 5
    # normal equations hold and the solution is minimum-norm
    assert np.linalg.norm(jac.T @ (jac @ sol - rhs)) <= 1e-10
    _, _, vt = np.linalg.svd(jac)
    null = vt[-1]
    for t in (0.1, -0.1, 1.0):
        assert np.linalg.norm(sol + t * null) > np.linalg.norm(sol)


def test_gauss_newton_step_small_at_kkt_point():
    # with an exactly zero residual the minimum-norm step is exactly zero;
    # at a numerically converged point it is tiny
    rng = np.random.default_rng(4)
    jac = rng.standard_normal((9, 5))
    sol, _, _ = least_squares_min_norm(jac, np.zeros(9))
    assert np.linalg.norm(sol) == 0.0

    inst = dense_instance()
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    res = solve(f, SolverConfig())
    st = f.state(res.point)
    d, info = gauss_newton_step(f, st, (0.0, 0.0, 0.0), SolverConfig())
    assert np.linalg.norm(f.pack_direction(d)) <= 1e-4
    assert info["normal_eq_rel_residual"] <= 1e-6


def test_gauss_newton_decreases_residual():
    inst = dense_instance(noise=0.05)
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    p, _ = init_feasible(f)
    cfg = SolverConfig()
    for _ in range(3):
        st = f.state(p)
        comps = f.complementarity(st)
        mu = (0.0, 0.0, 0.25 * comps[2] / f.order)
        base = f.kkt_residual(st, mu).norm()
        d, _ = gauss_newton_step(f, st, mu, cfg)
        small = f.kkt_residual(f.state(f.step(p, d, 1e-3)), mu).norm()
        assert small < base
        alpha = step_length(f, st, d, cfg.ftb)
        p = f.step(p, d, alpha)


def test_solve_noiseless_dense():
    inst = dense_instance()
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    res = solve(f, SolverConfig())
    assert res.status == "converged"
    assert abs(res.certificate["relgap"]) <= 1e-10
    assert res.certificate["objective"] <= 1e-10
    assert len(res.trace) <= 100


def test_solve_linearized_same_optimum():
    inst = dense_instance()
    fq = prepare(inst, kind="quadratic", cliques="none").formulation
    fl = prepare(inst, kind="linearized", cliques="none").formulation
    rq = solve(fq, SolverConfig())
    rl = solve(fl, SolverConfig())
    assert rq.status == "converged" and rl.status == "converged"
    assert rq.certificate["objective"] <= 1e-9
    assert rl.certificate["objective"] <= 1e-9


def test_solve_trace_contract():
    inst = dense_instance(noise=0.02)
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    cfg = SolverConfig()
    res = solve(f, cfg)
    recs = res.trace.records
    assert [r.iteration for r in recs] == list(range(len(recs)))
    # affine iterations appear only after the gap crosses the trigger
    seen_affine = False
    for r in recs:
        if r.mode == "affine":
            seen_affine = True
            assert r.mu == 0.0
        elif seen_affine:
            pytest.fail("centering iteration after crossover")
    # crossover only below the trigger
    first_affine = next((r for r in recs if r.mode == "affine"), None)
    if first_affine is not None:
        assert first_affine.relgap < cfg.crossover_gap


def test_solve_reproducible():
    inst = dense_instance(noise=0.03)
    f1 = prepare(inst, kind="quadratic", cliques="none").formulation
    f2 = prepare(inst, kind="quadratic", cliques="none").formulation
    r1 = solve(f1, SolverConfig())
    r2 = solve(f2, SolverConfig())
    assert len(r1.trace) == len(r2.trace)
    assert np.array_equal(r1.point.x, r2.point.x)
    assert np.array_equal(r1.point.y, r2.point.y)


def test_solve_with_bounds_converges():
    inst = dense_instance()
    p_true = inst.points()
    e_max = max(d for _, _, d in inst.sensor_edges)
    ub, lb = [], []
    rng = np.random.default_rng(3)
    for i in range(inst.n):
        for j in range(i + 1, inst.n + inst.m):
            d2 = float(np.sum((p_true[i] - p_true[j]) ** 2))
            # loose enough that the uniform-Gram start stays interior
            if rng.uniform() < 0.15:
                ub.append((i, j, 3.0 * e_max))
            if rng.uniform() < 0.15:
                lb.append((i, j, 0.4 * d2))
    inst_b = with_bounds(inst, ub, lb)
    f = prepare(inst_b, kind="quadratic", cliques="none").formulation
    res = solve(f, SolverConfig())
    assert res.status == "converged"
    st = f.state(res.point)
    assert np.all(st.s_u > 0) and np.all(st.s_l > 0)
    assert res.certificate["objective"] <= 1e-9


def test_primal_positivity_in_centering_mode():
    inst = dense_instance(noise=0.04)
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    cfg = SolverConfig()
    p, _ = init_feasible(f)
    for _ in range(8):
        st = f.state(p)
        comps = f.complementarity(st)
        mu = (0.0, 0.0, cfg.sigma * comps[2] / f.order)
        d, _ = gauss_newton_step(f, st, mu, cfg)
        alpha = step_length(f, st, d, cfg.ftb)
        p = f.step(p, d, alpha)
        _, _, z = f.slacks(p.x, p.y)
        assert np.linalg.eigvalsh(z)[0] > 0


def test_residual_norm_window_decreasing():
    # empirical robustness contract: total residual norm does not increase
    # over any 5-iteration centering window on the regression instances
    for seed in (5, 6):
        inst = dense_instance(seed=seed, noise=0.02)
        f = prepare(inst, kind="quadratic", cliques="none").formulation
        res = solve(f, SolverConfig())
        norms = [np.sqrt(r.norm_fu ** 2 + r.norm_fl ** 2 + r.norm_fc ** 2
                         + r.norm_fs ** 2)
                 for r in res.trace.records if r.mode == "centering"]
        for k in range(len(norms) - 5):
            assert norms[k + 5] <= norms[k] * (1 + 1e-9)


def test_complementarity_below_final_mu():
    inst = dense_instance(noise=0.02)
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    res = solve(f, SolverConfig())
    assert res.status == "converged"
    st = f.state(res.point)
    mu_last = max(r.mu for r in res.trace.records)
    mu_final = min(r.mu for r in res.trace.records if r.mu > 0)
    lam_z = st.lam_mat @ st.cone
    assert np.linalg.norm(lam_z) <= 10.0 * mu_final
    assert np.linalg.norm(st.point.lam_u * st.s_u) <= 10.0 * max(mu_final, 1e-300)


def test_relative_gap_properties():
    inst = dense_instance(noise=0.02)
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    p, _ = init_feasible(f)
    st = f.state(p)
    gap, obj = f.relative_gap(st)
    comps = f.complementarity(st)
    assert gap == pytest.approx(sum(comps) / (1 + abs(obj)), rel=1e-12)
    # doubling the bound multipliers doubles their complementarity terms
    p2 = p.copy()
    p2.lam_u = 2 * p2.lam_u
    p2.lam_l = 2 * p2.lam_l
    comps2 = f.complementarity(f.state(p2))
    assert comps2[0] == pytest.approx(2 * comps[0], abs=1e-12)
    assert comps2[1] == pytest.approx(2 * comps[1], abs=1e-12)
    assert relative_gap(f, p) == pytest.approx(gap, rel=1e-12)


def test_trace_csv_export(tmp_path):
    inst = dense_instance()
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    res = solve(f, SolverConfig())
    path = tmp_path / "trace.csv"
    res.trace.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iter,objective,relgap,normFu,normFl,normFc,normFs,alpha,mu,mode"
    assert len(lines) == len(res.trace) + 1
    last = lines[-1].split(",")
    assert last[-1] in ("centering", "affine")
    assert float(last[2]) == res.trace.records[-1].relgap


def test_iterative_least_squares_path():
    # force the operator-based path by lowering the dense limit
    inst = dense_instance()
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    cfg = SolverConfig(dense_limit=1, gap_tol=1e-8)
    res = solve(f, cfg)
    assert res.status == "converged"
    assert abs(res.certificate["relgap"]) <= 1e-8


def test_kkt_certificate_on_converged_solve():
    inst = dense_instance(noise=0.03)
    f = prepare(inst, kind="quadratic", cliques="none").formulation
    res = solve(f, SolverConfig())
    assert res.status == "converged"
    c = res.certificate
    assert c["norm_f0"] <= 1e-7 * (1 + c["data_norm"])
    assert c["lam_min_cone"] >= -1e-8
    assert c["lam_min_multiplier"] >= -1e-8
    assert c["min_lam_u"] >= -1e-8 and c["min_lam_l"] >= -1e-8
    assert c["min_slack_u"] >= -1e-8 and c["min_slack_l"] >= -1e-8
