import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from oracles import enumerate_cardinality, kl_eps_grid
from rdlpf.conic import solve_cardinality, solve_sdp, verify
from rdlpf.conic.problem import CardinalityProblem
from rdlpf.datagen import Dataset
from rdlpf.drcc import (ChanceSpec, InfeasibleRowError, KLAmbiguity, MomentAmbiguity, TrainingConfig, assemble_m1,
                        assemble_m2, canonicalize, chosen_index, empirical_moments, extract_dual_block,
                        kl_adjusted_eps, moment_bound, row_coefficients, train_rdlpf, violation_budget)
from rdlpf.lpfcore import LinearPFModel, VariableMap, residuals, train_ls


def vmap(nx, ny):
    return VariableMap(tuple((i + 2, "P") for i in range(nx)), tuple((i, "Pf") for i in range(ny)))


def synthetic(K=60, nx=3, ny=2, noise=0.05, seed=0, curvature=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(1.0, 0.3, size=(K, nx))
    A = rng.normal(size=(ny, nx))
    Y = X @ A.T + noise * rng.normal(size=(K, ny)) + curvature * (X ** 2).sum(axis=1, keepdims=True)
    return Dataset(X, Y, vmap(nx, ny)), A


# ---------------------------------------------------------------------------
# moments


def test_two_point_moments():
    amb = empirical_moments(np.array([[0.0], [2.0]]))
    assert amb.mu0 == pytest.approx([1.0])
    assert amb.Sigma0[0, 0] == pytest.approx(2.0 * (1 + 1e-8), rel=1e-14)


def test_identical_samples_give_ridge_only():
    amb = empirical_moments(np.tile([0.5, -1.0, 2.0], (6, 1)))
    assert np.allclose(amb.Sigma0, 1e-8 * np.eye(3), atol=1e-20)


def test_covariance_matches_textbook():
    pts = [(1.0, 2.0), (2.0, 1.0), (4.0, 5.0), (0.0, -1.0), (3.0, 3.0)]
    mx = sum(p[0] for p in pts) / 5
    my = sum(p[1] for p in pts) / 5
    sxx = sum((p[0] - mx) ** 2 for p in pts) / 4
    syy = sum((p[1] - my) ** 2 for p in pts) / 4
    sxy = sum((p[0] - mx) * (p[1] - my) for p in pts) / 4
    ridge = 1e-8 * (sxx + syy) / 2
    amb = empirical_moments(np.array(pts))
    assert np.allclose(amb.Sigma0, [[sxx + ridge, sxy], [sxy, syy + ridge]], rtol=1e-14)


def test_moments_need_two_samples():
    with pytest.raises(ValueError):
        empirical_moments(np.array([[1.0, 2.0]]))


# ---------------------------------------------------------------------------
# KL-adjusted risk


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.1, 0.2])
def test_kl_zero_divergence(eps):
    assert abs(kl_adjusted_eps(eps, 0.0) - eps) <= 1e-9


def test_kl_large_divergence():
    assert kl_adjusted_eps(0.05, 10.0) <= 1e-3


def test_kl_grid_oracle():
    assert abs(kl_adjusted_eps(0.10, 0.1) - kl_eps_grid(0.10, 0.1)) <= 1e-6


@given(st.floats(0.005, 0.5), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_kl_monotone_and_bounded(eps, d1, d2):
    lo, hi = sorted((d1, d2))
    e_lo, e_hi = kl_adjusted_eps(eps, lo), kl_adjusted_eps(eps, hi)
    assert 0.0 <= e_hi <= e_lo + 1e-12 <= eps + 1e-12


# ---------------------------------------------------------------------------
# canonical constraints


def test_canonical_scalar_row():
    up, lo = canonicalize(0, vmap(1, 1), ChanceSpec(0.3, 0.05))
    assert np.allclose(up.s([2.0]), [-2.0, 1.0]) and up.t == 0.3
    assert np.allclose(lo.s([2.0]), [2.0, -1.0]) and lo.t == 0.3
    assert up.eps == lo.eps == 0.05


def test_canonical_value_reproduces_residuals():
    data, _ = synthetic()
    model = train_ls(data)
    R = residuals(model, data)
    for i in range(data.map.n_y):
        up, lo = canonicalize(i, data.map, ChanceSpec(1.0, 0.05))
        xi = np.hstack([data.X, data.Y[:, [i]]])
        assert np.allclose(up.value(model.A[i], xi), R[i], atol=1e-15)
        assert np.allclose(lo.value(model.A[i], xi), -R[i], atol=1e-15)


def test_canonical_affine_in_coefficients():
    up, _ = canonicalize(1, vmap(4, 2), ChanceSpec(1.0, 0.05))
    rng = np.random.default_rng(2)
    a, da = rng.normal(size=4), rng.normal(size=4)
    h = 1e-3
    second = up.s(a + h * da) - 2 * up.s(a) + up.s(a - h * da)
    assert np.max(np.abs(second)) <= 1e-12


# ---------------------------------------------------------------------------
# M1 assembly


def _extra_vars(p):
    return p.n_vars - len(p.groups["w"])


def test_m1_dimension_bookkeeping():
    data, _ = synthetic(nx=1, ny=1)
    cfg = TrainingConfig("M1")
    p = assemble_m1(0, data, cfg, delta=1.0, whiten=False, compress=False)
    n = 2

    def per_side(n):
        # G, H in S^n, alpha in R^n, and l, beta, lambda
        return 2 * (n * (n + 1) // 2) + n + 3

    assert 2 * per_side(1) + 2 == 14
    assert _extra_vars(p) == 2 * per_side(n) + 2
    sizes = sorted(b.size for b in p.blocks)
    assert sizes == [2] + [n + 1] * 6


def test_m1_pinned_mean_drops_third_lmi():
    data, _ = synthetic(nx=1, ny=1)
    amb = empirical_moments(data.xi[:, [0, 1]], 0.0, 1.0)
    p = assemble_m1(0, data, TrainingConfig("M1", ambiguity=amb), delta=1.0, moments=amb, whiten=False,
                    compress=False)
    assert not any(b.name.startswith("lmi3") for b in p.blocks)
    assert _extra_vars(p) == 2 * (3 + 2 + 2) + 2


def test_m1_too_large_guard():
    data, _ = synthetic(nx=5, ny=1)
    with pytest.raises(ValueError, match="M2"):
        assemble_m1(0, data, TrainingConfig("M1", max_lmi=4), delta=1.0)


def _cantelli_boundary(eps, mu, var, a, steps=40):
    data, _ = synthetic(K=40, nx=1, ny=1, seed=3)
    amb = MomentAmbiguity(np.array([mu, 0.0]), np.diag([var, 0.0]), 0.0, 1.0)
    cfg = TrainingConfig("M1", ChanceSpec("auto", eps), amb)
    closed = -a * mu + math.sqrt((1 - eps) / eps) * math.sqrt(a * a * var)
    lo, hi = 0.5 * closed, 1.5 * closed
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        sol = solve_sdp(assemble_m1(0, data, cfg, delta=mid, moments=amb, fixed_a=[a]))
        if sol.status == "optimal" or sol.certificates.get("passed"):
            hi = mid
        else:
            lo = mid
    return closed, hi


def test_m1_boundary_matches_known_moment_bound():
    closed, found = _cantelli_boundary(0.1, 1.2, 0.3, -1.3, steps=22)
    assert abs(found - closed) <= 1e-4


def test_m1_delta_min_matches_closed_form():
    data, _ = synthetic(seed=4)
    cfg = TrainingConfig("M1")
    amb = empirical_moments(data, 0.1, 1.1).marginal([0, 1, 2, 3])
    p = assemble_m1(0, data, cfg, moments=empirical_moments(data, 0.1, 1.1), objective="delta-min")
    sol = solve_sdp(p)
    assert sol.status == "optimal" and sol.certificates["passed"]
    a = row_coefficients(p, sol.x)
    bound = max(moment_bound(a, amb, 0.05, +1), moment_bound(a, amb, 0.05, -1))
    assert sol.objective * p.scale == pytest.approx(bound, rel=1e-6)


def test_m1_dual_block_satisfies_lmis():
    data, _ = synthetic(seed=5)
    p = assemble_m1(1, data, TrainingConfig("M1"), delta=5.0)
    sol = solve_sdp(p)
    assert sol.status == "optimal"
    for tag in "+-":
        blk = extract_dual_block(p, sol.x, tag)
        assert blk.lam >= -1e-9
        H3 = np.block([[blk.H, blk.alpha[:, None]], [blk.alpha[None, :], np.array([[blk.beta]])]])
        assert np.linalg.eigvalsh(H3)[0] >= -1e-6
        H2 = np.block([[blk.G, -blk.alpha[:, None]], [-blk.alpha[None, :], np.array([[1 - blk.l]])]])
        assert np.linalg.eigvalsh(H2)[0] >= -1e-6


def test_m1_vacuous_delta_fits_chosen_point():
    data, _ = synthetic(seed=6)
    p = assemble_m1(0, data, TrainingConfig("M1"), delta=1e6)
    sol = solve_sdp(p)
    assert sol.status == "optimal"
    a = row_coefficients(p, sol.x)
    c = chosen_index(data)
    assert abs(data.Y[c, 0] - data.X[c] @ a) <= 1e-6


def test_m1_infeasible_delta_raises():
    data, _ = synthetic(seed=7)
    with pytest.raises(InfeasibleRowError, match="row 0"):
        train_rdlpf(data, config=TrainingConfig("M1", ChanceSpec(1e-6, 0.05), rows=[0]))


def test_m1_monotone_in_delta():
    data, _ = synthetic(seed=8, noise=0.2)
    cfg = TrainingConfig("M1")
    dmin = solve_sdp(assemble_m1(0, data, cfg, objective="delta-min"))
    base = dmin.objective * assemble_m1(0, data, cfg, objective="delta-min").scale
    objs = []
    for f in (1.02, 1.1, 1.3, 2.0):
        sol = solve_sdp(assemble_m1(0, data, cfg, delta=f * base))
        assert sol.status == "optimal"
        objs.append(sol.objective * assemble_m1(0, data, cfg, delta=f * base).scale ** 2)
    assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))


def test_m1_training_provenance():
    data, _ = synthetic(seed=9)
    model = train_rdlpf(data, config=TrainingConfig("M1"))
    prov = model.provenance
    assert prov["method"] == "M1" and prov["chosen_index"] == chosen_index(data)
    assert "gamma1=0.1, gamma2=1.1" in prov["defaults_fired"]
    assert all(r["delta"] > 0 and r["min_lmi_eig"] >= -1e-6 for r in prov["rows"])
    assert np.all(model.b == 0)


# ---------------------------------------------------------------------------
# M2


def test_violation_budget_arithmetic():
    assert violation_budget(0.25, 10) == 2
    assert violation_budget(0.0, 300) == 0


def test_m2_zero_budget_is_hard_constraint():
    data, _ = synthetic(seed=10)
    cfg = TrainingConfig("M2")
    p = assemble_m2(0, data, cfg, delta=0.2, eps_prime=0.0)
    assert p.budget == 0
    sol = solve_cardinality(p)
    assert sol.ok
    assert np.all(np.abs(p.residuals(sol.x)) <= 0.2 + 1e-12)


def test_m2_zero_budget_matches_qp_oracle():
    data, _ = synthetic(K=25, nx=2, ny=1, seed=11, noise=0.1)
    p = assemble_m2(0, data, TrainingConfig("M2"), delta=0.18, eps_prime=0.0)
    sol = solve_cardinality(p)
    cons = [{"type": "ineq", "fun": lambda a, k=k, s=s: p.delta - s * (p.y[k] - p.X[k] @ a)}
            for k in range(len(p.y)) for s in (1, -1)]
    ref = minimize(p.objective, train_ls(data).A[0], constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    assert ref.success
    assert sol.objective == pytest.approx(ref.fun, abs=1e-9)


def test_m2_full_budget_is_unconstrained():
    data, _ = synthetic(K=12, seed=12)
    p = assemble_m2(0, data, TrainingConfig("M2"), delta=1e-3, eps_prime=1.0)
    assert p.budget == p.X.shape[0]
    sol = solve_cardinality(p)
    assert sol.objective <= 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_m2_exact_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    X = rng.uniform(0.5, 1.5, size=(8, 1))
    y = 1.7 * X[:, 0] + rng.normal(0, 0.15, 8)
    data = Dataset(X, y[:, None], vmap(1, 1))
    delta = 0.12
    p = assemble_m2(0, data, TrainingConfig("M2"), delta=delta, eps_prime=0.25)
    assert p.budget == 2
    c = p.chosen
    oracle, _ = enumerate_cardinality(X, y, delta, 2, X[c, 0], y[c], p.lb[0], p.ub[0])
    sol = solve_cardinality(p, mode="exact")
    if math.isinf(oracle):
        assert sol.status == "infeasible"
    else:
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(oracle, rel=1e-7, abs=1e-10)


def test_m2_heuristic_never_claims_optimal(hist14):
    p = assemble_m2(3, hist14, TrainingConfig("M2"), delta=1e-4)
    sol = solve_cardinality(p, mode="heuristic")
    assert sol.status in ("feasible", "infeasible")


def test_m2_budget_recount(hist14):
    model = train_rdlpf(hist14, config=TrainingConfig("M2"))
    m = violation_budget(model.provenance["eps_prime_plus"], hist14.K)
    R = residuals(model, hist14)
    for i, row in enumerate(model.provenance["rows"]):
        assert int(np.sum(R[i] > row["delta"])) <= m
        assert int(np.sum(R[i] < -row["delta"])) <= m
    assert "d=0.05" in model.provenance["defaults_fired"]


def test_m2_monotone_in_delta(hist14):
    cfg = TrainingConfig("M2")
    r = hist14.Y[:, 5] - hist14.X @ train_ls(hist14).A[5]
    q = float(np.quantile(np.abs(r), 0.9))
    objs = [solve_cardinality(assemble_m2(5, hist14, cfg, delta=f * q)).objective for f in (0.5, 0.7, 1.0, 2.0)]
    assert all(b <= a + 1e-15 for a, b in zip(objs, objs[1:]))


def test_m2_infeasible_delta_raises():
    data, _ = synthetic(seed=13)
    with pytest.raises(InfeasibleRowError):
        train_rdlpf(data, config=TrainingConfig("M2", ChanceSpec(1e-7, 0.05), KLAmbiguity(3.0), rows=[0]))


# ---------------------------------------------------------------------------
# both routes


@pytest.mark.parametrize("method", ["M1", "M2"])
def test_exact_linear_world_recovered(method):
    data, A = synthetic(K=40, nx=3, ny=2, noise=0.0, seed=14)
    model = train_rdlpf(data, config=TrainingConfig(method))
    assert np.max(np.abs(model.A - A)) <= 1e-6
    assert all(r["chosen_objective"] <= 1e-12 for r in model.provenance["rows"])


def test_verify_passes_on_trained_m1_row():
    data, _ = synthetic(seed=15)
    model = train_rdlpf(data, config=TrainingConfig("M1", rows=[1]))
    row = model.provenance["rows"][0]
    p = assemble_m1(1, data, TrainingConfig("M1"), delta=row["delta"], fixed_a=model.A[1])
    sol = solve_sdp(p)
    assert verify(p, sol)["passed"]
    assert isinstance(LinearPFModel.from_dict(model.to_dict()), LinearPFModel)


def test_cardinality_problem_validation():
    with pytest.raises(ValueError):
        CardinalityProblem(np.eye(1), np.zeros(1), 0.0, np.ones((3, 1)), np.ones(3), 0.1, 5, 1.0,
                           np.full(1, -1.0), np.ones(1))
