import math

import numpy as np
import pytest

from flockyap import lyapunov as ly
from flockyap.dynamics import integrate
from flockyap.kernels import ConstantKernel, PowerLawKernel, RescaledKernel
from flockyap.laplacian import Convention, WeightMatrix, laplacian_from_weights
from flockyap.pe import check_pe
from flockyap.schedules import BernoulliSchedule, ConstantSchedule, ExampleN4Schedule
from flockyap.state import variance_form

TAU = 1.0


@pytest.fixture(scope="module")
def flock():
    rng = np.random.default_rng(2)
    tr = integrate("second", rng.normal(size=(4, 2)), rng.normal(size=(4, 2)),
                   ExampleN4Schedule(TAU), PowerLawKernel(1, 1, 0.25), 8.0, 1 / 60)
    return tr, ly.compute_constants(tr, TAU, 1 / 24)


@pytest.fixture(scope="module")
def consensus():
    rng = np.random.default_rng(5)
    s = BernoulliSchedule(WeightMatrix.complete(6), 0.5, 0.1, seed=11, horizon=6.0)
    tr = integrate("first", rng.normal(size=(6, 2)), None, s, PowerLawKernel(1, 1, 0.3), 6.0, 5e-3)
    mu = check_pe(s, TAU, 1e-6, horizon=6.0).worst_lambda2
    return tr, ly.compute_constants(tr, TAU, mu)


def test_constants_constant_kernel():
    tr = integrate("first", [[0.0], [1.0], [3.0]], None, ConstantSchedule(WeightMatrix.complete(3)),
                   ConstantKernel(0.7), 2.0, 0.01)
    c = ly.compute_constants(tr, TAU, 0.5)
    assert c.C_R == c.C0 == 0.7
    # c^2 is the largest eigenvalue of 0.7 * L(K_3), i.e. 0.7.
    assert c.c == pytest.approx(math.sqrt(0.7))
    q = math.sqrt((1 + c.c**2) * TAU)
    assert c.alpha == pytest.approx(c.C0 * c.mu / (4 * q * (c.lambda_const + q)))


def test_constants_zero_schedule_and_static_pair():
    tr = integrate("first", [[0.0], [1.0]], None, ConstantSchedule(WeightMatrix.zeros(2)),
                   ConstantKernel(1.0), 2.0, 0.1)
    c = ly.compute_constants(tr, TAU, 0.1)
    assert c.c == 0.0 and math.isinf(c.eps_const)
    assert c.lambda_const == pytest.approx(0.5)
    k = PowerLawKernel(1, 1, 0.25)
    tr = integrate("second", [[0.0], [1.0]], [[0.3], [0.3]], ConstantSchedule(WeightMatrix.complete(2)), k, 2.0, 0.1)
    assert ly.compute_constants(tr, TAU, 0.5).C0 == pytest.approx(k(1.0), rel=1e-12)


def test_conservative_constants_are_weaker(consensus):
    tr, c = consensus
    cc = ly.compute_constants(tr, TAU, c.mu, conservative=True)
    assert cc.R > c.R and cc.C0 <= c.C0 and cc.c >= c.c and cc.alpha <= c.alpha


def test_empty_constants_arguments(consensus):
    tr, _ = consensus
    with pytest.raises(ValueError):
        ly.compute_constants(tr, TAU, 0.0)


def test_psi_zero_schedule_is_tau_identity():
    tr = integrate("first", [[0.0], [1.0], [2.0]], None, ConstantSchedule(WeightMatrix.zeros(3)),
                   ConstantKernel(1.0), 3.0, 0.1)
    c = ly.compute_constants(tr, TAU, 0.1)
    assert np.allclose(ly.psi_tau(tr, 0.5, c), TAU * np.eye(3))
    # Static state: Xcal = (lambda + sqrt(tau)) X exactly.
    assert ly.x_cal(tr, 1.0, c) == pytest.approx((c.lambda_const + 1.0) * tr.X[10], rel=1e-14)


def test_psi_constant_operator_closed_form():
    w = WeightMatrix.complete(4)
    tr = integrate("first", np.arange(4.0)[:, None], None, ConstantSchedule(w), ConstantKernel(1.0), 3.0, 0.05)
    c = ly.compute_constants(tr, 2.0, 0.5)
    L = laplacian_from_weights(w).matrix
    # Double integral of a constant L over the triangle is (tau^2 / 2) L.
    assert np.allclose(ly.psi_tau(tr, 0.3, c), (1 + c.c**2) * 2.0 * np.eye(4) - 1.0 * L, atol=1e-13)


def test_double_integral_matches_riemann_sum():
    s = ExampleN4Schedule(TAU)
    tr = integrate("first", np.array([[0.0], [1.0], [2.0], [4.0]]), None, s, ConstantKernel(1.0), 3.0, 1 / 60)
    wi = ly.window_integrals(tr)
    t0, n = 0.37, 6000
    ds = TAU / n
    mids = t0 + (np.arange(n) + 0.5) * ds
    Ls = np.stack([laplacian_from_weights(s.sample(m)).matrix for m in mids])
    inner = np.cumsum(Ls, axis=0) * ds - 0.5 * Ls * ds
    ref = inner.sum(axis=0) * ds / TAU
    assert np.abs(wi.double_integral(t0, TAU) - ref).max() < 1e-6
    assert np.allclose(wi.window_average(t0, TAU), Ls.mean(axis=0), atol=1e-6)


def test_psi_bounds_on_random_vectors(flock):
    tr, c = flock
    rng = np.random.default_rng(0)
    lo, hi = math.sqrt(TAU), math.sqrt((1 + c.c**2) * TAU)
    for t in rng.uniform(0, tr.t_end - TAU, 30):
        psi = ly.psi_tau(tr, t, c)
        for _ in range(10):
            y = rng.normal(size=(4, 2))
            X = math.sqrt(variance_form(y, y))
            val = math.sqrt(variance_form(psi @ y, y))
            assert lo * X - 1e-9 <= val <= hi * X + 1e-9


def test_psi_derivative_finite_difference(flock):
    tr, c = flock
    t, h = 2.0 + 1 / 12, 1e-4  # interior of a schedule cell
    fd = (ly.psi_tau(tr, t + h, c) - ly.psi_tau(tr, t, c)) / h
    assert np.abs(fd - ly.psi_derivative(tr, t, c)).max() < 1e-3


def test_psi_needs_horizon(flock):
    tr, c = flock
    with pytest.raises(ValueError):
        ly.psi_tau(tr, tr.t_end - 0.5, c)


def test_xcal_framing(consensus):
    tr, c = consensus
    t, xc = ly.x_cal_series(tr, c)
    X = tr.X[: t.size]
    q = math.sqrt((1 + c.c**2) * TAU)
    assert np.all((c.lambda_const + math.sqrt(TAU)) * X <= xc * (1 + 1e-12) + 1e-15)
    assert np.all(xc <= (c.lambda_const + q) * X * (1 + 1e-12) + 1e-15)
    assert ly.x_cal(tr, 1.0, c) == pytest.approx(xc[tr.index_of(1.0)])


def test_xcal_vanishes_at_consensus():
    tr = integrate("first", np.ones((3, 2)), None, ConstantSchedule(WeightMatrix.complete(3)),
                   ConstantKernel(1.0), 2.0, 0.1)
    c = ly.compute_constants(tr, TAU, 1.0)
    assert ly.x_cal(tr, 0.0, c) == 0.0
    rep = ly.check_consensus_dissipation(tr, c)
    assert rep.holds and rep.max_residual == 0.0


def test_consensus_dissipation_holds(consensus):
    tr, c = consensus
    rep = ly.check_consensus_dissipation(tr, c)
    assert rep.holds, rep.to_dict()
    sub = ly.check_consensus_dissipation(tr, c, sample_times=[1.0, 2.0, 3.0])
    assert sub.n_samples == 3 and sub.max_residual <= rep.max_residual


def test_consensus_dissipation_fails_without_links():
    tr = integrate("first", [[0.0], [1.0], [2.0]], None, ConstantSchedule(WeightMatrix.zeros(3)),
                   ConstantKernel(1.0), 3.0, 0.01)
    c = ly.compute_constants(tr, TAU, 0.1)
    rep = ly.check_consensus_dissipation(tr, c)
    assert not rep.holds and rep.max_residual > 0


def test_tuning_coefficients():
    tu = ly.FlockingTuning(0.2, 0.8, 2.0)
    q = math.sqrt((1 + 0.64) * 2.0)
    assert tu.alpha1 == pytest.approx(0.8**3 * math.sqrt(2.0) / 2)
    assert tu.beta3 == pytest.approx(2 * q * tu.beta1)
    assert tu.alpha2p == pytest.approx(2 * q * tu.alpha2)
    assert tu.lower_coef() <= tu.upper_coef()
    assert tu.eps(0.0) == pytest.approx(0.2)
    assert tu.eps(tu.T_eps0) == pytest.approx(math.sqrt(2) * 0.2)
    with pytest.raises(ValueError):
        tu.eps(tu.blowup_time)


def test_vcal_framing(flock):
    tr, c = flock
    tu = ly.FlockingTuning(0.3, c.c, TAU)
    t, vc, ks = ly.v_cal_series(tr, tu, c, tu.T_eps0)
    V = tr.V[ks]
    assert np.all(tu.lower_coef() * V <= vc * (1 + 1e-12))
    assert np.all(vc <= tu.upper_coef() * V * (1 + 1e-12))
    assert ly.v_cal(tr, 1.0, tu, c) == pytest.approx(vc[tr.index_of(1.0)])


def test_flocking_dissipation_and_window_bound(flock):
    tr, c = flock
    tu = ly.FlockingTuning(0.3, c.c, TAU)
    rep = ly.check_flocking_dissipation(tr, tu, c, n_vectors=200)
    assert rep.holds and rep.lemma_holds
    assert any("0.99" in n for n in rep.notes)


def test_aligned_velocities_give_zero_functional():
    tr = integrate("second", [[0.0], [1.0], [2.0], [3.0]], np.ones((4, 1)), ExampleN4Schedule(TAU),
                   PowerLawKernel(1, 1, 0.25), 3.0, 1 / 60)
    c = ly.compute_constants(tr, TAU, 1 / 24)
    tu = ly.FlockingTuning(0.3, c.c, TAU)
    assert ly.v_cal(tr, 0.5, tu, c) == 0.0
    rep = ly.check_flocking_dissipation(tr, tu, c, n_vectors=50)
    assert rep.max_residual == 0.0


def test_window_bound_constant_kernel_reduces_to_pe():
    # phi = 0.5: the window-averaged state Laplacian is 0.5 times the schedule average.
    s = ExampleN4Schedule(TAU)
    tr = integrate("second", np.arange(4.0)[:, None], np.array([[1.0], [0.0], [-1.0], [0.0]]),
                   s, ConstantKernel(0.5), 4.0, 1 / 60)
    c = ly.compute_constants(tr, TAU, 1 / 24)
    rk = ly.rescaled_kernel_for(tr, TAU)
    res = ly.lemma_window_bound(tr, c, rk, n_vectors=300)
    assert res["holds"]
    assert res["min_eig_margin"] >= -1e-10
    pe = check_pe(s, TAU, 1 / 24, convention=Convention.NORMALIZED)
    assert res["min_eig_margin"] == pytest.approx(0.5 * pe.worst_lambda2 - 0.5 / 24, abs=1e-10)


def test_flocking_bound_structure(flock):
    tr, c = flock
    rk = ly.rescaled_kernel_for(tr, TAU)
    v0 = float(tr.V[0])
    fb = ly.flocking_bound(ly.FlockingTuning(0.05, c.c, TAU), c, rk, v0)
    assert fb.asymptotic_exponent == pytest.approx(1 / 3)
    assert fb.phi_lower <= float(rk(fb.x_m)) * (1 + 1e-12)
    assert fb.v_bound_at_T <= fb.asymptotic_bound
    assert fb.C3 == pytest.approx(v0 * max(fb.C3 / v0, 0))
    # Very large eps0: no decay, finite prefactor.
    big = ly.flocking_bound(ly.FlockingTuning(1e6, c.c, TAU), c, rk, v0)
    tu = ly.FlockingTuning(1e6, c.c, TAU)
    assert big.exponent_arg < 1e-9
    assert big.v_bound_at_T == pytest.approx(v0 * tu.beta1 / tu.beta2, rel=1e-5)


def test_flocking_bound_rejects_weak_interaction(flock):
    tr, c = flock
    rk = RescaledKernel(PowerLawKernel(1, 1, 0.5), 4, TAU, 1.0, 1.0)
    with pytest.raises(ValueError):
        ly.flocking_bound(ly.FlockingTuning(0.1, c.c, TAU), c, rk, 1.0)
    rk = RescaledKernel(ConstantKernel(1.0), 4, TAU, 1.0, 1.0)
    with pytest.raises(ValueError):
        ly.flocking_bound(ly.FlockingTuning(0.1, c.c, TAU), c, rk, 1.0)


def test_bound_sweep_and_exponent(flock):
    tr, c = flock
    grid = np.geomspace(0.5, 5e-4, 8)
    rows = ly.bound_sweep(tr, c, grid)
    assert all(r.x_ok for r in rows)
    assert all(r.v_ok for r in rows if r.v_sim_source == "simulated")
    assert rows[-1].v_sim_source.startswith("monotone")
    assert {r.v_status for r in rows} <= {"sound", "inconclusive"}
    best = ly.sweep_optimal_eps0(rows, tr.t_end)
    assert best.T >= tr.t_end and best.x_m == min(r.x_m for r in rows if r.T >= tr.t_end)
    assert ly.sweep_optimal_eps0(rows, 1e9) is None


def test_exponent_fit_on_synthetic_power_law():
    T = np.geomspace(10, 1e4, 5)
    b = 2.0 * np.exp(-0.3 * T ** 0.4)
    assert ly.bound_exponent_fit(T, b, 2.0) == pytest.approx(0.4, rel=1e-10)
    with pytest.raises(ValueError):
        ly.bound_exponent_fit(T, np.full(5, 3.0), 2.0)
