import math

import numpy as np
import pytest

from apq import bounds, chain, mdp
from apq.bounds import bound_report, cost_bound_factor, erlang_a_infinite, tightness_ratios
from apq.chain import Policy
from apq.heuristics import best_two_price
from apq.model import Exponential, Uniform
from conftest import load, random_instance


class NonRegular(Uniform):
    regular = False


def test_poisson_closed_form():
    # m=1 with mu + theta_s = theta_q = r gives Poisson(lambda/r) weights
    inst = load("rise_fall").replace(mu=1.5, theta_s=0.5, theta_q=2.0)
    P_s, P_q = erlang_a_infinite(inst)
    assert P_s == pytest.approx(math.exp(-inst.max_rate / 2.0), rel=1e-13)
    assert P_s + P_q == pytest.approx(1.0, abs=1e-14)


def test_matches_long_finite_buffer():
    inst = load("three_server_ratios").replace(N=500)
    P_s, P_q = erlang_a_infinite(inst)
    P = chain.steady_state(inst, np.r_[np.full(500, inst.max_rate), 0.0]).probs
    assert P_s == pytest.approx(P[: inst.m].sum(), rel=1e-12)
    assert P_q == pytest.approx(P[inst.m :].sum(), rel=1e-12)


def test_fast_abandonment_concentrates_on_all_busy_state():
    inst = load("three_server_ratios").replace(theta_q=1e6)
    P_s, P_q = erlang_a_infinite(inst)
    P = chain.steady_state(inst.replace(N=inst.m), np.r_[np.full(inst.m, inst.max_rate), 0.0]).probs
    assert P_q == pytest.approx(P[inst.m], rel=1e-4)


def test_idle_probability_decreases_in_load():
    base = load("three_server_ratios")
    vals = [erlang_a_infinite(base.replace(max_rate=lam))[0] for lam in np.linspace(0.5, 80, 20)]
    assert np.all(np.diff(vals) < 0)


def test_single_threshold_cost_factor_limit():
    # with K=1 the ratio is M/(gamma_1 + delta), maximal as delta -> 0
    inst = load("rise_fall")
    M = max(inst.mu + inst.theta_s, inst.theta_q)
    assert cost_bound_factor(inst, 1, 1) == pytest.approx(M / inst.gamma[1], rel=1e-12)


@pytest.mark.parametrize("seed", range(25))
def test_bounds_hold_on_random_instances(seed):
    rng = np.random.default_rng(1000 + seed)
    inst = random_instance(rng)
    res = mdp.solve(inst)
    rep = bound_report(inst, res)
    tol = rep.slack()
    for row in rep.cutoff:
        assert row.revenue >= row.revenue_lower_bound - tol
        if row.cost_upper_bound is not None:
            assert row.cost <= row.cost_upper_bound + tol
    assert res.gain - rep.g_T <= rep.gap_bound + tol
    assert rep.all_ok()
    assert abs(rep.P_s_T + rep.P_q_T + rep.P_N_T - 1) <= 1e-12
    assert abs(rep.P_s_inf + rep.P_q_inf - 1) <= 1e-12
    for p in (rep.P_s_T, rep.P_q_T, rep.P_N_T, rep.P_s_inf, rep.P_q_inf):
        assert -1e-15 <= p <= 1 + 1e-15


def test_myopic_quantities():
    inst = load("three_server_ratios")
    rep = bound_report(inst, mdp.solve(inst))
    cc = inst.costs
    d_s, R_s = inst.maximize_revenue_plus_linear(-cc.C_s)
    assert (rep.myopic_delta_s, rep.myopic_R_s) == (d_s, R_s)
    grid = np.linspace(0, inst.max_rate, 100001)
    assert rep.myopic_R_q >= np.max(inst.revenue_rate(grid) - cc.C_q * grid) - 1e-9


def test_cost_bound_not_applicable_without_abandonment_cost():
    inst = load("three_server_ratios").replace(c_s=0.0)
    rep = bound_report(inst, mdp.solve(inst))
    assert rep.cost_case is None
    assert all(r.cost_upper_bound is None and r.cost_ok is None for r in rep.cutoff)


def test_non_regular_distribution_omits_regular_bounds():
    inst = load("three_server_ratios").replace(distribution=NonRegular(20, 50))
    rep = bound_report(inst, mdp.solve(inst))
    assert rep.gap_bound is None and rep.gap_ok is None
    assert all(r.revenue_ok is None for r in rep.cutoff)
    assert rep.to_json()["regular"] is False


def test_equal_cost_coefficients_large_buffer():
    inst = load("rise_fall").replace(N=200)
    # choose c_q so that C_q = c_h/theta_q + c_q equals C_s
    inst = inst.replace(c_q=inst.costs.C_s - inst.c_h / inst.theta_q)
    assert inst.costs.C_s == pytest.approx(inst.costs.C_q, rel=1e-14)
    res = mdp.solve(inst)
    rep = bound_report(inst, res)
    assert rep.gap_bound == pytest.approx(rep.myopic_R_s * rep.P_N_T, abs=1e-12)
    assert res.gain - rep.g_T <= rep.myopic_R_s * rep.P_N_T + 1e-6


def test_fifteen_nineteenths_preconditions():
    # joining behind a busy server costs more than any customer will pay
    inst = load("rise_fall").replace(N=3, c_s=0.0, c_h=2.0, c_q=60.0, theta_q=30.0)
    cc = inst.costs
    assert cc.C_s <= cc.C_q and inst.distribution.survival(cc.C_s) > 0
    rep = bound_report(inst, mdp.solve(inst))
    assert rep.ratio_15_19_applicable
    assert rep.ratio_C >= 15 / 19 - 1e-7 and rep.ratio_15_19_ok


def test_tightness_improves_with_service_rate():
    base = load("rise_fall").replace(
        max_rate=10.0, N=6, theta_s=10.0, theta_q=10.0, c_s=3.0, c_q=27.0, c_h=11.0,
        distribution=Exponential(35.0),
    )
    rev, cost = [], []
    for mu in (10.0, 100.0, 1000.0):
        inst = base.replace(mu=mu)
        r, c = tightness_ratios(inst, mdp.solve(inst))
        rev.append(r)
        cost.append(c)
    assert np.all(np.diff(rev) > 0) and np.all(np.diff(cost) > 0)
    assert max(rev) <= 1 + 1e-12 and max(cost) <= 1 + 1e-12


def test_report_serializes():
    inst = load("single_server_ratios")
    js = bound_report(inst, mdp.solve(inst), two_price=best_two_price(inst)).to_json()
    assert js["all_ok"] is True
    assert {"revenue_lower_bound", "cost_upper_bound"} <= set(js["cutoff"][0])


def test_cutoff_rows_use_effective_rate():
    inst = load("three_server_ratios")
    res = mdp.solve(inst)
    rep = bound_report(inst, res)
    row = rep.cutoff[-1]
    pol = Policy.cutoff(inst.N, row.K, rep.effective_rate)
    assert row.revenue == pytest.approx(chain.revenue_and_cost(inst, pol)[0], rel=1e-14)
    assert bounds.RATIO_15_19 == 15 / 19
