import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apq import chain
from apq.chain import Policy
from apq.model import Instance, Uniform
from conftest import instances, load, policies


def generator_null_space(inst, rates):
    """Stationary law from the CTMC generator by a dense least-squares solve."""
    N = inst.N
    Q = np.zeros((N + 1, N + 1))
    for n in range(N):
        Q[n, n + 1] = rates[n]
    for n in range(1, N + 1):
        Q[n, n - 1] = inst.gamma[n]
    np.fill_diagonal(Q, -Q.sum(axis=1))
    A = np.vstack([Q.T, np.ones(N + 1)])
    b = np.zeros(N + 2)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


def small_instance(**kw):
    base = dict(max_rate=4.0, mu=1.0, m=1, N=2, theta_s=1.0, theta_q=1.0, c_h=1.0, c_s=0.0, c_q=0.0,
                distribution=Uniform(20, 50))
    base.update(kw)
    return Instance(**base)


def test_hand_computed_two_state_chain():
    # gamma_1 = 2, gamma_2 = 3; rates 2, 2 give weights 1, 1, 2/3
    inst = small_instance()
    P = chain.steady_state(inst, [2.0, 2.0, 0.0]).probs
    assert np.allclose(P, [3 / 8, 3 / 8, 1 / 4], atol=1e-15)


@given(st.data())
def test_product_form_matches_generator(data):
    inst = data.draw(instances(distributions=[Uniform(20, 50)]))
    rates = data.draw(policies(inst))
    P = chain.steady_state(inst, rates).probs
    ref = generator_null_space(inst, rates)
    # lstsq on an ill-conditioned generator is itself only ~1e-10 accurate
    assert np.allclose(P, ref, atol=1e-8)
    assert abs(P.sum() - 1.0) < 1e-12


@given(st.data())
def test_reformulated_gain_identity(data):
    inst = data.draw(instances())
    rates = data.draw(policies(inst))
    g1 = chain.gain(inst, rates)
    g2 = chain.reformulated_gain(inst, rates)
    assert g1 == pytest.approx(g2, rel=1e-9, abs=1e-9)


@given(st.data())
def test_flow_balance(data):
    inst = data.draw(instances())
    rates = data.draw(policies(inst))
    P = chain.steady_state(inst, rates).probs
    inflow = chain.effective_arrival_rate(inst, rates)
    outflow = float(np.dot(inst.gamma, P))
    assert inflow == pytest.approx(outflow, rel=1e-10, abs=1e-12)


@given(st.data())
def test_revenue_minus_cost_is_gain(data):
    inst = data.draw(instances())
    rates = data.draw(policies(inst))
    R, C = chain.revenue_and_cost(inst, rates)
    assert R - C == pytest.approx(chain.gain(inst, rates), rel=1e-12, abs=1e-12)
    assert C >= 0


def test_unreachable_states_and_extremes():
    inst = load("rise_fall").replace(N=200)
    rates = np.full(201, inst.max_rate)
    rates[-1] = 0
    P = chain.steady_state(inst, rates).probs
    assert np.all(np.isfinite(P)) and abs(P.sum() - 1) < 1e-12
    rates[3:] = 0
    P = chain.steady_state(inst, rates).probs
    assert np.all(P[4:] == 0)
    zero = chain.steady_state(inst, np.zeros(201)).probs
    assert zero[0] == 1 and zero[1:].sum() == 0
    # huge ratios overflow the plain weights but not the log-space probabilities
    huge = small_instance(max_rate=1e6, mu=1e-6, theta_s=0.0, theta_q=1e-6, N=100)
    r = np.full(101, 1e6)
    r[-1] = 0
    P = chain.steady_state(huge, r).probs
    assert np.all(np.isfinite(P)) and P[-1] > 0.99


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy([1.0, 1.0])
    with pytest.raises(ValueError):
        Policy([-1.0, 0.0])
    with pytest.raises(ValueError):
        Policy([np.nan, 0.0])
    with pytest.raises(ValueError):
        Policy([0.0])
    inst = small_instance()
    with pytest.raises(ValueError):
        chain.gain(inst, [1.0, 0.0])
    with pytest.raises(ValueError):
        chain.gain(inst, [5.0, 1.0, 0.0])
    p = Policy([1.0, 2.0, 0.0])
    with pytest.raises(ValueError):
        p.rates[0] = 3.0


def test_threshold_constructors():
    assert Policy.cutoff(5, 3, 2.0).rates.tolist() == [2, 2, 2, 0, 0, 0]
    assert Policy.cutoff(5, 5, 2.0).rates.tolist() == [2, 2, 2, 2, 2, 0]
    assert Policy.two_price(6, 2, 4, 3.0, 1.0).rates.tolist() == [3, 3, 1, 1, 0, 0, 0]
    assert Policy.two_price(6, 2, 1, 3.0, 1.0).rates.tolist() == [3, 0, 0, 0, 0, 0, 0]
