import numpy as np
import pytest

from apq import chain, mdp
from apq.sim import SimConfig, simulate
from conftest import load, random_instance


def test_zero_policy_has_zero_gain():
    inst = load("rise_fall")
    est = simulate(inst, np.zeros(inst.N + 1), SimConfig(horizon=100.0, replications=3, seed=1))
    assert est.gain == 0.0 and est.gain_se == 0.0
    assert est.occupancy[0] == 1.0 and est.events == 0


def test_fixed_seed_is_reproducible():
    inst = load("three_server_ratios")
    pol = mdp.solve(inst).policy
    cfg = SimConfig(horizon=200.0, warmup=10.0, replications=4, seed=7)
    a, b = simulate(inst, pol, cfg), simulate(inst, pol, cfg)
    assert a.to_json() == b.to_json()
    c = simulate(inst, pol, SimConfig(horizon=200.0, warmup=10.0, replications=4, seed=8))
    assert c.gain != a.gain


def test_occupancy_matches_steady_state():
    inst = load("rise_fall")
    pol = mdp.solve(inst).policy
    est = simulate(inst, pol, SimConfig(horizon=5000.0, warmup=50.0, replications=20, seed=3))
    P = chain.steady_state(inst, pol).probs
    assert abs(est.occupancy.sum() - 1) < 1e-9
    z = np.abs(est.occupancy - P) / np.maximum(est.occupancy_se, 1e-12)
    assert np.all(z[P > 1e-3] <= 4.0)


@pytest.mark.parametrize("seed", range(6))
def test_gain_and_little_law(seed):
    rng = np.random.default_rng(500 + seed)
    inst = random_instance(rng)
    pol = np.r_[rng.uniform(0, inst.max_rate, inst.N), 0.0]
    H = 2e4 / inst.uniformization_rate * 10
    est = simulate(inst, pol, SimConfig(horizon=H, warmup=H / 20, replications=30, seed=seed))
    assert est.gain_z(chain.gain(inst, pol)) <= 4.0
    assert abs(est.little_residual) <= 4.0 * est.little_se + 1e-12
    assert est.L == pytest.approx(est.effective_rate * est.T, rel=0.05, abs=1e-3)


def test_single_replication_uses_batches():
    inst = load("three_server_ratios")
    pol = mdp.solve(inst).policy
    est = simulate(inst, pol, SimConfig(horizon=2000.0, warmup=20.0, replications=1, seed=11))
    assert est.gain_se > 0 and est.replications == 1
    assert est.gain_z(mdp.solve(inst).gain) <= 4.0


def test_costs_only_when_abandonment_happens():
    # no abandonment clocks in service and a huge queue cost: the only losses are holding
    inst = load("rise_fall").replace(theta_s=0.0, c_s=1e6, N=1)
    pol = [inst.max_rate, 0.0]
    est = simulate(inst, pol, SimConfig(horizon=3000.0, warmup=10.0, replications=10, seed=2))
    assert est.gain_z(chain.gain(inst, pol)) <= 4.0


@pytest.mark.parametrize(
    "kw", [dict(horizon=10.0, warmup=10.0), dict(horizon=-1.0), dict(horizon=10.0, replications=0),
           dict(horizon=10.0, seed=-1), dict(horizon=float("inf"))],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_policy_must_fit_instance():
    inst = load("rise_fall")
    with pytest.raises(ValueError):
        simulate(inst, [1.0, 0.0], SimConfig(horizon=10.0))
