import dataclasses

import numpy as np
import pytest

from mvjl.errors import SimulationError
from mvjl.measure import EmpiricalMeasure, wasserstein2
from mvjl.model import CoefficientModel, JumpDomain, builtin_model
from mvjl.rng import RandomStream
from mvjl.simulate import (AtomsInitial, GaussianInitial, PointInitial, SimulationConfig, advance,
                           independent_copies, replay, simulate_decoupled, simulate_particle_system)


def ou(a=-0.5, sigma0=0.3):
    return builtin_model("pure_diffusion", {"a": a, "c": 0.0, "sigma0": sigma0})


def driftless(sigma0=0.3):
    return builtin_model("pure_diffusion", {"a": 0.0, "c": 0.0, "sigma0": sigma0})


# ------------------------------------------------------------ config

def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(T=0.0, n_steps=10, N=1)
    with pytest.raises(ValueError):
        SimulationConfig(T=1.0, n_steps=0, N=1)
    with pytest.raises(ValueError):
        SimulationConfig(T=1.0, n_steps=10, N=0)
    cfg = SimulationConfig(T=2.0, n_steps=8, N=3, t0=1.0)
    assert cfg.dt == 0.125 and cfg.time(8) == 2.0


def test_refined_pairing():
    cfg = SimulationConfig(T=1.0, n_steps=10, N=2, refinement=2)
    assert (cfg.refined().n_steps, cfg.refined().refinement) == (20, 1)
    assert SimulationConfig(T=1.0, n_steps=10, N=2).refined().n_steps == 20


def test_initial_samplers():
    s = RandomStream(0)
    idx = np.arange(5)
    assert np.all(PointInitial((1.0, 2.0))(s, idx, 2) == [1.0, 2.0])
    mu = EmpiricalMeasure([0.0, 10.0])
    assert np.array_equal(AtomsInitial(mu)(s, idx, 1)[:, 0], [0, 10, 0, 10, 0])
    g = GaussianInitial((1.0,), 0.5)(s, np.arange(20_000), 1)
    assert abs(g.mean() - 1.0) < 0.02 and abs(g.std() - 0.5) < 0.02
    assert PointInitial((1.0,)).describe()["kind"] == "point"


# ------------------------------------------------------------ examples

def test_zero_noise_constant_paths():
    m = builtin_model("zero_noise", {"a": 0.0, "c": 0.0})
    b = simulate_particle_system(m, SimulationConfig(T=1.0, n_steps=50, N=20, initial=PointInitial((1.7,))))
    assert np.all(b.states == 1.7)


def test_constant_drift_exact():
    m = builtin_model("zero_noise", {"a": 0.0, "c": 0.0, "b0": 1.0})
    cfg = SimulationConfig(T=1.0, n_steps=64, N=3, initial=PointInitial((0.25,)))
    b = simulate_particle_system(m, cfg)
    assert np.array_equal(b.states[:, :, 0], np.tile(0.25 + b.times[:, None], (1, 3)))


def test_ou_mean():
    cfg = SimulationConfig(T=1.0, n_steps=1000, N=10_000, seed=3, initial=PointInitial((1.0,)))
    xT = simulate_particle_system(ou(), cfg).state(1000)[:, 0]
    se = xT.std(ddof=1) / np.sqrt(xT.size)
    # Euler bias (1 - 0.5 dt)^n - e^{-0.5} is about 1.5e-4
    assert abs(xT.mean() - np.exp(-0.5)) <= 3 * se + 5e-4


def test_ou_bias_budget_richardson():
    cfg = SimulationConfig(T=1.0, n_steps=50, N=10_000, seed=4, initial=PointInitial((1.0,)), refinement=2)
    coarse = simulate_particle_system(ou(), cfg).state(50)[:, 0]
    fine = simulate_particle_system(ou(), cfg.refined()).state(100)[:, 0]
    C_dt = 2 * abs(coarse.mean() - fine.mean())
    se = coarse.std(ddof=1) / np.sqrt(coarse.size)
    exact = np.exp(-0.5)
    assert abs(coarse.mean() - exact) <= 3 * se + C_dt
    # Richardson recovers the deterministic Euler bias of the mean
    assert C_dt == pytest.approx(2 * abs((1 - 0.5 / 50) ** 50 - (1 - 0.25 / 50) ** 100), rel=0.05)


def test_blow_up_reports_particle_and_step():
    jd = JumpDomain.uniform_ball(1.0, 1.0)
    m = CoefficientModel(1, 1, lambda t, x, mu: 1e200 * x * x, lambda t, x, mu: np.zeros((x.shape[0], 1, 1)),
                         lambda t, x, mu, u: np.zeros_like(x), jd)
    with pytest.raises(SimulationError) as e, np.errstate(all="ignore"):
        simulate_particle_system(m, SimulationConfig(T=1.0, n_steps=10, N=2, initial=PointInitial((1.0,))))
    assert e.value.step >= 1 and 0 <= e.value.particle < 2


# ------------------------------------------------------------ invariants

@pytest.mark.parametrize("threads", [2, 3, 7])
def test_determinism_across_threads(lmf, threads):
    cfg = SimulationConfig(T=1.0, n_steps=40, N=37, seed=11, initial=GaussianInitial((0.0,), 1.0))
    a = simulate_particle_system(lmf, cfg, threads=1)
    b = simulate_particle_system(lmf, cfg, threads=threads)
    for field in ("states", "dB", "ev_step", "ev_particle", "ev_mark", "ev_pre"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_seed_changes_output(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=10, N=5)
    a = simulate_particle_system(lmf, cfg)
    b = simulate_particle_system(lmf, cfg.replace(seed=1))
    assert not np.array_equal(a.states, b.states)


@pytest.mark.parametrize("refinement", [1, 2])
def test_replay_bit_exact(lmf, refinement):
    cfg = SimulationConfig(T=1.0, n_steps=100, N=50, seed=2, initial=GaussianInitial((0.5,), 1.0),
                           refinement=refinement)
    b = simulate_particle_system(lmf, cfg)
    assert b.accepted_count() > 0
    assert np.array_equal(replay(b), b.states)


def test_replay_decoupled(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=40, N=30, seed=2)
    ens = simulate_particle_system(lmf, cfg)
    dec = simulate_decoupled(lmf, ens, [0.3], 5, cfg, RandomStream(9), n_paths=20)
    assert np.array_equal(replay(dec), dec.states)


def test_bundle_arrays_read_only(lmf):
    b = simulate_particle_system(lmf, SimulationConfig(T=1.0, n_steps=5, N=3))
    with pytest.raises(ValueError):
        b.states[0, 0, 0] = 1.0


def test_law_flow_is_empirical_column(lmf):
    b = simulate_particle_system(lmf, SimulationConfig(T=1.0, n_steps=10, N=8, initial=GaussianInitial((0.0,), 1.0)))
    for k in range(11):
        assert b.measure(k) == EmpiricalMeasure(b.states[k])


def test_conservation_under_zero_dynamics():
    m = builtin_model("zero_noise", {"a": 0.0, "c": 0.0})
    b = simulate_particle_system(m, SimulationConfig(T=1.0, n_steps=20, N=30, initial=GaussianInitial((0.0,), 2.0)))
    assert all(b.measure(k) == b.measure(0) for k in range(21))


def test_events_well_formed(lmf):
    b = simulate_particle_system(lmf, SimulationConfig(T=1.0, n_steps=50, N=40, seed=5))
    events = b.jump_events()
    assert len(events) == b.accepted_count() > 0
    assert all(np.abs(e.mark).max() <= lmf.jump_domain.alpha for e in events)
    assert np.all(np.diff(b.ev_step) >= 0)
    for e in events[:20]:
        assert np.array_equal(e.pre_state, b.state(e.step)[e.particle])


def test_compensated_jump_mean_zero():
    m = builtin_model("linear_mean_field", {"a": 0.0, "c": 0.0, "sigma0": 0.0, "gamma": 0.1})
    cfg = SimulationConfig(T=1.0, n_steps=100, N=10_000, seed=6)
    b = simulate_particle_system(m, cfg)
    total = b.state(100)[:, 0] - b.state(0)[:, 0]
    assert np.count_nonzero(total) > 0
    se = total.std(ddof=1) / np.sqrt(total.size)
    assert abs(total.mean()) <= 3 * se


def test_jump_count_matches_rate(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=100, N=5000, seed=8)
    n = simulate_particle_system(lmf, cfg).accepted_count()
    expected = lmf.jump_domain.rate * cfg.T * cfg.N
    assert abs(n - expected) <= 3 * np.sqrt(expected)


# ------------------------------------------------------------ decoupled

def test_decoupled_coincides_with_deterministic_ensemble():
    m = builtin_model("zero_noise", {"a": -0.5, "c": 0.2})
    atoms = EmpiricalMeasure([-1.0, 0.5, 2.0])
    cfg = SimulationConfig(T=1.0, n_steps=50, N=3, initial=AtomsInitial(atoms))
    ens = simulate_particle_system(m, cfg)
    dec = simulate_decoupled(m, ens.law_flow, [0.5], 0, cfg, RandomStream(1))
    assert np.array_equal(dec.states[:, 0], ens.states[:, 1])


def test_decoupled_driftless_moments():
    m = driftless(0.3)
    cfg = SimulationConfig(T=1.0, n_steps=100, N=10)
    ens = simulate_particle_system(m, cfg)
    s, x = 20, 0.7
    dec = simulate_decoupled(m, ens, [x], s, cfg, RandomStream(2), n_paths=10_000)
    end = dec.state(100)[:, 0]
    se = end.std(ddof=1) / np.sqrt(end.size)
    assert abs(end.mean() - x) <= 3 * se
    sq = end**2
    target = x**2 + 0.09 * (cfg.T - cfg.time(s))
    assert abs(sq.mean() - target) <= 3 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_decoupled_law_flow_length_checked(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=10, N=4)
    ens = simulate_particle_system(lmf, cfg)
    with pytest.raises(ValueError):
        simulate_decoupled(lmf, ens.law_flow[:5], [0.0], 0, cfg, RandomStream(0))
    rel = simulate_decoupled(lmf, ens.law_flow[3:], [0.0], 3, cfg, RandomStream(0))
    absolute = simulate_decoupled(lmf, ens.law_flow, [0.0], 3, cfg, RandomStream(0))
    assert np.array_equal(rel.states, absolute.states)


def test_decoupled_measure_is_frozen(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=10, N=6, initial=GaussianInitial((0.0,), 1.0))
    ens = simulate_particle_system(lmf, cfg)
    dec = simulate_decoupled(lmf, ens, [0.0], 0, cfg, RandomStream(3), n_paths=4)
    assert not dec.self_consistent
    assert dec.measure(7) == ens.measure(7)


# ------------------------------------------------------------ independent copies

def test_copies_k1_matches_single_run(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=20, N=1, seed=4)
    base = RandomStream(4).spawn(99)
    (one,) = independent_copies(lmf, 1, cfg, stream=base)
    direct = simulate_particle_system(lmf, cfg, stream=base.spawn(0))
    assert np.array_equal(one.states, direct.states)


def test_copies_zero_noise_identical():
    m = builtin_model("zero_noise")
    copies = independent_copies(m, 5, SimulationConfig(T=1.0, n_steps=20, N=1, initial=PointInitial((1.0,))))
    assert all(np.array_equal(c.states, copies[0].states) for c in copies)


def test_copies_independent(lmf):
    copies = independent_copies(lmf, 3, SimulationConfig(T=1.0, n_steps=20, N=1))
    assert not np.array_equal(copies[0].dB, copies[1].dB)
    with pytest.raises(ValueError):
        independent_copies(lmf, 0, SimulationConfig(T=1.0, n_steps=20, N=1))


def test_copies_along_law_flow(lmf):
    cfg = SimulationConfig(T=1.0, n_steps=20, N=50, initial=GaussianInitial((0.0,), 1.0))
    ref = simulate_particle_system(lmf, cfg)
    copies = independent_copies(lmf, 8, cfg, law_flow=ref)
    assert len(copies) == 8 and all(c.N == 1 for c in copies)
    assert copies[3].measure(10) == ref.measure(10)


def test_propagation_of_chaos_trend():
    m = builtin_model("linear_mean_field")
    init = GaussianInitial((0.0,), 1.0)
    cfg = SimulationConfig(T=1.0, n_steps=50, N=2048, seed=1, initial=init)
    ref = simulate_particle_system(m, cfg)
    ref_T = ref.measure(50)
    Ks = (64, 128, 256)
    dist = np.zeros(len(Ks))
    for seed in range(5):
        for n, K in enumerate(Ks):
            copies = independent_copies(m, K, cfg, law_flow=ref, stream=RandomStream(100 + seed))
            emp = EmpiricalMeasure(np.concatenate([c.state(50) for c in copies]))
            dist[n] += wasserstein2(emp.replicate(2048 // K), ref_T) ** 2 / 5
    assert sum(dist[i + 1] < dist[i] for i in range(len(Ks) - 1)) >= 1
    assert dist[-1] < dist[0]


def test_advance_matches_manual_step(lmf):
    x = np.array([[0.5], [-1.0]])
    mu = EmpiricalMeasure(x)
    dB = np.array([[0.1], [-0.2]])
    out = advance(lmf, 0.0, 0.01, x, mu, dB, np.array([1]), np.array([[0.5]]))
    b = -0.5 * x + 0.2 * mu.mean()
    manual = x + 0.01 * b + 0.3 * dB + np.array([[0.0], [0.05]]) - 0.01 * lmf.compensator(0.0, x, mu)
    assert np.allclose(out, manual, atol=1e-15)
