import json

import numpy as np
import pytest

from mvjl.errors import CapabilityError
from mvjl.functional import GirsanovTilt
from mvjl.generator import apply_generator
from mvjl.measure import EmpiricalMeasure
from mvjl.model import FunctionalSpec, TestFunction, builtin_model, builtin_test_function
from mvjl.rng import RandomStream
from mvjl.simulate import GaussianInitial, PointInitial, SimulationConfig
from mvjl.verify import (VerificationReport, default_sample_points, feynman_kac_value, functional_from_value,
                         girsanov_system_check, ito_expectation_check, measure_flow_derivative_check,
                         pathwise_test, pide_residuals)

MODELS = ("linear_mean_field", "pure_diffusion", "zero_noise")
FUNCTIONS = ("constant", "linear", "quadratic", "second_moment", "mean_squared")

X = np.array([[0.7], [-1.3]])
MU = EmpiricalMeasure([0.5, 1.5, -0.25])


# ------------------------------------------------------------ functional_from_value

def test_constant_value_gives_zero_spec(lmf):
    spec = functional_from_value(lmf, builtin_test_function("constant", {"c": 2.0}))
    u = np.array([[0.3], [-0.8]])
    assert not np.any(spec.g1(0.0, X, MU))
    assert not np.any(spec.g2(0.0, X, MU))
    assert not np.any(spec.g3(0.0, X, MU, u))
    assert not np.any(spec.g4(0.0, X, MU, u))


def test_linear_value_spec(lmf):
    spec = functional_from_value(lmf, builtin_test_function("linear"))
    u = np.array([[0.3], [-0.8]])
    assert np.allclose(spec.g1(0.0, X, MU), -0.5 * X[:, 0] + 0.2 * MU.mean()[0], atol=1e-15)
    assert np.all(spec.g2(0.0, X, MU) == 0.3)
    assert np.allclose(spec.g3(0.0, X, MU, u), 0.1 * u[:, 0], atol=1e-15)


def test_second_moment_value_spec():
    m = builtin_model("linear_mean_field", {"c": 0.0})
    spec = functional_from_value(m, builtin_test_function("second_moment"))
    mu = EmpiricalMeasure.dirac([1.0], copies=64)
    x = np.array([[1.0]])
    assert not np.any(spec.g2(0.0, x, mu))
    assert not np.any(spec.g3(0.0, x, mu, np.array([[0.5]])))
    assert spec.g1(0.0, x, mu)[0] == pytest.approx(-1.0 + 0.09 + 0.01 * m.jump_domain.second_moment(), abs=1e-12)


def test_user_g4_split(lmf):
    V = builtin_test_function("quadratic")
    g4 = lambda t, x, mu, u: u[:, 0] ** 2 + x[:, 0]  # noqa: E731
    a = functional_from_value(lmf, V)
    b = functional_from_value(lmf, V, g4=g4)
    nu_g4 = np.array([lmf.jump_domain.integral(lambda u: u[:, 0] ** 2 + xi) for xi in X[:, 0]])
    assert np.allclose(a.g1(0.0, X, MU) - b.g1(0.0, X, MU), nu_g4, atol=1e-13)
    assert pide_residuals(lmf, V, b).stats["max_residual"] <= 1e-10


def test_missing_derivative_capability(lmf):
    V = TestFunction(value=lambda t, x, mu: x[:, 0], name="bare")
    with pytest.raises(CapabilityError):
        functional_from_value(lmf, V)


# ------------------------------------------------------------ pathwise

def test_pathwise_constant_zero(lmf):
    r = pathwise_test(lmf, builtin_test_function("constant"), FunctionalSpec.zero(),
                      SimulationConfig(T=1.0, n_steps=50, N=20), tol=0.0)
    assert r.passed and r.stats["max"] == 0.0


def test_pathwise_linear_exact(lmf):
    V = builtin_test_function("linear")
    cfg = SimulationConfig(T=1.0, n_steps=200, N=100, seed=1, initial=GaussianInitial((0.0,), 1.0))
    r = pathwise_test(lmf, V, functional_from_value(lmf, V), cfg, tol=1e-9)
    assert r.passed and r.stats["max"] <= 1e-9
    assert len(r.tables["intervals"]) == 5
    assert len(r.tables["discrepancies"]) == 5 * 100


def test_pathwise_linear_g2_perturbation_detected(lmf):
    V = builtin_test_function("linear")
    spec = functional_from_value(lmf, V)
    cfg = SimulationConfig(T=1.0, n_steps=200, N=200, seed=2)
    base = pathwise_test(lmf, V, spec, cfg, tol=1e-9)
    pert = pathwise_test(lmf, V, spec.perturbed(g2=0.1), cfg, tol=1e-9)
    assert not pert.passed
    assert pert.stats["rms"] > 10 * base.stats["rms"]


def test_pathwise_scheme_mode_exact_case(lmf):
    V = builtin_test_function("linear")
    r = pathwise_test(lmf, V, functional_from_value(lmf, V), SimulationConfig(T=1.0, n_steps=100, N=50))
    assert r.passed
    assert r.tolerances["mode"] == "scheme" and r.tolerances["tol"] == 1e-9


@pytest.fixture(scope="module")
def scheme_setup():
    m = builtin_model("linear_mean_field")
    V = builtin_test_function("quadratic", {"Q": [[0.1]]})
    spec = functional_from_value(m, V)
    cfg = SimulationConfig(T=1.0, n_steps=500, N=100, seed=3, initial=GaussianInitial((0.0,), 1.0))
    return m, V, spec, cfg, pathwise_test(m, V, spec, cfg)


def test_scheme_tolerance_consistent_passes(scheme_setup):
    *_, rep = scheme_setup
    assert rep.passed
    assert rep.tolerances["tol"] > 1e-9  # nonlinear V: genuine O(dt) discrepancy


@pytest.mark.parametrize("pert", [{"g1": 0.05}, {"g2": 0.1}, {"g3": 0.05}], ids=["g1", "g2", "g3"])
def test_scheme_perturbations_fail_at_10x(scheme_setup, pert):
    m, V, spec, cfg, rep = scheme_setup
    r = pathwise_test(m, V, spec.perturbed(**pert), cfg, tol=10 * rep.tolerances["tol"])
    assert not r.passed


# ------------------------------------------------------------ residuals

def test_sample_points_layout(lmf):
    pts = default_sample_points(lmf, T=2.0)
    assert len(pts) == 45
    assert sorted({p[0] for p in pts}) == [0.0, 1.0, 2.0]
    assert {p[3] for p in pts} == {"raw", "mollified_n100", "mollified_n10"}


@pytest.mark.parametrize("fn", FUNCTIONS)
@pytest.mark.parametrize("name", MODELS)
def test_round_trip(name, fn):
    model = builtin_model(name)
    V = builtin_test_function(fn)
    r = pide_residuals(model, V, functional_from_value(model, V))
    assert r.passed and r.stats["max_residual"] <= 1e-10 and r.stats["points"] == 45


def test_g3_perturbation_residual(lmf):
    V = builtin_test_function("quadratic")
    r = pide_residuals(lmf, V, functional_from_value(lmf, V).perturbed(g3=0.05))
    assert not r.passed
    assert abs(r.stats["max_r3"] - 0.05) <= 1e-10


def test_mollified_points_only(lmf):
    V = builtin_test_function("second_moment")
    pts = [p for p in default_sample_points(lmf) if p[3] == "mollified_n100"]
    r = pide_residuals(lmf, V, functional_from_value(lmf, V), sample_points=pts)
    assert r.passed and r.stats["points"] == 15


def test_report_serializable(lmf):
    V = builtin_test_function("linear")
    r = pide_residuals(lmf, V, functional_from_value(lmf, V))
    assert isinstance(r, VerificationReport)
    assert json.loads(json.dumps(r.to_dict()))["passed"] is True
    assert r.summary().startswith(r.name + ": PASS")


# ------------------------------------------------------------ Ito / flow

def test_ito_constant():
    m = builtin_model("pure_diffusion")
    r = ito_expectation_check(m, builtin_test_function("constant"), SimulationConfig(T=1.0, n_steps=40, N=50),
                              replicates=3, closed_form=lambda t: 0.0)
    assert r.passed and r.stats["max_abs_difference"] == 0.0


def test_ito_quadratic_closed_form():
    m = builtin_model("pure_diffusion", {"a": 0.0, "c": 0.0})
    cfg = SimulationConfig(T=1.0, n_steps=200, N=500, seed=5)
    r = ito_expectation_check(m, builtin_test_function("quadratic"), cfg, replicates=10,
                              closed_form=lambda t: 0.09 * t)
    assert r.passed
    assert all(row["lhs_pass"] and row["rhs_pass"] for row in r.tables["times"])


def test_ito_second_moment_linear_mean_field(lmf):
    # 30 replicates: with 10, the standard error itself is too noisy for a 3 se band
    cfg = SimulationConfig(T=1.0, n_steps=40, N=200, seed=6, initial=GaussianInitial((0.5,), 1.0))
    r = ito_expectation_check(lmf, builtin_test_function("second_moment"), cfg, replicates=30)
    assert r.passed


def test_ito_off_grid_time(lmf):
    with pytest.raises(ValueError):
        ito_expectation_check(lmf, builtin_test_function("constant"), SimulationConfig(T=1.0, n_steps=10, N=5),
                              replicates=2, times=[0.33])


def test_flow_constant_rejected():
    m = builtin_model("pure_diffusion")
    with pytest.raises(ValueError):
        measure_flow_derivative_check(m, builtin_test_function("constant"), SimulationConfig(T=1.0, n_steps=40, N=5))


def test_flow_second_moment_pure_diffusion():
    m = builtin_model("pure_diffusion", {"a": 0.0, "c": 0.0})
    cfg = SimulationConfig(T=1.0, n_steps=100, N=1000, seed=7, initial=PointInitial((0.5,)))
    r = measure_flow_derivative_check(m, builtin_test_function("second_moment"), cfg, replicates=10,
                                      closed_form=lambda t: 0.09)
    assert r.passed
    assert all(row["rhs"] == pytest.approx(0.09, abs=1e-14) for row in r.tables["times"])


def test_flow_mean_squared_zero_noise():
    a = -0.5
    m = builtin_model("zero_noise", {"a": a, "c": 0.0})
    cfg = SimulationConfig(T=1.0, n_steps=200, N=50, seed=8, initial=GaussianInitial((1.0,), 0.5))
    H = builtin_test_function("mean_squared")
    r = measure_flow_derivative_check(m, H, cfg, replicates=2)
    assert r.passed
    for row in r.tables["times"]:
        # rhs = 2 a mean^2 on the simulated flow
        assert row["rhs"] < 0


# ------------------------------------------------------------ Feynman-Kac

def _fk(model, Phi, g1, g4, t, x, M=2000, mu=None, cfg=None, seed=0):
    cfg = cfg or SimulationConfig(T=1.0, n_steps=50, N=64)
    mu = mu or EmpiricalMeasure(np.linspace(-1, 1, 16))
    return feynman_kac_value(model, Phi, g1, g4, t, [x], mu, cfg, M, stream=RandomStream(seed))


def zero1(t, x, mu):
    return np.zeros(x.shape[0])


def zero4(t, x, mu, u):
    return np.zeros(x.shape[0])


def test_fk_unit_payoff(lmf):
    assert _fk(lmf, lambda x, mu: np.ones(x.shape[0]), zero1, zero4, 0.0, 0.3) == (1.0, 0.0)


def test_fk_martingale():
    m = builtin_model("linear_mean_field", {"a": 0.0, "c": 0.0})
    v, se = _fk(m, lambda x, mu: x[:, 0], zero1, zero4, 0.2, 0.4, M=10_000)
    assert se > 0 and abs(v - 0.4) <= 3 * se


def test_fk_deterministic_running_cost(lmf):
    v, se = _fk(lmf, lambda x, mu: np.zeros(x.shape[0]), lambda t, x, mu: np.ones(x.shape[0]), zero4, 0.4, 0.0)
    assert v == pytest.approx(-0.6, abs=1e-12) and se == 0.0


def test_fk_g4_integrates_against_nu(lmf):
    v, _ = _fk(lmf, lambda x, mu: np.zeros(x.shape[0]), zero1, lambda t, x, mu, u: np.ones(x.shape[0]), 0.0, 0.0)
    assert v == pytest.approx(-lmf.jump_domain.rate, abs=1e-12)


def test_fk_reproduces_linear_value(lmf):
    V = builtin_test_function("linear")
    spec = functional_from_value(lmf, V)
    mu = EmpiricalMeasure(np.random.default_rng(0).normal(1.0, 0.5, size=(64, 1)))
    cfg = SimulationConfig(T=1.0, n_steps=100, N=1000)
    for q, (t, x) in enumerate([(0.0, 0.0), (0.5, 1.0), (0.2, -1.0)]):
        v, se = _fk(lmf, lambda xx, mm: V.value(1.0, xx, mm), spec.g1, spec.g4, t, x, M=5000, mu=mu, cfg=cfg,
                    seed=q)
        assert abs(v - x) <= 3 * se + cfg.dt


def test_fk_off_grid(lmf):
    with pytest.raises(ValueError):
        _fk(lmf, lambda x, mu: x[:, 0], zero1, zero4, 0.013, 0.0)


# ------------------------------------------------------------ Girsanov system

def test_girsanov_trivial():
    m = builtin_model("pure_diffusion", {"a": 0.0, "c": 0.0, "sigma0": 0.3})
    r = girsanov_system_check(m, GirsanovTilt.constant(0.0, 1.0), builtin_test_function("constant"),
                              SimulationConfig(T=1.0, n_steps=50, N=50))
    assert r.passed
    assert r.children["residuals"].stats["max_residual"] == 0.0
    assert r.children["pathwise"].stats["max"] == 0.0


@pytest.fixture
def drift_tilt_setup():
    m = builtin_model("pure_diffusion", {"a": 0.0, "c": 0.0, "sigma0": 0.3, "b0": 0.09})
    return m, GirsanovTilt.constant(0.3, 1.0), SimulationConfig(T=1.0, n_steps=100, N=200, seed=4)


def test_girsanov_consistent_value(drift_tilt_setup):
    m, tilt, cfg = drift_tilt_setup
    V = builtin_test_function("linear", {"c": [1.0], "rate": -0.045})
    r = girsanov_system_check(m, tilt, V, cfg)
    assert r.passed
    assert r.children["residuals"].stats["max_r2"] == 0.0
    assert r.stats["exponent_forms_gap"] <= 1e-10


def test_girsanov_mismatched_value(drift_tilt_setup):
    m, tilt, cfg = drift_tilt_setup
    V = builtin_test_function("linear", {"c": [2.0], "rate": -0.045})
    r = girsanov_system_check(m, tilt, V, cfg)
    assert not r.passed and not r.children["pathwise"].passed
    assert r.children["residuals"].stats["max_r2"] == pytest.approx(0.3, abs=1e-15)


def test_girsanov_thinned_consistent():
    m = builtin_model("linear_mean_field", {"a": 0.0, "c": 0.0, "sigma0": 0.3, "b0": 0.09})
    tilt = GirsanovTilt.constant(0.3, 0.5)
    r = girsanov_system_check(m, tilt, builtin_test_function("linear", {"c": [1.0], "rate": -0.045}),
                              SimulationConfig(T=1.0, n_steps=50, N=100))
    assert r.stats["functional_vs_log_weight"] <= 1e-10
    assert r.stats["exponent_forms_gap"] <= 1e-10
    # lambda = 1/2 is not exp(V(x + f) - V(x)) for this V
    assert r.children["residuals"].stats["max_r4"] > 0.1
