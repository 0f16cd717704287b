"""Coefficients, jump domains, test functions and additive-functional integrands.

Conventions
-----------
All user maps are vectorized over a leading batch axis of states:

* ``drift(t, x, mu)`` with ``x`` of shape ``(n, d)`` returns ``(n, d)``.
* ``diffusion(t, x, mu)`` returns ``(n, d, m)``.
* ``jump(t, x, mu, u)`` with marks ``u`` of shape ``(n, p)`` returns ``(n, d)``.

The measure argument is always an :class:`~mvjl.measure.EmpiricalMeasure`
shared by the whole batch.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, DomainError, EvaluationError
from .measure import EmpiricalMeasure, second_moment, wasserstein2
from .rng import QUADRATURE, SAMPLE, RandomStream


@dataclass(frozen=True, eq=False)
class JumpDomain:
    """Finite-activity jump data on U_0 = {|u| <= alpha} in U = R^p.

    ``sampler`` maps an ``(n, draws_per_mark)`` array of uniforms to ``(n, p)``
    marks distributed as nu / rate.  ``nodes`` and ``weights`` form the fixed
    quadrature for integrals against nu; every module uses this same rule.
    """

    p: int
    alpha: float
    rate: float
    sampler: Callable[[np.ndarray], np.ndarray]
    draws_per_mark: int
    nodes: np.ndarray
    weights: np.ndarray
    description: str = ""

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, self.p)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.alpha <= 0 or not np.isfinite(self.alpha):
            raise DomainError(f"truncation radius must be positive, got {self.alpha}")
        if not (0 < self.rate < np.inf):
            raise DomainError(f"total jump rate must be finite and positive, got {self.rate}")
        if nodes.shape[0] != weights.shape[0] or nodes.shape[0] == 0:
            raise DomainError("quadrature needs one positive weight per node")
        if np.any(np.linalg.norm(nodes, axis=1) > self.alpha * (1 + 1e-12)):
            raise DomainError("quadrature node outside U_0")
        if np.any(weights <= 0):
            raise DomainError("quadrature weights must be positive")
        if abs(weights.sum() - self.rate) > 1e-10 * max(1.0, self.rate):
            raise DomainError(f"quadrature weights sum to {weights.sum()}, expected {self.rate}")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def sample(self, uniforms: np.ndarray) -> np.ndarray:
        u = np.asarray(self.sampler(uniforms), dtype=np.float64).reshape(-1, self.p)
        if np.any(np.linalg.norm(u, axis=1) > self.alpha * (1 + 1e-12)):
            raise DomainError("sampled mark outside U_0")
        return u

    def integral(self, g: Callable[[np.ndarray], np.ndarray]):
        """Quadrature value of int_{U_0} g(u) nu(du) for vectorized ``g``."""
        vals = np.asarray(g(self.nodes), dtype=np.float64)
        return np.tensordot(self.weights, vals, axes=(0, 0))

    def second_moment(self) -> float:
        return float(self.weights @ np.sum(self.nodes**2, axis=1))

    @classmethod
    def uniform_ball(cls, alpha: float, rate: float, p: int = 1, n_nodes: int = 64, seed: int = 0) -> JumpDomain:
        """nu = rate * Uniform(U_0).

        Quadrature: for p = 1, Gauss-Legendre on [-alpha, alpha] (exact for
        polynomials of degree < 2 n_nodes).  For p > 1 the radius coordinate
        is stratified into ``n_nodes // 2`` equal-probability layers with one
        random point each, and every node is mirrored through the origin so odd
        moments vanish exactly.
        """
        if n_nodes < 2 or n_nodes % 2:
            raise DomainError("uniform_ball quadrature needs an even node count >= 2")

        def sampler(v: np.ndarray) -> np.ndarray:
            if p == 1:
                v = np.asarray(v, dtype=np.float64).reshape(-1, 1)
                return alpha * (2.0 * v - 1.0)
            v = np.asarray(v, dtype=np.float64).reshape(-1, p + 1)
            z = ndtri(v[:, :p])
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            return alpha * v[:, p:] ** (1.0 / p) * z

        if p == 1:
            z, w = np.polynomial.legendre.leggauss(n_nodes)
            return cls(1, float(alpha), float(rate), sampler, 1, alpha * z.reshape(-1, 1), 0.5 * rate * w,
                       f"{rate} x Uniform(|u| <= {alpha}) in R^1")
        half = n_nodes // 2
        stream = RandomStream(seed)
        jitter = stream.uniform(QUADRATURE, 0, np.arange(half))
        s = (np.arange(half) + jitter) / half
        z = stream.normal(QUADRATURE, 1, np.arange(half)[:, None], np.arange(p)[None, :])
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        pos = alpha * (s ** (1.0 / p))[:, None] * z
        nodes = np.concatenate([pos, -pos])
        weights = np.full(n_nodes, rate / n_nodes)
        return cls(p, float(alpha), float(rate), sampler, 1 if p == 1 else p + 1, nodes, weights,
                   f"{rate} x Uniform(|u| <= {alpha}) in R^{p}")

    @classmethod
    def finite(cls, marks, masses, alpha: float | None = None) -> JumpDomain:
        """nu = sum_j masses[j] delta_{marks[j]}; the quadrature is exact."""
        marks = np.asarray(marks, dtype=np.float64)
        if marks.ndim == 1:
            marks = marks.reshape(-1, 1)
        masses = np.asarray(masses, dtype=np.float64)
        rate = float(masses.sum())
        cdf = np.cumsum(masses) / rate
        if alpha is None:
            alpha = max(float(np.linalg.norm(marks, axis=1).max()), 1e-300)

        def sampler(v: np.ndarray) -> np.ndarray:
            idx = np.searchsorted(cdf, np.asarray(v).reshape(-1), side="right")
            return marks[np.minimum(idx, len(masses) - 1)]

        return cls(marks.shape[1], float(alpha), rate, sampler, 1, marks, masses,
                   f"finite measure on {len(masses)} marks")


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """Drift b, diffusion sigma and jump coefficient f of the mean-field equation.

    ``intensity`` (optional) multiplies the jump intensity: the driving random
    measure then has compensator lambda(t, u) dt nu(du), which is how Girsanov
    tilted dynamics are represented.
    """

    d: int
    m: int
    drift: Callable
    diffusion: Callable
    jump: Callable
    jump_domain: JumpDomain
    L1: float | None = None
    L2: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    intensity: Callable | None = None

    def weights(self, t: float) -> np.ndarray:
        """Quadrature weights of the (possibly tilted) jump compensator at time t."""
        w = self.jump_domain.weights
        if self.intensity is None:
            return w
        lam = np.asarray(self.intensity(t, self.jump_domain.nodes), dtype=np.float64).reshape(-1)
        return w * lam

    def with_intensity(self, lam: Callable | None) -> CoefficientModel:
        return dataclasses.replace(self, intensity=lam)

    def jump_values(self, t: float, x: np.ndarray, mu: EmpiricalMeasure):
        """Weights ``(J,)``, marks ``(J, n, p)`` and jumps ``(J, n, d)`` at every quadrature node.

        Evaluated as one stacked call with rows ordered node-major.
        """
        n = x.shape[0]
        nodes = self.jump_domain.nodes
        J = nodes.shape[0]
        u_all = np.repeat(nodes, n, axis=0)
        f_all = np.asarray(self.jump(t, np.tile(x, (J, 1)), mu, u_all), dtype=np.float64).reshape(J, n, -1)
        return self.weights(t), u_all.reshape(J, n, -1), f_all

    def jump_at_nodes(self, t: float, x: np.ndarray, mu: EmpiricalMeasure):
        """Yield ``(weight, u_j, f(t, x, mu, u_j))`` for every quadrature node."""
        w, u, f = self.jump_values(t, x, mu)
        for j in range(w.shape[0]):
            yield w[j], u[j], f[j]

    def compensator(self, t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        """sum_j w_j f(t, x, mu, u_j); the node axis is reduced row by row, so each entry is summed in node order."""
        w, _, f = self.jump_values(t, x, mu)
        return np.sum(w[:, None, None] * f, axis=0)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A function h(t, x, mu) with its derivative suite.

    Derivative callables (``None`` when unavailable), for ``x`` of shape
    ``(n, d)`` and measure points ``y`` of shape ``(k, d)``:

    ``dt``, ``value`` -> ``(n,)``; ``dx`` -> ``(n, d)``; ``dxx`` -> ``(n, d, d)``;
    ``dmu(t, x, mu, y)`` -> ``(n, k, d)``; ``dydmu(t, x, mu, y)`` -> ``(n, k, d, d)``;
    ``dmu2(t, x, mu, y, y2)`` -> ``(n, k, d, d)`` evaluated on the pairs ``(y[j], y2[j])``.
    """

    __test__ = False

    value: Callable
    dt: Callable | None = None
    dx: Callable | None = None
    dxx: Callable | None = None
    dmu: Callable | None = None
    dydmu: Callable | None = None
    dmu2: Callable | None = None
    name: str = "custom"
    d: int | None = None
    depends_on_measure: bool = True
    measure_depends_on_x: bool = True
    provenance: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __call__(self, t, x, mu):
        return self.value(t, _as_batch(x), mu)

    def scaled(self, alpha: float) -> TestFunction:
        return combine([(alpha, self)])


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim <= 1 else x


def combine(terms) -> TestFunction:
    """Linear combination sum_k a_k h_k of test functions (derivatives combine linearly)."""
    terms = list(terms)

    def lin(attr):
        if any(getattr(h, attr) is None for _, h in terms):
            return None

        def f(*args):
            return sum(a * np.asarray(getattr(h, attr)(*args)) for a, h in terms)

        return f

    dims = {h.d for _, h in terms if h.d is not None}
    return TestFunction(
        value=lin("value"), dt=lin("dt"), dx=lin("dx"), dxx=lin("dxx"),
        dmu=lin("dmu"), dydmu=lin("dydmu"), dmu2=lin("dmu2"),
        name="+".join(f"{a}*{h.name}" for a, h in terms),
        d=dims.pop() if len(dims) == 1 else None,
        depends_on_measure=any(h.depends_on_measure for _, h in terms),
        measure_depends_on_x=any(h.measure_depends_on_x and h.depends_on_measure for _, h in terms),
        provenance={k: "numeric" if any(h.provenance.get(k) == "numeric" for _, h in terms) else "analytic"
                    for k in ("dt", "dx", "dxx", "dmu", "dydmu", "dmu2")},
    )


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """Integrands (g1, g2, g3, g4) of the additive functional.

    ``g1(t, x, mu)`` -> ``(n,)``; ``g2(t, x, mu)`` -> ``(n, m)``;
    ``g3(t, x, mu, u)`` and ``g4(t, x, mu, u)`` -> ``(n,)``.
    """

    g1: Callable
    g2: Callable
    g3: Callable
    g4: Callable
    m: int = 1
    name: str = "custom"

    @classmethod
    def zero(cls, m: int = 1) -> FunctionalSpec:
        return cls(_zero_scalar, _zero_vector(m), _zero_scalar_u, _zero_scalar_u, m, "zero")

    def perturbed(self, g1: float = 0.0, g2: float = 0.0, g3: float = 0.0, g4: float = 0.0) -> FunctionalSpec:
        """Shift each integrand by a constant (g2 by the constant vector g2 * 1)."""
        s = self

        def p1(t, x, mu):
            return s.g1(t, x, mu) + g1

        def p2(t, x, mu):
            return s.g2(t, x, mu) + g2

        def p3(t, x, mu, u):
            return s.g3(t, x, mu, u) + g3

        def p4(t, x, mu, u):
            return s.g4(t, x, mu, u) + g4

        return FunctionalSpec(p1 if g1 else s.g1, p2 if g2 else s.g2, p3 if g3 else s.g3, p4 if g4 else s.g4,
                              s.m, f"{s.name}+perturbation")


def _zero_scalar(t, x, mu):
    return np.zeros(x.shape[0])


def _zero_scalar_u(t, x, mu, u):
    return np.zeros(x.shape[0])


def _zero_vector(m):
    def g(t, x, mu):
        return np.zeros((x.shape[0], m))

    return g


# ---------------------------------------------------------------- hypotheses

@dataclass
class HypothesisReport:
    ratios: dict
    growth: dict
    violations: list
    box: dict
    L1: float | None
    L2: float | None

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ratios": self.ratios, "growth": self.growth, "violations": self.violations,
                "box": self.box, "L1": self.L1, "L2": self.L2, "passed": self.passed}


def _eval(label, fn, *args, sample=None):
    try:
        out = np.asarray(fn(*args), dtype=np.float64)
    except Exception as exc:  # attach the offending sample
        raise EvaluationError(f"{label} failed on sample {sample}: {exc}", index=sample) from exc
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"{label} is not finite on sample {sample}", index=sample)
    return out


def check_hypotheses(model: CoefficientModel, sample_count: int, rng: RandomStream, T: float = 1.0,
                     radius: float = 5.0, atoms: int = 32) -> HypothesisReport:
    """Empirical Lipschitz and linear-growth ratios on a declared test box.

    Samples t in [0, T], x uniform in [-radius, radius]^d and measures that are
    empirical over ``atoms`` uniform draws from the same cube.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    d, p = model.d, model.jump_domain.p
    keys = ("drift", "diffusion", "b_sigma", "jump", "origin_b_sigma", "origin_jump")
    ratios = dict.fromkeys(keys, 0.0)
    growth = {"b_sigma": 0.0, "jump": 0.0}
    violations = []
    tol = 1e-9
    origin = EmpiricalMeasure._trusted(np.zeros((1, d)))
    zero = np.zeros((1, d))
    draws = model.jump_domain.draws_per_mark

    def cube(step, shape):
        n = int(np.prod(shape))
        v = rng.uniform(SAMPLE, step, np.arange(n)).reshape(shape)
        return radius * (2.0 * v - 1.0)

    for s in range(sample_count):
        base = 8 * s
        t = T * float(rng.uniform(SAMPLE, base, 0))
        x1, x2 = cube(base + 1, (1, d)), cube(base + 2, (1, d))
        mu1 = EmpiricalMeasure._trusted(cube(base + 3, (atoms, d)))
        mu2 = EmpiricalMeasure._trusted(cube(base + 4, (atoms, d)))
        u = model.jump_domain.sample(rng.uniform(SAMPLE, base + 5, 0, np.arange(draws)).reshape(1, draws))
        unorm = float(np.linalg.norm(u))
        gap = float(np.linalg.norm(x1 - x2)) + wasserstein2(mu1, mu2)

        b1 = _eval("drift", model.drift, t, x1, mu1, sample=s)
        b2 = _eval("drift", model.drift, t, x2, mu2, sample=s)
        s1 = _eval("diffusion", model.diffusion, t, x1, mu1, sample=s)
        s2 = _eval("diffusion", model.diffusion, t, x2, mu2, sample=s)
        f1 = _eval("jump", model.jump, t, x1, mu1, u, sample=s)
        f2 = _eval("jump", model.jump, t, x2, mu2, u, sample=s)
        db = float(np.linalg.norm(b1 - b2))
        ds = float(np.linalg.norm(s1 - s2))
        current = {
            "drift": db / gap,
            "diffusion": ds / gap,
            "b_sigma": (db + ds) / gap,
            "jump": float(np.linalg.norm(f1 - f2)) / (unorm * gap) if unorm > 0 else 0.0,
        }
        b0 = _eval("drift", model.drift, t, zero, origin, sample=s)
        s0 = _eval("diffusion", model.diffusion, t, zero, origin, sample=s)
        f0 = _eval("jump", model.jump, t, zero, origin, u, sample=s)
        current["origin_b_sigma"] = float(np.linalg.norm(b0) + np.linalg.norm(s0))
        current["origin_jump"] = float(np.linalg.norm(f0)) / unorm if unorm > 0 else 0.0
        scale = 1.0 + float(np.sum(x1 * x1)) + second_moment(mu1)
        growth["b_sigma"] = max(growth["b_sigma"], float(np.sum(b1 * b1) + np.sum(s1 * s1)) / scale)
        if unorm > 0:
            growth["jump"] = max(growth["jump"], float(np.sum(f1 * f1)) / (unorm**2 * scale))

        for k, v in current.items():
            ratios[k] = max(ratios[k], v)
        for k, bound in (("b_sigma", model.L1), ("origin_b_sigma", model.L1),
                         ("jump", model.L2), ("origin_jump", model.L2)):
            if bound is not None and current[k] > bound + tol:
                violations.append({"condition": k, "sample": s, "ratio": current[k], "bound": bound})

    box = {"T": T, "radius": radius, "atoms": atoms, "samples": sample_count}
    return HypothesisReport(ratios, growth, violations, box, model.L1, model.L2)


# ---------------------------------------------------------------- built-ins

_MODEL_DEFAULTS = {
    "a": -0.5, "c": 0.2, "sigma0": 0.3, "gamma": 0.1, "alpha": 1.0, "rate": 2.0,
    "b0": 0.0, "n_nodes": 64, "quad_seed": 0,
}
_MODEL_FIXED = {
    "linear_mean_field": {},
    "pure_diffusion": {"gamma": 0.0},
    "zero_noise": {"sigma0": 0.0, "gamma": 0.0},
}
MODEL_DESCRIPTIONS = {
    "linear_mean_field": "d=m=1: b = a x + c mean(mu) + b0, sigma = sigma0, f = gamma u, nu = rate x Uniform[-alpha, alpha]",
    "pure_diffusion": "linear_mean_field with gamma = 0",
    "zero_noise": "linear_mean_field with sigma0 = 0 and gamma = 0",
}


def builtin_model(name: str, params: dict | None = None) -> CoefficientModel:
    """Construct one of the registered analytic models (see ``MODEL_DESCRIPTIONS``)."""
    if name not in _MODEL_FIXED:
        raise ConfigurationError(f"unknown model '{name}'; expected one of {sorted(_MODEL_FIXED)}")
    params = dict(params or {})
    unknown = set(params) - set(_MODEL_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown parameter(s) {sorted(unknown)} for model '{name}'")
    for k, v in _MODEL_FIXED[name].items():
        if k in params and params[k] != v:
            raise ConfigurationError(f"model '{name}' fixes {k} = {v}")
    p = {**_MODEL_DEFAULTS, **params, **_MODEL_FIXED[name]}
    a, c, b0 = float(p["a"]), float(p["c"]), float(p["b0"])
    s0, g = float(p["sigma0"]), float(p["gamma"])

    def drift(t, x, mu):
        return a * x + c * mu.mean() + b0

    def diffusion(t, x, mu):
        return np.full((x.shape[0], 1, 1), s0)

    def jump(t, x, mu, u):
        return np.broadcast_to(g * u, x.shape)

    domain = JumpDomain.uniform_ball(float(p["alpha"]), float(p["rate"]), 1, int(p["n_nodes"]), int(p["quad_seed"]))
    L1 = max(abs(a) + abs(c), abs(b0) + abs(s0))
    return CoefficientModel(1, 1, drift, diffusion, jump, domain, L1=L1, L2=abs(g), name=name, params=p)


TEST_FUNCTION_DESCRIPTIONS = {
    "constant": "h = c",
    "linear": "h = <c, x> + rate * t",
    "quadratic": "h = <x, Q x> with symmetric Q",
    "second_moment": "h = mu(|.|^2)",
    "mean_squared": "h = (mu(<c, .>))^2",
}


def _zeros(shape_fn):
    def f(*args):
        return np.zeros(shape_fn(*args))

    return f


def builtin_test_function(name: str, params: dict | None = None) -> TestFunction:
    """Analytic test functions with complete derivative suites."""
    params = dict(params or {})
    allowed = {"constant": {"c"}, "linear": {"c", "rate"}, "quadratic": {"Q"},
               "second_moment": {"d"}, "mean_squared": {"c"}}
    if name not in allowed:
        raise ConfigurationError(f"unknown test function '{name}'; expected one of {sorted(allowed)}")
    unknown = set(params) - allowed[name]
    if unknown:
        raise ConfigurationError(f"unknown parameter(s) {sorted(unknown)} for test function '{name}'")

    def n_of(x):
        return x.shape[0]

    zero_t = _zeros(lambda t, x, mu: n_of(x))
    if name == "constant":
        cval = float(params.get("c", 1.0))
        d = None
    elif name in ("linear", "mean_squared"):
        cvec = np.atleast_1d(np.asarray(params.get("c", [1.0]), dtype=np.float64))
        d = cvec.shape[0]
    elif name == "quadratic":
        Q = np.atleast_2d(np.asarray(params.get("Q", [[1.0]]), dtype=np.float64))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ConfigurationError("quadratic test function needs a symmetric square Q")
        d = Q.shape[0]
    else:
        d = int(params.get("d", 1))

    def zdx(t, x, mu):
        return np.zeros(x.shape)

    def zdxx(t, x, mu):
        return np.zeros(x.shape + (x.shape[1],))

    def zdmu(t, x, mu, y):
        return np.zeros((x.shape[0],) + y.shape)

    def zdmm(t, x, mu, y, *rest):
        return np.zeros((x.shape[0], y.shape[0], y.shape[1], y.shape[1]))

    common = dict(name=name, d=d, params=params,
                  provenance=dict.fromkeys(("dt", "dx", "dxx", "dmu", "dydmu", "dmu2"), "analytic"))
    if name == "constant":
        return TestFunction(lambda t, x, mu: np.full(x.shape[0], cval), zero_t, zdx, zdxx, zdmu, zdmm, zdmm,
                            depends_on_measure=False, measure_depends_on_x=False, **common)
    if name == "linear":
        rate = float(params.get("rate", 0.0))
        return TestFunction(
            lambda t, x, mu: x @ cvec + rate * t,
            lambda t, x, mu: np.full(x.shape[0], rate),
            lambda t, x, mu: np.broadcast_to(cvec, x.shape).copy(),
            zdxx, zdmu, zdmm, zdmm, depends_on_measure=False, measure_depends_on_x=False, **common)
    if name == "quadratic":
        return TestFunction(
            lambda t, x, mu: np.einsum("ni,ij,nj->n", x, Q, x),
            zero_t,
            lambda t, x, mu: 2.0 * x @ Q,
            lambda t, x, mu: np.broadcast_to(2.0 * Q, (x.shape[0],) + Q.shape).copy(),
            zdmu, zdmm, zdmm, depends_on_measure=False, measure_depends_on_x=False, **common)
    if name == "second_moment":
        eye = np.eye(d)
        return TestFunction(
            lambda t, x, mu: np.full(x.shape[0], second_moment(mu)),
            zero_t, zdx, zdxx,
            lambda t, x, mu, y: np.broadcast_to(2.0 * y, (x.shape[0],) + y.shape).copy(),
            lambda t, x, mu, y: np.broadcast_to(2.0 * eye, (x.shape[0], y.shape[0], d, d)).copy(),
            zdmm, depends_on_measure=True, measure_depends_on_x=False, **common)
    # mean_squared
    outer = 2.0 * np.outer(cvec, cvec)
    return TestFunction(
        lambda t, x, mu: np.full(x.shape[0], float(mu.mean() @ cvec) ** 2),
        zero_t, zdx, zdxx,
        lambda t, x, mu, y: np.broadcast_to(2.0 * float(mu.mean() @ cvec) * cvec,
                                            (x.shape[0],) + y.shape).copy(),
        zdmm,
        lambda t, x, mu, y, y2: np.broadcast_to(outer, (x.shape[0], y.shape[0], d, d)).copy(),
        depends_on_measure=True, measure_depends_on_x=False, **common)


def list_models() -> dict:
    return dict(MODEL_DESCRIPTIONS)


def list_test_functions() -> dict:
    return dict(TEST_FUNCTION_DESCRIPTIONS)
