"""The mean-field integro-differential generator and an independent Monte Carlo oracle for it.

For h(t, x, mu) with derivative suite, ``apply_generator`` returns (d_t + L)h:

    d_t h + <b, d_x h> + 1/2 tr(a d_xx h)
    + mu(<b(y), d_mu h(y)>) + 1/2 mu(tr(a(y) d_y d_mu h(y)))
    + sum_j w_j [h(x + f_j) - h(x) - <f_j, d_x h>]
    + sum_j w_j int_0^1 mu(<d_mu h(y + eta f_j(y)) - d_mu h(y), f_j(y)>) d eta

with a = sigma sigma^T, f_j = f(t, ., mu, u_j) and (u_j, w_j) the shared jump
quadrature.  The eta integral uses Gauss-Legendre nodes on [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError
from .measure import EmpiricalMeasure
from .model import CoefficientModel, TestFunction
from .rng import RandomStream
from .simulate import AtomsInitial, SimulationConfig, simulate_decoupled, simulate_particle_system

TERMS = ("dt", "drift", "diffusion", "measure_drift", "measure_diffusion", "jump_x", "jump_measure")


@dataclass(frozen=True)
class GeneratorConfig:
    eta_nodes: int = 8
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.eta_nodes < 2:
            raise ValueError("eta quadrature needs at least 2 nodes")
        z, w = np.polynomial.legendre.leggauss(self.eta_nodes)
        object.__setattr__(self, "nodes", 0.5 * (z + 1.0))
        object.__setattr__(self, "weights", 0.5 * w)

    def self_test(self, tol: float = 1e-13) -> bool:
        """Monomials up to degree 2 * eta_nodes - 1 integrate exactly on [0, 1]."""
        for k in range(2 * self.eta_nodes):
            if abs(self.weights @ self.nodes**k - 1.0 / (k + 1)) > tol:
                return False
        return True


def _need(h: TestFunction, attr: str, term: str):
    fn = getattr(h, attr)
    if fn is None:
        raise CapabilityError(term, f"test function '{h.name}' has no '{attr}' derivative, needed by the {term} term")
    return fn


def _second_moment_matrix(s: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nkj->nik", s, s)


def generator_terms(model: CoefficientModel, h: TestFunction, t: float, x, mu: EmpiricalMeasure,
                    cfg: GeneratorConfig = GeneratorConfig()) -> dict:
    """Each of the seven terms separately, as arrays over the batch of states x."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, model.d)
    n = x.shape[0]
    out = dict.fromkeys(TERMS)
    out["dt"] = np.asarray(_need(h, "dt", "dt")(t, x, mu), dtype=np.float64).reshape(n)

    dx = np.asarray(_need(h, "dx", "drift")(t, x, mu), dtype=np.float64).reshape(n, model.d)
    b = np.asarray(model.drift(t, x, mu), dtype=np.float64)
    out["drift"] = np.sum(b * dx, axis=1)

    dxx = np.asarray(_need(h, "dxx", "diffusion")(t, x, mu), dtype=np.float64)
    a = _second_moment_matrix(np.asarray(model.diffusion(t, x, mu), dtype=np.float64))
    out["diffusion"] = 0.5 * np.einsum("nik,nki->n", a, dxx)

    h0 = np.asarray(h.value(t, x, mu), dtype=np.float64).reshape(n)
    jx = np.zeros(n)
    pieces = list(model.jump_at_nodes(t, x, mu))
    if pieces:
        shifted = np.concatenate([x + fj for _, _, fj in pieces])
        hs = np.asarray(h.value(t, shifted, mu), dtype=np.float64).reshape(len(pieces), n)
        for j, (w, _, fj) in enumerate(pieces):
            jx += w * (hs[j] - h0 - np.sum(fj * dx, axis=1))
    out["jump_x"] = jx

    if not h.depends_on_measure:
        for k in ("measure_drift", "measure_diffusion", "jump_measure"):
            out[k] = np.zeros(n)
        return out

    # measure terms; computed once when they do not vary with x
    xm = x[:1] if not h.measure_depends_on_x else x
    y = mu.atoms
    dmu = _need(h, "dmu", "measure_drift")
    D = np.asarray(dmu(t, xm, mu, y), dtype=np.float64)
    by = np.asarray(model.drift(t, y, mu), dtype=np.float64)
    md = np.mean(np.sum(D * by[None], axis=2), axis=1)

    J = np.asarray(_need(h, "dydmu", "measure_diffusion")(t, xm, mu, y), dtype=np.float64)
    ay = _second_moment_matrix(np.asarray(model.diffusion(t, y, mu), dtype=np.float64))
    mdiff = 0.5 * np.mean(np.einsum("kij,nkji->nk", ay, J), axis=1)

    jm = np.zeros(xm.shape[0])
    K, E = y.shape[0], cfg.nodes.shape[0]
    for w, _, fy in model.jump_at_nodes(t, y, mu):
        if not np.any(fy):
            continue
        # all eta nodes in one call, rows ordered (eta, atom)
        shifted = (y[None] + cfg.nodes[:, None, None] * fy[None]).reshape(E * K, -1)
        Dq = np.asarray(dmu(t, xm, mu, shifted), dtype=np.float64).reshape(xm.shape[0], E, K, -1)
        per_eta = np.mean(np.sum((Dq - D[:, None]) * fy[None, None], axis=3), axis=2)
        jm += w * (per_eta @ cfg.weights)
    for k, val in (("measure_drift", md), ("measure_diffusion", mdiff), ("jump_measure", jm)):
        out[k] = np.broadcast_to(val, (n,)).copy()
    return out


def apply_generator(model: CoefficientModel, h: TestFunction, t: float, x, mu: EmpiricalMeasure,
                    cfg: GeneratorConfig = GeneratorConfig()):
    """(d_t + L)h at (t, x, mu); a float for a single point, an array for a batch."""
    xa = np.asarray(x, dtype=np.float64)
    terms = generator_terms(model, h, t, xa, mu, cfg)
    total = sum(terms[k] for k in TERMS)
    if xa.ndim <= 1:
        return float(total[0])
    return total


@dataclass
class OracleEstimate:
    """Monte Carlo generator estimate; unpacks as ``(estimate, standard_error)``.

    With e(h) = e0 + c h + c2 h^2 and D1 = e(2 Delta) - e(Delta),
    D2 = e(4 Delta) - e(2 Delta), all on the same noise, the window bias of
    ``estimate`` is D1 + (2 D1 - D2) / 3.  ``bias`` bounds it by
    t1 + t2 + t2^2 / t1 with t1 = |D1|, t2 = |2 D1 - D2| / 3; the last term
    bounds the higher orders when they decay geometrically.  The coarser
    windows keep the martingale noise in D1 and D2 below that of ``estimate``.
    """

    estimate: float
    standard_error: float
    estimate_double: float
    estimate_quadruple: float
    replicates: int
    paths: int
    ensemble_size: int

    @property
    def bias(self) -> float:
        d1 = self.estimate_double - self.estimate
        d2 = self.estimate_quadruple - self.estimate_double
        t1, t2 = abs(d1), abs(2.0 * d1 - d2) / 3.0
        # geometric tail for the higher orders, ratio t2 / t1
        tail = t2 * t2 / t1 if t1 > t2 else t2
        return t1 + t2 + tail

    def __iter__(self):
        yield self.estimate
        yield self.standard_error

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "standard_error": self.standard_error,
                "estimate_double": self.estimate_double, "estimate_quadruple": self.estimate_quadruple,
                "bias": self.bias, "replicates": self.replicates, "paths": self.paths,
                "ensemble_size": self.ensemble_size}


def generator_fd_oracle(model: CoefficientModel, h: TestFunction, t: float, x, mu: EmpiricalMeasure,
                        delta: float, M: int, rng: RandomStream, replicates: int = 20,
                        ensemble_size: int | None = None, n_sub: int = 2, threads: int = 1) -> OracleEstimate:
    """(E h(t + Delta, X, mu_{t + Delta}) - h(t, x, mu)) / Delta by simulation.

    Each of ``replicates`` independent ensembles starts from the atoms of mu
    (tiled to ``ensemble_size`` particles) and is advanced over the window in
    ``n_sub`` Euler steps; ``M / replicates`` tagged particles start at x and
    follow the decoupled equation along that ensemble's law flow.  The
    standard error is taken across replicates, so it covers the fluctuation of
    the empirical law as well as of the tagged paths.  Windows 2 Delta and
    4 Delta are rerun on the same noise, each again in ``n_sub`` steps, to
    estimate the window bias.
    """
    if not 0.0 < delta <= 1e-2:
        raise ValueError("window Delta must lie in (0, 1e-2]")
    if M < 1000:
        raise ValueError("generator oracle needs M >= 1000 tagged paths")
    if replicates < 2:
        raise ValueError("need at least two replicates for a standard error")
    per = M // replicates
    if ensemble_size is None:
        ensemble_size = max(mu.K, per)
    x = np.asarray(x, dtype=np.float64).reshape(1, model.d)
    h0 = float(np.asarray(h.value(t, x, mu)).reshape(-1)[0])
    init = AtomsInitial(mu)
    # shared fine grid of step Delta / n_sub; the level q Delta sums q fine steps per step
    levels = [(delta * q, SimulationConfig(T=t + delta * q, n_steps=n_sub, N=ensemble_size, initial=init, t0=t,
                                           refinement=q)) for q in (1, 2, 4)]
    ests = np.empty((3, replicates))
    for r in range(replicates):
        sub = rng.spawn(r)
        ens_s, tag_s = sub.spawn(0), sub.spawn(1)
        for lv, (window, cfg) in enumerate(levels):
            ens = simulate_particle_system(model, cfg, stream=ens_s, threads=threads)
            tag = simulate_decoupled(model, ens, x, 0, cfg, tag_s, n_paths=per, threads=threads)
            val = np.asarray(h.value(t + window, tag.state(n_sub), ens.measure(n_sub)), dtype=np.float64)
            ests[lv, r] = (val.mean() - h0) / window
    est, est_2, est_4 = ests.mean(axis=1)
    se = float(ests[0].std(ddof=1) / np.sqrt(replicates))
    return OracleEstimate(float(est), se, float(est_2), float(est_4), replicates, per * replicates, ensemble_size)
