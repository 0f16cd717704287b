"""Additive functionals along stored paths and the Girsanov density for tilted dynamics.

The discrete functional over grid step k (time t_k, state X_k, law mu_k) is

    g1 dt + <g2, dB_k> + sum_{events in step k} g3(u) - dt sum_j w_j g3(u_j) + dt sum_j w_j g4(u_j)

where the weights w_j are those of the bundle's model, so a tilted model
integrates against lambda nu.  All sums use the noise stored in the bundle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .measure import EmpiricalMeasure
from .model import CoefficientModel, FunctionalSpec
from .rng import SAMPLE, RandomStream
from .simulate import PathBundle, SimulationConfig, simulate_particle_system


def _check_range(bundle: PathBundle, s_index: int, t_index: int) -> None:
    if not (bundle.start_index <= s_index < t_index <= bundle.n_steps):
        raise IndexError(f"need {bundle.start_index} <= s < t <= {bundle.n_steps}, got s={s_index}, t={t_index}")


def _scalar(v, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(v, dtype=np.float64).reshape(-1) if np.ndim(v) else v, (n,))


def step_increment(spec: FunctionalSpec, bundle: PathBundle, k: int, particles=None) -> np.ndarray:
    """Contribution of grid step k to F for the selected particles (all by default)."""
    model = bundle.model
    j = k - bundle.start_index
    x_all = bundle.states[j]
    idx = np.arange(bundle.N) if particles is None else np.atleast_1d(np.asarray(particles, dtype=np.int64))
    x = x_all[idx]
    n = x.shape[0]
    t, dt = bundle.time(k), bundle.dt
    mu = bundle.measure(k)
    inc = _scalar(spec.g1(t, x, mu), n) * dt
    g2 = np.asarray(spec.g2(t, x, mu), dtype=np.float64).reshape(n, spec.m)
    inc = inc + np.sum(g2 * bundle.dB[j][idx], axis=1)
    sl = bundle.events_in_step(k)
    ev_p = bundle.ev_particle[sl]
    if ev_p.size:
        remap = -np.ones(bundle.N, dtype=np.int64)
        remap[idx] = np.arange(n)
        sel = remap[ev_p] >= 0
        if sel.any():
            pos = remap[ev_p[sel]]
            vals = _scalar(spec.g3(t, bundle.ev_pre[sl][sel], mu, bundle.ev_mark[sl][sel]), int(sel.sum()))
            jumps = np.zeros(n)
            np.add.at(jumps, pos, vals)
            inc = inc + jumps
    comp3, comp4 = node_sums(spec, model, t, x, mu)
    return inc - dt * comp3 + dt * comp4


def node_sums(spec: FunctionalSpec, model: CoefficientModel, t: float, x: np.ndarray, mu) -> tuple:
    """(sum_j w_j g3(u_j), sum_j w_j g4(u_j)) for each row of x, summed in node order."""
    n = x.shape[0]
    nodes = model.jump_domain.nodes
    J = nodes.shape[0]
    xs = np.tile(x, (J, 1))
    us = np.repeat(nodes, n, axis=0)
    v3 = _scalar(spec.g3(t, xs, mu, us), n * J).reshape(J, n)
    v4 = _scalar(spec.g4(t, xs, mu, us), n * J).reshape(J, n)
    comp3 = np.zeros(n)
    comp4 = np.zeros(n)
    for j, w in enumerate(model.weights(t)):
        comp3 += w * v3[j]
        comp4 += w * v4[j]
    return comp3, comp4


def functional_increments(spec: FunctionalSpec, bundle: PathBundle, particles=None) -> np.ndarray:
    """Per-step contributions, shape ``(n_steps - start_index, n_particles)``."""
    return np.stack([step_increment(spec, bundle, k, particles)
                     for k in range(bundle.start_index, bundle.n_steps)])


def functional_path(spec: FunctionalSpec, bundle: PathBundle, particles=None) -> np.ndarray:
    """F_{start, t_k} for every grid index k, shape ``(n_steps - start_index + 1, n_particles)``."""
    inc = functional_increments(spec, bundle, particles)
    out = np.zeros((inc.shape[0] + 1, inc.shape[1]))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def accumulate(spec: FunctionalSpec, bundle: PathBundle, i: int, s_index: int, t_index: int) -> float:
    """F_{s,t} for particle i (events in (t_s, t_t] count)."""
    _check_range(bundle, s_index, t_index)
    if not 0 <= i < bundle.N:
        raise IndexError(f"particle {i} out of range for N={bundle.N}")
    total = 0.0
    for k in range(s_index, t_index):
        total += float(step_increment(spec, bundle, k, [i])[0])
    return total


# ---------------------------------------------------------------- Girsanov

@dataclass(frozen=True, eq=False)
class GirsanovTilt:
    """Drift factor btilde with b = sigma btilde, and intensity tilt lambda(t, u) in (0, 1].

    ``btilde(t, x, mu)`` -> ``(n, m)``; ``lam(t, u)`` with ``u`` of shape ``(n, p)`` -> ``(n,)``.
    """

    btilde: Callable
    lam: Callable
    name: str = "custom"

    @classmethod
    def constant(cls, btilde, lam: float) -> GirsanovTilt:
        bt = np.atleast_1d(np.asarray(btilde, dtype=np.float64))
        lam = float(lam)

        def b(t, x, mu):
            return np.broadcast_to(bt, (x.shape[0], bt.shape[0])).copy()

        def l(t, u):
            return np.full(np.asarray(u).shape[0], lam)

        return cls(b, l, f"constant(btilde={bt.tolist()}, lambda={lam})")

    def lam_values(self, t: float, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        v = np.asarray(self.lam(t, u), dtype=np.float64).reshape(-1)
        if not np.all((v > 0.0) & (v <= 1.0)):
            bad = int(np.flatnonzero(~((v > 0.0) & (v <= 1.0)))[0])
            raise DomainError(f"tilt lambda = {v[bad]} outside (0, 1] at t={t}, u={u[bad].tolist()}")
        return v

    def validate(self, model: CoefficientModel, samples: int = 1000, seed: int = 0, T: float = 1.0,
                 radius: float = 5.0, atoms: int = 32) -> dict:
        """Check b = sigma btilde on sampled points, lambda in (0, 1], and f = 0 wherever lambda = 1."""
        rs = RandomStream(seed).spawn(7)
        worst = 0.0
        for s in range(samples):
            t = T * float(rs.uniform(SAMPLE, s, 0))
            x = radius * (2.0 * rs.uniform(SAMPLE, s, 1, np.arange(model.d)) - 1.0)
            mu = EmpiricalMeasure(radius * (2.0 * rs.uniform(SAMPLE, s, 2 + np.arange(atoms)[:, None],
                                                              np.arange(model.d)[None, :]) - 1.0))
            x = x.reshape(1, -1)
            sb = np.einsum("nij,nj->ni", np.asarray(model.diffusion(t, x, mu)), np.asarray(self.btilde(t, x, mu)))
            worst = max(worst, float(np.max(np.abs(sb - np.asarray(model.drift(t, x, mu))))))
            if worst > 1e-10:
                raise DomainError(f"b != sigma btilde (gap {worst:.3e}) at t={t}, x={x.ravel().tolist()}")
            nodes = model.jump_domain.nodes
            lam = self.lam_values(t, nodes)
            ones = lam == 1.0
            if ones.any():
                f = np.asarray(model.jump(t, np.repeat(x, int(ones.sum()), axis=0), mu, nodes[ones]))
                if np.any(f != 0.0):
                    raise DomainError("lambda = 1 at a quadrature node where f does not vanish")
        return {"samples": samples, "max_factorization_gap": worst}


def tilted_model(model: CoefficientModel, tilt: GirsanovTilt) -> CoefficientModel:
    """The model with jump intensity lambda nu (checked values)."""
    return model.with_intensity(tilt.lam_values)


def simulate_tilted(model: CoefficientModel, tilt: GirsanovTilt, cfg: SimulationConfig,
                    stream: RandomStream | None = None, threads: int = 1) -> PathBundle:
    """Dynamics driven by N_lambda, built by thinning base-rate proposals with probability lambda.

    Acceptance uses its own stream purpose, so lambda = 1 reproduces
    :func:`simulate_particle_system` bit for bit.
    """
    return simulate_particle_system(tilted_model(model, tilt), cfg, stream=stream, threads=threads)


def girsanov_spec(tilt: GirsanovTilt, m: int) -> FunctionalSpec:
    """Integrands whose functional equals -log Gamma along tilted paths."""

    def g1(t, x, mu):
        bt = np.asarray(tilt.btilde(t, x, mu), dtype=np.float64)
        return 0.5 * np.sum(bt * bt, axis=1)

    def g2(t, x, mu):
        return np.asarray(tilt.btilde(t, x, mu), dtype=np.float64)

    def g3(t, x, mu, u):
        return np.log(tilt.lam_values(t, u))

    def g4(t, x, mu, u):
        lam = tilt.lam_values(t, u)
        return np.log(lam) + (1.0 / lam - 1.0)

    return FunctionalSpec(g1, g2, g3, g4, m, f"girsanov[{tilt.name}]")


def girsanov_log_weights(model: CoefficientModel, tilt: GirsanovTilt, bundle: PathBundle) -> dict:
    """log Gamma at every grid index for every particle, in two algebraic forms.

    ``product``: -sum <bt, dB> - 1/2 sum |bt|^2 dt - sum_events log lam - sum dt sum_j w_j (1 - lam_j)
    ``four_term``: the same with the lambda-compensated event sum written out,
    -sum <bt, dB> - 1/2 sum |bt|^2 dt - [sum_events log lam - sum dt sum_j w_j lam_j log lam_j]
    - sum dt sum_j w_j (lam_j log lam_j + 1 - lam_j).
    ``w`` are the untilted weights of ``model``.
    """
    L = bundle.n_steps - bundle.start_index
    N = bundle.N
    prod = np.zeros((L + 1, N))
    four = np.zeros((L + 1, N))
    w = model.jump_domain.weights
    nodes = model.jump_domain.nodes
    for j in range(L):
        k = bundle.start_index + j
        t, dt = bundle.time(k), bundle.dt
        x = bundle.states[j]
        mu = bundle.measure(k)
        bt = np.asarray(tilt.btilde(t, x, mu), dtype=np.float64).reshape(N, -1)
        brown = -np.sum(bt * bundle.dB[j], axis=1) - 0.5 * np.sum(bt * bt, axis=1) * dt
        sl = bundle.events_in_step(k)
        ev = np.zeros(N)
        if bundle.ev_particle[sl].size:
            np.add.at(ev, bundle.ev_particle[sl], np.log(tilt.lam_values(t, bundle.ev_mark[sl])))
        lam = tilt.lam_values(t, nodes)
        comp = dt * float(w @ (1.0 - lam))
        comp_log = dt * float(w @ (lam * np.log(lam)))
        prod[j + 1] = prod[j] + brown - ev - comp
        four[j + 1] = four[j] + brown - (ev - comp_log) - (comp_log + comp)
    return {"product": prod, "four_term": four}


def girsanov_weight(model: CoefficientModel, tilt: GirsanovTilt, bundle: PathBundle, i: int, t_index: int) -> float:
    """Gamma at grid index t_index for particle i of a tilted bundle (product form)."""
    if not bundle.start_index <= t_index <= bundle.n_steps:
        raise IndexError(f"grid index {t_index} out of range")
    if not 0 <= i < bundle.N:
        raise IndexError(f"particle {i} out of range for N={bundle.N}")
    sub = bundle.select([i]) if bundle.N > 1 else bundle
    logs = girsanov_log_weights(model, tilt, sub)
    return float(np.exp(logs["product"][t_index - bundle.start_index, 0]))
