"""Euler-Maruyama simulation of the mean-field jump equation and its decoupled variant.

One step of the scheme, for every particle, with mu the law at the left end:

    X_{k+1} = X_k + b(t_k, X_k, mu) dt + sigma(t_k, X_k, mu) dB_k
              + sum_{events in step k} f(t_k, X_k, mu, u)
              - dt * sum_j w_j f(t_k, X_k, mu, u_j)

Jumps inside a step are not time-resolved: all of them use the pre-step state.
Noise comes from :class:`~mvjl.rng.RandomStream` counters keyed by
``(purpose, fine step, particle, draw)``, so results do not depend on the
number of particles simulated alongside, nor on the thread count.

With ``refinement = r`` each step consumes the noise of ``r`` fine sub-steps
of size dt / r (Brownian increments summed, jump events merged).  A run with
``(n_steps, r=2)`` and one with ``(2 n_steps, r=1)`` on the same stream are
therefore driven by the same Brownian path and Poisson measure, which is
what Richardson-type bias estimates use.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, SimulationError
from .measure import EmpiricalMeasure
from .model import CoefficientModel
from .rng import ACCEPT, INITIAL, MARK, NORMAL, POISSON, RandomStream

COPIES = 101  # spawn label for independent copies


# ------------------------------------------------------------- initial laws

@dataclass(frozen=True)
class PointInitial:
    """Deterministic initial state X_0 = x for every particle."""

    x: tuple

    def __call__(self, stream: RandomStream, index: np.ndarray, d: int) -> np.ndarray:
        return np.tile(np.asarray(self.x, dtype=np.float64).reshape(1, d), (len(index), 1))

    def describe(self) -> dict:
        return {"kind": "point", "x": list(self.x)}


@dataclass(frozen=True, eq=False)
class AtomsInitial:
    """Particle i starts at atom (i mod K) of the given measure."""

    mu: EmpiricalMeasure

    def __call__(self, stream: RandomStream, index: np.ndarray, d: int) -> np.ndarray:
        return self.mu.atoms[np.asarray(index) % self.mu.K].copy()

    def describe(self) -> dict:
        return {"kind": "atoms", "K": self.mu.K, "atoms": self.mu.atoms.ravel().tolist()}


@dataclass(frozen=True)
class GaussianInitial:
    """i.i.d. N(mean, sd^2 I) initial states."""

    mean: tuple
    sd: float

    def __call__(self, stream: RandomStream, index: np.ndarray, d: int) -> np.ndarray:
        z = stream.normal(INITIAL, 0, np.asarray(index)[:, None], np.arange(d)[None, :])
        return np.asarray(self.mean, dtype=np.float64).reshape(1, d) + self.sd * z

    def describe(self) -> dict:
        return {"kind": "gaussian", "mean": list(self.mean), "sd": self.sd}


@dataclass(frozen=True)
class SimulationConfig:
    T: float
    n_steps: int
    N: int
    seed: int = 0
    initial: Callable = PointInitial((0.0,))
    refinement: int = 1
    t0: float = 0.0

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("horizon T must exceed the start time t0")
        if self.n_steps < 1 or self.N < 1 or self.refinement < 1:
            raise ValueError("n_steps, N and refinement must be positive")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    def replace(self, **changes) -> SimulationConfig:
        return dataclasses.replace(self, **changes)

    def refined(self) -> SimulationConfig:
        """Twice as many steps on the same noise (pair with ``refinement=2`` at the base grid)."""
        if self.refinement % 2 == 0:
            return self.replace(n_steps=2 * self.n_steps, refinement=self.refinement // 2)
        return self.replace(n_steps=2 * self.n_steps)


@dataclass(frozen=True)
class JumpEvent:
    step: int
    particle: int
    mark: np.ndarray
    pre_state: np.ndarray


class PathBundle:
    """Trajectories together with the exact noise that produced them.

    Arrays are indexed relative to ``start_index``: ``states[k - start_index]``
    holds X_{t_k}.  Events are sorted by (step, sub-step, particle, order).
    """

    def __init__(self, model, cfg, start_index, states, dB, ev_step, ev_particle, ev_mark, ev_pre,
                 rejected=None, law=None):
        self.model = model
        self.cfg = cfg
        self.start_index = int(start_index)
        self.states = states
        self.dB = dB
        self.ev_step = ev_step
        self.ev_particle = ev_particle
        self.ev_mark = ev_mark
        self.ev_pre = ev_pre
        self.rejected = rejected or {"step": np.zeros(0, np.int64), "particle": np.zeros(0, np.int64),
                                     "mark": np.zeros((0, model.jump_domain.p))}
        self._law = law
        self._offsets = np.searchsorted(ev_step, np.arange(start_index, cfg.n_steps + 1))
        for a in (states, dB, ev_step, ev_particle, ev_mark, ev_pre):
            a.setflags(write=False)

    @property
    def dt(self) -> float:
        return self.cfg.dt

    @property
    def N(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.cfg.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.cfg.t0 + np.arange(self.start_index, self.cfg.n_steps + 1) * self.dt

    @property
    def self_consistent(self) -> bool:
        return self._law is None

    def time(self, k: int) -> float:
        return self.cfg.time(k)

    def state(self, k: int) -> np.ndarray:
        return self.states[k - self.start_index]

    def measure(self, k: int) -> EmpiricalMeasure:
        """Law used by the coefficients at grid index k."""
        if self._law is None:
            return EmpiricalMeasure._trusted(self.states[k - self.start_index])
        return self._law[k - self.start_index]

    @property
    def law_flow(self) -> list:
        return [self.measure(k) for k in range(self.start_index, self.n_steps + 1)]

    def empirical(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure._trusted(self.states[k - self.start_index])

    def events_in_step(self, k: int) -> slice:
        j = k - self.start_index
        return slice(int(self._offsets[j]), int(self._offsets[j + 1]) if j + 1 < len(self._offsets)
                     else len(self.ev_step))

    def jump_events(self) -> list:
        return [JumpEvent(int(s), int(i), self.ev_mark[e], self.ev_pre[e])
                for e, (s, i) in enumerate(zip(self.ev_step, self.ev_particle))]

    def select(self, idx) -> PathBundle:
        """Sub-bundle of the given particles; the law flow is frozen from this bundle."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        remap = -np.ones(self.N, dtype=np.int64)
        remap[idx] = np.arange(len(idx))
        keep = np.isin(self.ev_particle, idx)
        rej = self.rejected
        rkeep = np.isin(rej["particle"], idx)
        return PathBundle(self.model, self.cfg.replace(N=len(idx)), self.start_index,
                          self.states[:, idx].copy(), self.dB[:, idx].copy(),
                          self.ev_step[keep].copy(), remap[self.ev_particle[keep]], self.ev_mark[keep].copy(),
                          self.ev_pre[keep].copy(),
                          {"step": rej["step"][rkeep], "particle": remap[rej["particle"][rkeep]],
                           "mark": rej["mark"][rkeep]},
                          law=self.law_flow)

    def accepted_count(self) -> int:
        return int(self.ev_step.shape[0])


# ------------------------------------------------------------- the scheme

def advance(model: CoefficientModel, t: float, dt: float, x: np.ndarray, mu: EmpiricalMeasure,
            dB: np.ndarray, ev_pos: np.ndarray, ev_mark: np.ndarray) -> np.ndarray:
    """One Euler step; shared by the simulators and by :func:`replay`."""
    b = np.asarray(model.drift(t, x, mu), dtype=np.float64)
    s = np.asarray(model.diffusion(t, x, mu), dtype=np.float64)
    diff = np.zeros(x.shape)
    for j in range(model.m):
        diff += s[:, :, j] * dB[:, j:j + 1]
    jumps = np.zeros(x.shape)
    if ev_pos.size:
        np.add.at(jumps, ev_pos, np.asarray(model.jump(t, x[ev_pos], mu, ev_mark), dtype=np.float64))
    comp = model.compensator(t, x, mu)
    return x + b * dt + diff + jumps - dt * comp


def draw_noise(model: CoefficientModel, stream: RandomStream, step: int, t: float, dt: float,
               index: np.ndarray, refinement: int = 1):
    """Brownian increments and (accepted, rejected) jump events for one step.

    Returns ``dB, (pos, order, mark), (rpos, rmark)`` where ``pos`` indexes into
    ``index``.
    """
    n = len(index)
    m = model.m
    dom = model.jump_domain
    D = dom.draws_per_mark
    h = dt / refinement
    sq = np.sqrt(h)
    dB = np.zeros((n, m))
    pos_l, key_l, mark_l, rpos_l, rmark_l = [], [], [], [], []
    for q in range(refinement):
        fine = step * refinement + q
        dB += sq * stream.normal(NORMAL, fine, index[:, None], np.arange(m)[None, :])
        counts = stream.poisson(POISSON, fine, index, dom.rate * h)
        total = int(counts.sum())
        if total == 0:
            continue
        pos = np.repeat(np.arange(n), counts)
        first = np.cumsum(counts) - counts
        order = np.arange(total) - np.repeat(first, counts)
        ids = index[pos]
        u = stream.uniform(MARK, fine, ids[:, None], order[:, None] * D + np.arange(D)[None, :])
        marks = dom.sample(u)
        if model.intensity is not None:
            lam = np.asarray(model.intensity(t, marks), dtype=np.float64).reshape(-1)
            acc = stream.uniform(ACCEPT, fine, ids, order) < lam
            rpos_l.append(pos[~acc])
            rmark_l.append(marks[~acc])
            pos, order, marks = pos[acc], order[acc], marks[acc]
        pos_l.append(pos)
        key_l.append(q * (1 << 20) + order)
        mark_l.append(marks)
    p = dom.p
    if pos_l:
        events = (np.concatenate(pos_l), np.concatenate(key_l), np.concatenate(mark_l))
    else:
        events = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, p)))
    if rpos_l:
        rejected = (np.concatenate(rpos_l), np.concatenate(rmark_l))
    else:
        rejected = (np.zeros(0, np.int64), np.zeros((0, p)))
    return dB, events, rejected


def _chunks(n: int, threads: int) -> list:
    if threads <= 1 or n < 2 * threads:
        return [np.arange(n)]
    return np.array_split(np.arange(n), threads)


def _step_chunk(model, stream, k, t, dt, x, mu, index, refinement):
    dB, (pos, key, marks), (rpos, rmarks) = draw_noise(model, stream, k, t, dt, index, refinement)
    new = advance(model, t, dt, x, mu, dB, pos, marks)
    return new, dB, pos, key, marks, rpos, rmarks


def _run(model: CoefficientModel, cfg: SimulationConfig, stream: RandomStream, x0: np.ndarray,
         index: np.ndarray, start_index: int, law: Sequence | None, threads: int) -> PathBundle:
    n_steps, dt, R = cfg.n_steps, cfg.dt, cfg.refinement
    L = n_steps - start_index
    n, d = x0.shape
    if d != model.d:
        raise DimensionMismatchError(f"initial states have dimension {d}, model has {model.d}")
    states = np.empty((L + 1, n, d))
    states[0] = x0
    dB_all = np.empty((L, n, model.m))
    ev = {"step": [], "particle": [], "key": [], "mark": [], "pre": []}
    rj = {"step": [], "particle": [], "mark": []}
    parts = _chunks(n, threads)
    pool = ThreadPoolExecutor(max_workers=threads) if len(parts) > 1 else None
    try:
        for j in range(L):
            k = start_index + j
            t = cfg.time(k)
            x = states[j]
            mu = EmpiricalMeasure._trusted(x) if law is None else law[j]
            if pool is None:
                results = [_step_chunk(model, stream, k, t, dt, x, mu, index, R)]
            else:
                futs = [pool.submit(_step_chunk, model, stream, k, t, dt, x[c], mu, index[c], R) for c in parts]
                results = [f.result() for f in futs]
            for c, (new, dB, pos, key, marks, rpos, rmarks) in zip(parts, results):
                states[j + 1, c] = new
                dB_all[j, c] = dB
                if pos.size:
                    gpos = c[pos]
                    ev["step"].append(np.full(pos.size, k))
                    ev["particle"].append(gpos)
                    ev["key"].append(key)
                    ev["mark"].append(marks)
                    ev["pre"].append(x[gpos])
                if rpos.size:
                    rj["step"].append(np.full(rpos.size, k))
                    rj["particle"].append(c[rpos])
                    rj["mark"].append(rmarks)
            bad = ~np.isfinite(states[j + 1]).all(axis=1)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SimulationError(i, k + 1)
    finally:
        if pool is not None:
            pool.shutdown()
    p = model.jump_domain.p
    if ev["step"]:
        step = np.concatenate(ev["step"])
        part = np.concatenate(ev["particle"])
        key = np.concatenate(ev["key"])
        mark = np.concatenate(ev["mark"])
        pre = np.concatenate(ev["pre"])
        order = np.lexsort((key, part, key >> 20, step))
        step, part, mark, pre = step[order], part[order], mark[order], pre[order]
    else:
        step = part = np.zeros(0, np.int64)
        mark, pre = np.zeros((0, p)), np.zeros((0, d))
    if rj["step"]:
        rs, rp, rm = (np.concatenate(rj[k]) for k in ("step", "particle", "mark"))
        o = np.lexsort((rp, rs))
        rejected = {"step": rs[o], "particle": rp[o], "mark": rm[o]}
    else:
        rejected = None
    return PathBundle(model, cfg, start_index, states, dB_all, step.astype(np.int64), part.astype(np.int64),
                      mark, pre, rejected, law=None if law is None else list(law))


def simulate_particle_system(model: CoefficientModel, cfg: SimulationConfig, stream: RandomStream | None = None,
                             threads: int = 1, start_index: int = 0) -> PathBundle:
    """Self-consistent N-particle approximation: the law at step k is the ensemble's empirical measure."""
    stream = stream if stream is not None else RandomStream(cfg.seed)
    index = np.arange(cfg.N)
    x0 = np.asarray(cfg.initial(stream, index, model.d), dtype=np.float64).reshape(cfg.N, model.d)
    return _run(model, cfg, stream, x0, index, start_index, None, threads)


def _frozen_flow(law_flow, s_index: int, n_steps: int) -> list:
    law_flow = list(law_flow)
    if len(law_flow) == n_steps + 1:
        return law_flow[s_index:]
    if len(law_flow) == n_steps + 1 - s_index:
        return law_flow
    raise ValueError(f"law flow of length {len(law_flow)} does not cover grid indices {s_index}..{n_steps}")


def simulate_decoupled(model: CoefficientModel, law_flow, x, s_index: int, cfg: SimulationConfig,
                       rng: RandomStream, n_paths: int = 1, threads: int = 1) -> PathBundle:
    """Paths started at x at grid index s_index, with coefficients reading a frozen law flow.

    ``law_flow`` is a list of measures indexed either absolutely (length
    ``n_steps + 1``) or from ``s_index`` (length ``n_steps + 1 - s_index``), or
    a :class:`PathBundle` whose law flow is used.
    """
    if isinstance(law_flow, PathBundle):
        src = law_flow
        law_flow = [src.measure(k) if k >= src.start_index else None for k in range(cfg.n_steps + 1)]
    flow = _frozen_flow(law_flow, s_index, cfg.n_steps)
    x = np.asarray(x, dtype=np.float64).reshape(1, model.d)
    x0 = np.tile(x, (n_paths, 1))
    return _run(model, cfg.replace(N=n_paths), rng, x0, np.arange(n_paths), s_index, flow, threads)


def independent_copies(model: CoefficientModel, K: int, cfg: SimulationConfig, law_flow=None,
                       stream: RandomStream | None = None) -> list:
    """K independent single-particle runs.

    Without ``law_flow`` each copy is a one-particle self-consistent run on its
    own spawned stream.  With a law flow, copy l is the decoupled path driven by
    particle counter l of the copies stream, started from the initial sampler.
    """
    if K < 1:
        raise ValueError("K must be positive")
    base = stream if stream is not None else RandomStream(cfg.seed).spawn(COPIES)
    one = cfg.replace(N=1)
    if law_flow is None:
        return [simulate_particle_system(model, one, stream=base.spawn(l)) for l in range(K)]
    flow = _frozen_flow(law_flow.law_flow if isinstance(law_flow, PathBundle) else law_flow, 0, cfg.n_steps)
    index = np.arange(K)
    x0 = np.asarray(cfg.initial(base, index, model.d), dtype=np.float64).reshape(K, model.d)
    bundle = _run(model, cfg.replace(N=K), base, x0, index, 0, flow, 1)
    return [bundle.select([l]) for l in range(K)]


def replay(bundle: PathBundle) -> np.ndarray:
    """Recompute all states from X_0, the stored increments and the stored events."""
    model = bundle.model
    out = np.empty_like(bundle.states)
    out[0] = bundle.states[0]
    for j in range(bundle.states.shape[0] - 1):
        k = bundle.start_index + j
        x = out[j]
        mu = EmpiricalMeasure._trusted(x) if bundle.self_consistent else bundle.measure(k)
        sl = bundle.events_in_step(k)
        out[j + 1] = advance(model, bundle.time(k), bundle.dt, x, mu, bundle.dB[j],
                             bundle.ev_particle[sl], bundle.ev_mark[sl])
    return out
