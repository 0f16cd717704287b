"""Lions derivatives by finite differences of the empirical lift.

For a measure functional H and atoms x^1..x^K, the lift is
H^K(x^1, ..., x^K) = H((1/K) sum_l delta_{x^l}).  Its partial derivatives give

    d_{x^i} H^K            = (1/K) d_mu H(mu)(x^i)
    d_{x^i x^i} H^K        = (1/K) d_y d_mu H(mu)(x^i) + (1/K^2) d2_mu H(mu)(x^i, x^i)
    d_{x^i x^j} H^K (i!=j) = (1/K^2) d2_mu H(mu)(x^i, x^j)

which are inverted here with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measure import EmpiricalMeasure
from .model import TestFunction

RELOCATION_COPIES = 4


@dataclass(frozen=True)
class LiftConfig:
    """Central-difference settings; the step for coordinate r of atom i is h_fd * max(1, |x^i_r|)."""

    h_fd: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.h_fd <= 0.1):
            raise ValueError(f"h_fd must lie in (0, 0.1], got {self.h_fd}")

    def step(self, value: float) -> float:
        return self.h_fd * max(1.0, abs(float(value)))


def lift_value(H: Callable[[EmpiricalMeasure], float], atoms) -> float:
    """H^K(x^1, ..., x^K)."""
    mu = atoms if isinstance(atoms, EmpiricalMeasure) else EmpiricalMeasure(atoms)
    return float(H(mu))


def _probe(H, base: np.ndarray, moves) -> float:
    a = base.copy()
    for i, r, delta in moves:
        a[i, r] += delta
    return float(H(EmpiricalMeasure._trusted(a)))


def _check_index(mu: EmpiricalMeasure, i: int) -> None:
    if not 0 <= i < mu.K:
        raise IndexError(f"atom index {i} out of range for K={mu.K}")


def l_derivative(H, mu: EmpiricalMeasure, i: int, cfg: LiftConfig = LiftConfig()) -> np.ndarray:
    """d_mu H(mu)(x^i) as K times a central difference of the lift in x^i."""
    _check_index(mu, i)
    base = np.array(mu.atoms)
    out = np.empty(mu.d)
    for r in range(mu.d):
        h = cfg.step(base[i, r])
        out[r] = mu.K * (_probe(H, base, [(i, r, h)]) - _probe(H, base, [(i, r, -h)])) / (2.0 * h)
    return out


def _cross(H, base: np.ndarray, i: int, r: int, j: int, s: int, hi: float, hj: float) -> float:
    pp = _probe(H, base, [(i, r, hi), (j, s, hj)])
    pm = _probe(H, base, [(i, r, hi), (j, s, -hj)])
    mp = _probe(H, base, [(i, r, -hi), (j, s, hj)])
    mm = _probe(H, base, [(i, r, -hi), (j, s, -hj)])
    return (pp - pm - mp + mm) / (4.0 * hi * hj)


def l_derivative_hessian(H, mu: EmpiricalMeasure, i: int, j: int, cfg: LiftConfig = LiftConfig()) -> np.ndarray:
    """d2_mu H(mu)(x^i, x^j) for i != j, as K^2 times the mixed difference in (x^i, x^j)."""
    _check_index(mu, i)
    _check_index(mu, j)
    if i == j:
        raise ValueError("l_derivative_hessian needs distinct atoms; use l_derivative_jacobian for i == j")
    base = np.array(mu.atoms)
    K2 = float(mu.K) ** 2
    out = np.empty((mu.d, mu.d))
    for r in range(mu.d):
        for s in range(mu.d):
            out[r, s] = K2 * _cross(H, base, i, r, j, s, cfg.step(base[i, r]), cfg.step(base[j, s]))
    return out


def l_derivative_jacobian(H, mu: EmpiricalMeasure, i: int, cfg: LiftConfig = LiftConfig()) -> np.ndarray:
    """d_y d_mu H(mu)(x^i).

    The diagonal block of the lift Hessian also carries d2_mu(x^i, x^i) / K^2.
    That term is estimated on a copy of mu with every atom doubled, where
    atoms 2i and 2i + 1 coincide with x^i, and then subtracted.
    """
    _check_index(mu, i)
    dup = mu.replicate(2)
    base = np.array(dup.atoms)
    K = dup.K
    a, b = 2 * i, 2 * i + 1
    h0 = float(H(dup))
    diag = np.empty((mu.d, mu.d))
    for r in range(mu.d):
        hr = cfg.step(base[a, r])
        for s in range(mu.d):
            if r == s:
                diag[r, r] = (_probe(H, base, [(a, r, hr)]) - 2.0 * h0 + _probe(H, base, [(a, r, -hr)])) / hr**2
            else:
                diag[r, s] = _cross(H, base, a, r, a, s, hr, cfg.step(base[a, s]))
    mixed = np.empty((mu.d, mu.d))
    for r in range(mu.d):
        for s in range(mu.d):
            mixed[r, s] = _cross(H, base, a, r, b, s, cfg.step(base[a, r]), cfg.step(base[b, s]))
    # K * diag = dydmu + dmu2 / K, and mixed = dmu2 / K^2
    return K * diag - K * mixed


def _located(mu: EmpiricalMeasure, y: np.ndarray):
    """A representation of (nearly) mu with an atom exactly at y, and that atom's index.

    When y is not an atom, mu is replicated and one copy of the nearest atom is
    moved to y; the represented measure changes by O(|y - x^l| / (copies * K)).
    """
    dist = np.sum((mu.atoms - y) ** 2, axis=1)
    l = int(np.argmin(dist))
    if dist[l] == 0.0:
        return mu, l
    rep = np.repeat(mu.atoms, RELOCATION_COPIES, axis=0)
    idx = l * RELOCATION_COPIES
    rep[idx] = y
    return EmpiricalMeasure._trusted(rep), idx


def _located_pair(mu: EmpiricalMeasure, y: np.ndarray, y2: np.ndarray):
    d1 = np.sum((mu.atoms - y) ** 2, axis=1)
    d2 = np.sum((mu.atoms - y2) ** 2, axis=1)
    i, j = int(np.argmin(d1)), int(np.argmin(d2))
    if d1[i] == 0.0 and d2[j] == 0.0 and i != j:
        return mu, i, j
    c = RELOCATION_COPIES
    rep = np.repeat(mu.atoms, c, axis=0)
    rep[i * c] = y
    rep[j * c + (1 if i == j else 0)] = y2
    return EmpiricalMeasure._trusted(rep), i * c, j * c + (1 if i == j else 0)


def numeric_test_function(value: Callable, d: int, cfg: LiftConfig = LiftConfig(), name: str = "numeric",
                          depends_on_measure: bool = True, measure_depends_on_x: bool = True,
                          analytic: dict | None = None) -> TestFunction:
    """Wrap a bare value map h(t, x, mu) with a finite-difference derivative suite.

    ``value`` is vectorized over x of shape ``(n, d)``.  Entries of ``analytic``
    (keyed like the TestFunction fields) take precedence over numeric ones.
    """
    analytic = dict(analytic or {})
    h_fd = cfg.h_fd

    def dt(t, x, mu):
        ht = h_fd * max(1.0, abs(t))
        return (np.asarray(value(t + ht, x, mu)) - np.asarray(value(t - ht, x, mu))) / (2.0 * ht)

    def _steps(x, r):
        return h_fd * np.maximum(1.0, np.abs(x[:, r]))

    def dx(t, x, mu):
        out = np.empty(x.shape)
        for r in range(d):
            h = _steps(x, r)
            xp, xm = x.copy(), x.copy()
            xp[:, r] += h
            xm[:, r] -= h
            out[:, r] = (np.asarray(value(t, xp, mu)) - np.asarray(value(t, xm, mu))) / (2.0 * h)
        return out

    def dxx(t, x, mu):
        n = x.shape[0]
        out = np.empty((n, d, d))
        h0 = np.asarray(value(t, x, mu))
        for r in range(d):
            hr = _steps(x, r)
            for s in range(d):
                if r == s:
                    xp, xm = x.copy(), x.copy()
                    xp[:, r] += hr
                    xm[:, r] -= hr
                    out[:, r, r] = (np.asarray(value(t, xp, mu)) - 2.0 * h0 + np.asarray(value(t, xm, mu))) / hr**2
                    continue
                hs = _steps(x, s)
                acc = 0.0
                for sr, ss in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    xx = x.copy()
                    xx[:, r] += sr * hr
                    xx[:, s] += ss * hs
                    acc = acc + sr * ss * np.asarray(value(t, xx, mu))
                out[:, r, s] = acc / (4.0 * hr * hs)
        return out

    def _per_point(t, x, fn):
        rows = []
        for n in range(x.shape[0]):
            xn = x[n:n + 1]
            rows.append(fn(lambda m: float(np.asarray(value(t, xn, m)).reshape(-1)[0])))
        return np.stack(rows)

    def dmu(t, x, mu, y):
        def one(H):
            out = []
            for yk in np.asarray(y).reshape(-1, d):
                m, l = _located(mu, yk)
                out.append(l_derivative(H, m, l, cfg))
            return np.stack(out)
        return _per_point(t, x, one)

    def dydmu(t, x, mu, y):
        def one(H):
            out = []
            for yk in np.asarray(y).reshape(-1, d):
                m, l = _located(mu, yk)
                out.append(l_derivative_jacobian(H, m, l, cfg))
            return np.stack(out)
        return _per_point(t, x, one)

    def dmu2(t, x, mu, y, y2):
        def one(H):
            out = []
            for yk, yk2 in zip(np.asarray(y).reshape(-1, d), np.asarray(y2).reshape(-1, d)):
                m, i, j = _located_pair(mu, yk, yk2)
                out.append(l_derivative_hessian(H, m, i, j, cfg))
            return np.stack(out)
        return _per_point(t, x, one)

    suite = {"dt": dt, "dx": dx, "dxx": dxx, "dmu": dmu, "dydmu": dydmu, "dmu2": dmu2}
    if not depends_on_measure:
        for k in ("dmu", "dydmu", "dmu2"):
            suite[k] = None
    provenance = {k: ("analytic" if k in analytic else "numeric") for k in suite}
    suite.update(analytic)
    return TestFunction(value=value, name=name, d=d, depends_on_measure=depends_on_measure,
                        measure_depends_on_x=measure_depends_on_x, provenance=provenance, **suite)
