"""Uniform empirical probability measures on R^d and the Wasserstein-2 metric."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError, EvaluationError
from .rng import MOLLIFY, RandomStream


class EmpiricalMeasure:
    """The measure (1/K) sum_l delta_{x^l} with K atoms in R^d.

    Atoms are stored as a read-only ``(K, d)`` float array.  A 1-d input is
    read as K atoms in dimension one.
    """

    __slots__ = ("atoms",)

    def __init__(self, atoms, dim: int | None = None):
        a = np.array(atoms, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(-1, 1) if dim in (None, 1) else a.reshape(1, -1)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionMismatchError(f"atoms must have shape (K, d) with K, d >= 1, got {a.shape}")
        if dim is not None and a.shape[1] != dim:
            raise DimensionMismatchError(f"expected dimension {dim}, got {a.shape[1]}")
        bad = ~np.isfinite(a).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise EvaluationError(f"atom {i} has non-finite coordinates", index=i)
        a.setflags(write=False)
        self.atoms = a

    @classmethod
    def _trusted(cls, atoms: np.ndarray) -> EmpiricalMeasure:
        # internal fast path: caller guarantees a finite (K, d) float array
        obj = cls.__new__(cls)
        a = atoms.view()
        a.setflags(write=False)
        obj.atoms = a
        return obj

    @classmethod
    def dirac(cls, x, copies: int = 1) -> EmpiricalMeasure:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return cls(np.tile(x, (copies, 1)))

    @property
    def K(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> np.ndarray:
        return self.atoms.mean(axis=0)

    def replicate(self, copies: int) -> EmpiricalMeasure:
        """Same measure with every atom repeated ``copies`` times (K becomes K*copies)."""
        return EmpiricalMeasure._trusted(np.repeat(self.atoms, copies, axis=0))

    def to_list(self) -> dict:
        return {"K": self.K, "d": self.d, "atoms": self.atoms.ravel().tolist()}

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(K={self.K}, d={self.d})"

    def __eq__(self, other) -> bool:
        return isinstance(other, EmpiricalMeasure) and np.array_equal(self.atoms, other.atoms)

    __hash__ = None


def second_moment(mu: EmpiricalMeasure) -> float:
    """Return mu(|.|^2)."""
    return float(np.mean(np.sum(mu.atoms * mu.atoms, axis=1)))


def _checked(values, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    flat = v.reshape(v.shape[0], -1) if v.ndim > 1 else v.reshape(-1, 1)
    bad = ~np.isfinite(flat).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"{name} is not finite at atom {i}", index=i)
    return v


def integrate(mu: EmpiricalMeasure, phi: Callable[[np.ndarray], np.ndarray]):
    """Return mu(phi) = (1/K) sum_l phi(x^l).

    ``phi`` is vectorized: it receives the ``(K, d)`` atom array and returns
    ``(K,)`` or ``(K, k)`` values.  Scalar-valued maps give a float.
    """
    v = _checked(phi(mu.atoms), "integrand")
    if v.ndim == 0:
        return float(v)
    out = v.mean(axis=0)
    return float(out) if out.ndim == 0 else out


def wasserstein2(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure) -> float:
    """Exact W2 distance between two empirical measures with the same K and d.

    For d = 1 the sorted coupling is optimal; otherwise an assignment problem
    on the squared-distance matrix is solved exactly.
    """
    if mu1.K != mu2.K or mu1.d != mu2.d:
        raise DimensionMismatchError(
            f"wasserstein2 needs equal atom counts and dimensions, got (K={mu1.K}, d={mu1.d}) "
            f"and (K={mu2.K}, d={mu2.d})"
        )
    if mu1.d == 1:
        # sorted coupling, summed in row order like the assignment cost
        perm = np.empty(mu1.K, dtype=np.intp)
        perm[np.argsort(mu1.atoms[:, 0], kind="stable")] = np.argsort(mu2.atoms[:, 0], kind="stable")
        diff = mu1.atoms[:, 0] - mu2.atoms[perm, 0]
        return float(np.sqrt(np.sum(diff * diff) / mu1.K))
    cost = optimal_cost_matrix(mu1, mu2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / mu1.K))


def optimal_cost_matrix(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure) -> np.ndarray:
    diff = mu1.atoms[:, None, :] - mu2.atoms[None, :, :]
    return np.sum(diff * diff, axis=2)


def pushforward(mu: EmpiricalMeasure, phi) -> EmpiricalMeasure:
    """Return mu o (I + phi)^{-1}, the measure with atoms x^l + phi(x^l).

    ``phi`` is either a callable on the ``(K, d)`` atoms or a constant vector.
    """
    shift = phi(mu.atoms) if callable(phi) else np.broadcast_to(np.asarray(phi, dtype=np.float64), mu.atoms.shape)
    shift = np.asarray(shift, dtype=np.float64).reshape(mu.atoms.shape)
    moved = mu.atoms + shift
    _checked(moved, "pushforward image")
    return EmpiricalMeasure._trusted(moved)


def gaussian_mollify(mu: EmpiricalMeasure, variance: float, rng: RandomStream) -> EmpiricalMeasure:
    """Convolve with N(0, variance I) by adding one Gaussian draw per atom."""
    if not variance >= 0.0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    if variance == 0.0:
        return mu
    k = np.arange(mu.K)[:, None]
    r = np.arange(mu.d)[None, :]
    xi = rng.normal(MOLLIFY, 0, k, r)
    return EmpiricalMeasure._trusted(mu.atoms + np.sqrt(variance) * xi)
