"""Exact arithmetic on finitely supported probability measures.

Atomic measures carry sorted atoms with positive weights; categorical
measures share a fixed strictly increasing support. Distances, projections,
dominance checks, and divergences are computed from the piecewise-constant
CDF / quantile representation, with no sampling anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ATOM_MERGE_TOL = 1e-12
PROB_SUM_TOL = 1e-12


def _frozen_array(values) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AtomicDistribution:
    """Finitely supported measure: strictly increasing atoms, positive weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _frozen_array(self.atoms)
        weights = _frozen_array(self.weights)
        if atoms.ndim != 1 or atoms.shape != weights.shape or atoms.size == 0:
            raise ValueError("atoms and weights must be equal-length 1-D arrays")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if atoms.size > 1 and np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be positive and finite")
        total = float(weights.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, values, weights) -> "AtomicDistribution":
        """Build from unsorted atoms: sorts, merges locations within 1e-12,
        and drops zero-weight atoms."""
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if values.shape != weights.shape or values.ndim != 1:
            raise ValueError("values and weights must be equal-length 1-D arrays")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        keep = weights > 0.0
        values, weights = values[keep], weights[keep]
        if values.size == 0:
            raise ValueError("no atoms with positive weight")
        order = np.argsort(values, kind="stable")
        values, weights = values[order], weights[order]
        group = np.concatenate(([0], np.cumsum(np.diff(values) > ATOM_MERGE_TOL)))
        merged_w = np.bincount(group, weights=weights)
        first = np.concatenate(([0], np.nonzero(np.diff(group))[0] + 1))
        return cls(atoms=values[first], weights=merged_w)

    def mean(self) -> float:
        return float(self.atoms @ self.weights)

    def cdf(self, z) -> np.ndarray:
        """F(z) = P(Z <= z), evaluated at each point of z."""
        cum = np.concatenate(([0.0], np.cumsum(self.weights)))
        return cum[np.searchsorted(self.atoms, np.asarray(z, dtype=float), side="right")]

    def to_json(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "AtomicDistribution":
        return cls(atoms=doc["atoms"], weights=doc["weights"])


@dataclass(frozen=True)
class CategoricalDistribution:
    """Probability vector over a fixed strictly increasing support grid (K >= 2)."""

    grid: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        grid = _frozen_array(self.grid)
        probs = _frozen_array(self.probs)
        if grid.ndim != 1 or grid.shape != probs.shape:
            raise ValueError("grid and probs must be equal-length 1-D arrays")
        if grid.size < 2:
            raise ValueError("categorical support needs at least 2 grid points")
        if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be finite and strictly increasing")
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be nonnegative and finite")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probs must sum to 1 (got {total!r})")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "probs", probs)

    def mean(self) -> float:
        return float(self.grid @ self.probs)

    def as_atomic(self) -> AtomicDistribution:
        keep = self.probs > 0.0
        return AtomicDistribution(atoms=self.grid[keep], weights=self.probs[keep])

    def to_json(self) -> dict:
        return {"grid": self.grid.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "CategoricalDistribution":
        return cls(grid=doc["grid"], probs=doc["probs"])


def distribution_from_json(doc: dict):
    if "atoms" in doc:
        return AtomicDistribution.from_json(doc)
    if "grid" in doc:
        return CategoricalDistribution.from_json(doc)
    raise ValueError("unrecognized distribution document")


def _as_atomic(dist) -> AtomicDistribution:
    if isinstance(dist, AtomicDistribution):
        return dist
    if isinstance(dist, CategoricalDistribution):
        return dist.as_atomic()
    raise TypeError(f"not a distribution: {type(dist).__name__}")


def dirac(z: float) -> AtomicDistribution:
    """Point mass at z."""
    if not math.isfinite(z):
        raise ValueError(f"dirac location must be finite, got {z}")
    return AtomicDistribution(atoms=[z], weights=[1.0])


def pushforward_affine(nu: AtomicDistribution, r0: float, gamma: float) -> AtomicDistribution:
    """Image of nu under z -> r0 + gamma * z; collapses to dirac(r0) when gamma = 0."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not math.isfinite(r0):
        raise ValueError(f"shift must be finite, got {r0}")
    if gamma == 0.0:
        return dirac(r0)
    return AtomicDistribution.from_points(r0 + gamma * nu.atoms, nu.weights)


def mixture(components) -> AtomicDistribution:
    """Convex combination of atomic distributions; coincident atoms are merged
    and zero-weight components dropped."""
    components = list(components)
    total = math.fsum(w for w, _ in components)
    if any(w < 0.0 for w, _ in components) or abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"mixture weights must be nonnegative and sum to 1 (got {total!r})")
    values, weights = [], []
    for w, comp in components:
        if w == 0.0:
            continue
        comp = _as_atomic(comp)
        values.append(comp.atoms)
        weights.append(w * comp.weights)
    return AtomicDistribution.from_points(np.concatenate(values), np.concatenate(weights))


def mean(dist) -> float:
    """Expectation of an atomic or categorical distribution."""
    return dist.mean()


def _quantile_segments(nu1: AtomicDistribution, nu2: AtomicDistribution):
    """Common refinement of the two weight partitions of (0, 1].

    Returns (lengths, q1, q2): segment lengths and the constant quantile
    values of each distribution on each segment.
    """
    cum1 = np.cumsum(nu1.weights)
    cum2 = np.cumsum(nu2.weights)
    breaks = np.unique(np.concatenate(([0.0], cum1[:-1], cum2[:-1], [1.0])))
    lengths = np.diff(breaks)
    mids = (breaks[:-1] + breaks[1:]) / 2.0
    idx1 = np.minimum(np.searchsorted(cum1, mids, side="left"), nu1.atoms.size - 1)
    idx2 = np.minimum(np.searchsorted(cum2, mids, side="left"), nu2.atoms.size - 1)
    keep = lengths > 0.0
    return lengths[keep], nu1.atoms[idx1[keep]], nu2.atoms[idx2[keep]]


def wasserstein(nu1, nu2, p: float = 1.0) -> float:
    """Exact p-Wasserstein distance between two finitely supported measures.

    Computed as the L^p norm of the difference of quantile functions over the
    merged breakpoints of the two CDFs; no sampling or discretization error.
    Requires finite p >= 1.
    """
    p = float(p)
    if math.isinf(p):
        raise ValueError("p = inf is not supported")
    if not p >= 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    lengths, q1, q2 = _quantile_segments(_as_atomic(nu1), _as_atomic(nu2))
    diffs = np.abs(q1 - q2)
    if p == 1.0:
        return float(lengths @ diffs)
    return float((lengths @ diffs**p) ** (1.0 / p))


def sup_wasserstein(mu1, mu2, p: float = 1.0) -> float:
    """Max over (state, action) entries of the p-Wasserstein distance."""
    if (mu1.n_states, mu1.n_actions) != (mu2.n_states, mu2.n_actions):
        raise ValueError(
            f"mismatched index sets: {(mu1.n_states, mu1.n_actions)} vs "
            f"{(mu2.n_states, mu2.n_actions)}"
        )
    return max(
        wasserstein(mu1[x, a], mu2[x, a], p)
        for x in range(mu1.n_states)
        for a in range(mu1.n_actions)
    )


def cramer_project(nu, grid) -> CategoricalDistribution:
    """Project a finitely supported measure onto a categorical grid.

    Each atom z' is clamped to z_1 below the grid and to z_K above it;
    an interior atom with z_j < z' <= z_{j+1} splits its weight linearly
    between the bracketing grid points, the bracket found by binary search.
    The projection is linear in the input measure.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be 1-D with at least 2 points")
    if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be finite and strictly increasing")
    nu = _as_atomic(nu)
    probs = np.zeros(grid.size)
    idx = np.searchsorted(grid, nu.atoms, side="left")
    below = idx == 0
    above = idx == grid.size
    probs[0] += nu.weights[below].sum()
    probs[-1] += nu.weights[above].sum()
    inner = ~(below | above)
    if np.any(inner):
        i = idx[inner]
        z = nu.atoms[inner]
        w = nu.weights[inner]
        gap = grid[i] - grid[i - 1]
        np.add.at(probs, i - 1, w * (grid[i] - z) / gap)
        np.add.at(probs, i, w * (z - grid[i - 1]) / gap)
    return CategoricalDistribution(grid=grid, probs=probs)


def stochastically_dominates(nu1, nu2, tol: float = 1e-12) -> bool:
    """True iff nu1 stochastically dominates nu2: F1(z) <= F2(z) at every
    merged breakpoint, up to tol."""
    nu1, nu2 = _as_atomic(nu1), _as_atomic(nu2)
    zs = np.union1d(nu1.atoms, nu2.atoms)
    return bool(np.all(nu1.cdf(zs) <= nu2.cdf(zs) + tol))


def kl_divergence(target: CategoricalDistribution, model: CategoricalDistribution) -> float:
    """KL(target || model) for categorical distributions on the same grid.

    Uses the convention 0 * ln 0 = 0 and raises when the target puts mass
    where the model has none (absolute continuity violation).
    """
    if not np.array_equal(target.grid, model.grid):
        raise ValueError("target and model must share the same grid")
    support = target.probs > 0.0
    if np.any(model.probs[support] == 0.0):
        raise ValueError("target support is not contained in model support")
    t = target.probs[support]
    return float(np.sum(t * np.log(t / model.probs[support])))


class DistributionCollection:
    """One distribution per (state, action) pair, indexed as collection[x, a]."""

    __slots__ = ("_entries", "n_states", "n_actions")

    def __init__(self, entries):
        entries = tuple(tuple(row) for row in entries)
        if not entries or not entries[0]:
            raise ValueError("collection must be non-empty")
        n_actions = len(entries[0])
        if any(len(row) != n_actions for row in entries):
            raise ValueError("collection rows must have equal length")
        for row in entries:
            for dist in row:
                if not isinstance(dist, (AtomicDistribution, CategoricalDistribution)):
                    raise TypeError(f"not a distribution: {type(dist).__name__}")
        self._entries = entries
        self.n_states = len(entries)
        self.n_actions = n_actions

    @classmethod
    def constant(cls, n_states: int, n_actions: int, dist) -> "DistributionCollection":
        return cls([[dist] * n_actions for _ in range(n_states)])

    @classmethod
    def build(cls, n_states: int, n_actions: int, fn) -> "DistributionCollection":
        return cls([[fn(x, a) for a in range(n_actions)] for x in range(n_states)])

    def __getitem__(self, key):
        x, a = key
        return self._entries[x][a]

    def __iter__(self):
        for x, row in enumerate(self._entries):
            for a, dist in enumerate(row):
                yield (x, a), dist

    def map(self, fn) -> "DistributionCollection":
        return DistributionCollection([[fn(d) for d in row] for row in self._entries])

    def means(self) -> np.ndarray:
        return np.array([[d.mean() for d in row] for row in self._entries])

    def total_atoms(self) -> int:
        return sum(
            d.atoms.size if isinstance(d, AtomicDistribution) else d.grid.size
            for _, d in self
        )

    def max_atoms_per_entry(self) -> int:
        return max(
            d.atoms.size if isinstance(d, AtomicDistribution) else int(np.sum(d.probs > 0))
            for _, d in self
        )
