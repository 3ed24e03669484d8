"""Poisson and Poisson-mixture primitives.

Everything here works in log space: corpus experiments produce counts in the
10^5 range, where naive factorials and powers overflow immediately. The
public surface is a handful of pure functions plus three small value types
(counts, count profiles, discrete mixing distributions) shared by the solver,
the estimators, and the oracle baselines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "CountsVector",
    "Profile",
    "MixingDistribution",
    "PosteriorRule",
    "InfeasiblePriorError",
    "poisson_log_pmf",
    "mixture_pmf",
    "mixture_log_pmf",
    "log_likelihood",
    "gradient_D",
    "posterior_mean",
    "save_prior",
    "load_prior",
]

# Atoms closer than ATOM_MERGE_TOL * (1 + theta) are considered the same
# Poisson rate and get merged; grid arithmetic otherwise produces spurious
# near-duplicate support points.
ATOM_MERGE_TOL = 1e-9


class InfeasiblePriorError(ValueError):
    """The prior assigns probability zero to an observed count."""


@dataclass(frozen=True)
class CountsVector:
    """Per-symbol observation counts, the sole input to every estimator."""

    counts: np.ndarray
    n_total: int = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("counts must be a nonempty 1-D sequence")
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", arr)
        object.__setattr__(self, "n_total", int(arr.sum()))

    @property
    def k(self) -> int:
        return int(self.counts.size)

    def profile(self) -> "Profile":
        return Profile.from_counts(self)


@dataclass(frozen=True)
class Profile:
    """Multiplicity histogram: entries[y] = number of symbols seen y times."""

    entries: dict[int, int]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("profile must describe at least one symbol")
        total = 0
        for y, phi in self.entries.items():
            if y < 0 or phi < 1:
                raise ValueError("profile entries must map y >= 0 to multiplicity >= 1")
            total += phi
        if total != self.k:
            raise ValueError(f"profile multiplicities sum to {total}, expected k={self.k}")

    @classmethod
    def from_counts(cls, counts: CountsVector) -> "Profile":
        values, mults = np.unique(counts.counts, return_counts=True)
        entries = {int(y): int(m) for y, m in zip(values, mults)}
        return cls(entries=entries, k=counts.k)

    @property
    def distinct_counts(self) -> np.ndarray:
        return np.array(sorted(self.entries), dtype=np.int64)

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([self.entries[y] for y in sorted(self.entries)], dtype=np.int64)

    @property
    def n_total(self) -> int:
        return int(sum(y * phi for y, phi in self.entries.items()))

    @property
    def max_count(self) -> int:
        return max(self.entries)

    @property
    def min_count(self) -> int:
        return min(self.entries)


def _merge_close_atoms(atoms: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(atoms, kind="stable")
    atoms, weights = atoms[order], weights[order]
    merged_a: list[float] = []
    merged_w: list[float] = []
    for a, w in zip(atoms, weights):
        if merged_a and a - merged_a[-1] <= ATOM_MERGE_TOL * (1.0 + a):
            # Weighted average keeps the merged atom inside the cluster.
            total = merged_w[-1] + w
            merged_a[-1] = (merged_a[-1] * merged_w[-1] + a * w) / total
            merged_w[-1] = total
        else:
            merged_a.append(float(a))
            merged_w.append(float(w))
    return np.array(merged_a), np.array(merged_w)


@dataclass(frozen=True)
class MixingDistribution:
    """Discrete prior over Poisson rates: distinct atoms with positive weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if atoms.ndim != 1 or weights.ndim != 1 or atoms.size != weights.size or atoms.size < 1:
            raise ValueError("atoms and weights must be 1-D sequences of equal length >= 1")
        if np.any(atoms < 0) or np.any(~np.isfinite(atoms)):
            raise ValueError("atoms must be finite and nonnegative")
        if np.any(weights <= 0) or np.any(~np.isfinite(weights)):
            raise ValueError("weights must be finite and positive")
        atoms, weights = _merge_close_atoms(atoms, weights)
        total = weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, expected 1 within 1e-12")
        weights = weights / total
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point_mass(cls, theta: float) -> "MixingDistribution":
        return cls(atoms=np.array([float(theta)]), weights=np.array([1.0]))

    @classmethod
    def from_unnormalized(cls, atoms, weights) -> "MixingDistribution":
        """Build after renormalizing weights (drops exact zeros first)."""
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        if atoms.size == 0:
            raise ValueError("no atoms with positive weight")
        return cls(atoms=atoms, weights=weights / weights.sum())

    @property
    def n_atoms(self) -> int:
        return int(self.atoms.size)

    def scaled(self, factor: float) -> "MixingDistribution":
        """Same weights with every atom multiplied by ``factor`` (> 0)."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return MixingDistribution(atoms=self.atoms * factor, weights=self.weights)


def poisson_log_pmf(theta, y):
    """log Poisson pmf ``y log(theta) - theta - log(y!)``, elementwise.

    Accepts scalars or arrays (broadcast). At theta == 0 the distribution is a
    point mass at zero: log pmf is 0 for y == 0 and -inf for y > 0.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y)
    if np.any(theta < 0):
        raise ValueError("theta must be nonnegative")
    if np.any(y < 0):
        raise ValueError("y must be nonnegative")
    y = y.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = y * np.log(theta) - theta - gammaln(y + 1.0)
        # 0 * log(0) -> nan; the correct limit for y == 0 is -theta.
        zero_y = (y == 0) & np.isnan(out)
        if np.any(zero_y):
            out = np.where(zero_y, -theta, out)
    if out.ndim == 0:
        return float(out)
    return out


def _log_weighted_pmf_matrix(G: MixingDistribution, ys: np.ndarray) -> np.ndarray:
    """Matrix of log(w_j) + log f_{theta_j}(y_d), shape (n_atoms, len(ys))."""
    lp = poisson_log_pmf(G.atoms[:, None], ys[None, :])
    return np.log(G.weights)[:, None] + lp


def mixture_log_pmf(G: MixingDistribution, ys) -> np.ndarray:
    """log f_G(y) for an array of counts, via log-sum-exp over atoms."""
    ys = np.atleast_1d(np.asarray(ys))
    if np.any(ys < 0):
        raise ValueError("y must be nonnegative")
    with np.errstate(divide="ignore"):
        return logsumexp(_log_weighted_pmf_matrix(G, ys), axis=0)


def mixture_pmf(G: MixingDistribution, y) -> float:
    """f_G(y) = sum_j w_j Poi(y; theta_j)."""
    val = float(np.exp(mixture_log_pmf(G, [y])[0]))
    return min(val, 1.0)


def log_likelihood(G: MixingDistribution, profile: Profile) -> float:
    """Total mixture log-likelihood sum_y Phi_y log f_G(y).

    Returns -inf when f_G underflows to zero at an observed count (e.g. a
    point mass at zero against positive counts).
    """
    ys = profile.distinct_counts
    phis = profile.multiplicities
    log_f = mixture_log_pmf(G, ys)
    if np.any(np.isneginf(log_f)):
        return float("-inf")
    return float(np.dot(phis, log_f))


def gradient_D(G: MixingDistribution, profile: Profile, theta) -> np.ndarray | float:
    """Directional-gradient function D_G(theta) = (1/k) sum_y Phi_y f_theta(y) / f_G(y).

    At a maximum-likelihood prior, D_G <= 1 everywhere with equality on the
    support; this is the optimality certificate the solver checks. ``theta``
    may be a scalar or an array of candidate atoms.
    """
    scalar = np.isscalar(theta) or np.ndim(theta) == 0
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))
    ys = profile.distinct_counts
    phis = profile.multiplicities
    log_f = mixture_log_pmf(G, ys)
    if np.any(np.isneginf(log_f)):
        raise InfeasiblePriorError("prior has zero mass at an observed count")
    log_p = poisson_log_pmf(thetas[:, None], ys[None, :])
    ratios = np.exp(log_p - log_f[None, :])
    out = ratios @ (phis / profile.k)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class PosteriorRule:
    """Posterior-mean rule for a fixed prior, memoized on the observed counts.

    With ``rho == 0`` the value at y is the plain Bayes rule
    (y+1) f_G(y+1) / f_G(y); with ``rho > 0`` the denominator is floored at
    rho via (y+1) (delta f_G(y) / max(f_G(y), rho) + 1), keeping the rule
    finite when the prior badly mismatches the data. The table is built
    eagerly so instances can be shared across threads.
    """

    prior: MixingDistribution
    rho: float = 0.0
    table: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")

    @classmethod
    def build(cls, prior: MixingDistribution, ys, rho: float = 0.0) -> "PosteriorRule":
        rule = cls(prior=prior, rho=rho)
        ys = np.unique(np.asarray(ys, dtype=np.int64))
        table = {int(y): rule._compute(int(y)) for y in ys}
        return cls(prior=prior, rho=rho, table=table)

    def _compute(self, y: int) -> float:
        G = self.prior
        if G.n_atoms == 1 and (G.atoms[0] > 0.0 or y == 0):
            # Single-atom prior: the posterior mean is the atom, exactly.
            # (A zero atom with y > 0 falls through to the zero-density
            # handling below.)
            return float(G.atoms[0])
        log_f = mixture_log_pmf(G, [y, y + 1])
        if self.rho == 0.0:
            if np.isneginf(log_f[0]):
                raise InfeasiblePriorError(
                    f"f_G({y}) = 0: unregularized posterior mean undefined"
                )
            return (y + 1) * float(np.exp(log_f[1] - log_f[0]))
        # Forward difference in the linear domain: the sign of delta matters
        # and must not be reconstructed from log values.
        f_y, f_y1 = float(np.exp(log_f[0])), float(np.exp(log_f[1]))
        val = (y + 1) * ((f_y1 - f_y) / max(f_y, self.rho) + 1.0)
        return max(val, 0.0)

    def value(self, y: int) -> float:
        y = int(y)
        if y < 0:
            raise ValueError("y must be nonnegative")
        hit = self.table.get(y)
        if hit is not None:
            return hit
        return self._compute(y)


def posterior_mean(rule: PosteriorRule, y: int) -> float:
    """Posterior-mean rate estimate for a symbol observed ``y`` times."""
    return rule.value(y)


def save_prior(G: MixingDistribution, n_scale: float, path) -> None:
    """Write a prior as JSON with the total-count scale it was fitted at."""
    payload = {
        "atoms": [float(a) for a in G.atoms],
        "weights": [float(w) for w in G.weights],
        "n_scale": float(n_scale),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_prior(path) -> tuple[MixingDistribution, float]:
    """Read a prior JSON written by :func:`save_prior`; returns (prior, n_scale)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    missing = {"atoms", "weights", "n_scale"} - payload.keys()
    if missing:
        raise ValueError(f"prior file {path} missing fields: {sorted(missing)}")
    n_scale = float(payload["n_scale"])
    if not math.isfinite(n_scale) or n_scale <= 0:
        raise ValueError("n_scale must be a positive finite number")
    G = MixingDistribution(
        atoms=np.asarray(payload["atoms"], dtype=float),
        weights=np.asarray(payload["weights"], dtype=float),
    )
    return G, n_scale
