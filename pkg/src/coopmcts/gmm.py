"""One-dimensional Gaussian mixtures and the factored two-axis action mixture.

Density evaluation and sampling are scalar math (the tree search calls them
point-wise in a tight loop); weighted EM fitting is vectorized numpy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Variance floor for fitted mixtures, in action units squared.  Prevents a
# component from collapsing onto a repeated sample value.
VAR_MIN = 1e-4


class DegenerateSamplesError(ValueError):
    """Fitting K components requires at least K distinct sample values."""


@dataclass(frozen=True)
class Gmm1D:
    """Convex combination of K univariate Gaussians."""

    phi: tuple[float, ...]
    mu: tuple[float, ...]
    var: tuple[float, ...]

    def __post_init__(self):
        k = len(self.phi)
        if k == 0 or len(self.mu) != k or len(self.var) != k:
            raise ValueError("phi, mu and var must be non-empty and equally long")
        if any(p < 0.0 for p in self.phi):
            raise ValueError(f"mixing coefficients must be non-negative: {self.phi}")
        total = sum(self.phi)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mixing coefficients sum to {total:.8f}, expected 1")
        if any(v <= 0.0 for v in self.var):
            raise ValueError(f"variances must be strictly positive: {self.var}")

    @property
    def k(self) -> int:
        return len(self.phi)

    def pdf(self, x: float) -> float:
        """Mixture density at x (non-negative, finite)."""
        total = 0.0
        for p, m, v in zip(self.phi, self.mu, self.var):
            d = x - m
            total += p * math.exp(-0.5 * d * d / v) / math.sqrt(2.0 * math.pi * v)
        return total

    def mean(self) -> float:
        return sum(p * m for p, m in zip(self.phi, self.mu))

    def sample(self, rng, lo: float, hi: float, max_tries: int = 16) -> float:
        """Draw one value from the mixture, constrained to [lo, hi].

        A component is picked proportional to phi, then a Gaussian draw is
        taken; draws outside the bounds are rejected and resampled up to
        ``max_tries`` times, after which the last draw is clamped to the
        nearest bound.  ``rng`` is a ``random.Random``.
        """
        if not lo < hi:
            raise ValueError(f"invalid sampling bounds [{lo}, {hi}]")
        value = 0.0
        for _ in range(max_tries):
            u = rng.random()
            acc = 0.0
            comp = self.k - 1
            for i, p in enumerate(self.phi):
                acc += p
                if u < acc:
                    comp = i
                    break
            value = rng.gauss(self.mu[comp], math.sqrt(self.var[comp]))
            if lo <= value <= hi:
                return value
        return lo if value < lo else hi

    def to_dict(self) -> dict:
        return {"K": self.k, "phi": list(self.phi), "mu": list(self.mu),
                "var": list(self.var)}

    @classmethod
    def from_dict(cls, d: dict) -> "Gmm1D":
        g = cls(tuple(d["phi"]), tuple(d["mu"]), tuple(d["var"]))
        if d.get("K", g.k) != g.k:
            raise ValueError(f"declared K={d['K']} but {g.k} components given")
        return g


@dataclass(frozen=True)
class FactoredActionGmm:
    """Independent per-axis mixtures over (dv_lon, dy_lat)."""

    lon: Gmm1D
    lat: Gmm1D

    def joint_density(self, dv_lon: float, dy_lat: float) -> float:
        return self.lon.pdf(dv_lon) * self.lat.pdf(dy_lat)

    def peak_density(self) -> float:
        """Largest joint density over all pairs of component means.

        Used to normalize densities into a probability-like weight; the true
        mixture maximum can exceed this slightly when components overlap,
        which callers handle by clamping.
        """
        best = 0.0
        for m_lon in self.lon.mu:
            p_lon = self.lon.pdf(m_lon)
            for m_lat in self.lat.mu:
                d = p_lon * self.lat.pdf(m_lat)
                if d > best:
                    best = d
        return best

    def sample(self, rng, bounds) -> tuple[float, float]:
        """One (dv_lon, dy_lat) draw within the action bounds."""
        dv = self.lon.sample(rng, bounds.dv_min, bounds.dv_max)
        dy = self.lat.sample(rng, bounds.dy_min, bounds.dy_max)
        return dv, dy

    def to_dict(self) -> dict:
        return {"lon": self.lon.to_dict(), "lat": self.lat.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "FactoredActionGmm":
        return cls(Gmm1D.from_dict(d["lon"]), Gmm1D.from_dict(d["lat"]))


@dataclass(frozen=True)
class WeightedSamples:
    """Scalar observations with strictly positive importance weights."""

    values: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("samples must be non-empty")
        if len(self.values) != len(self.weights):
            raise ValueError("values and weights must have the same length")
        if any(w <= 0.0 for w in self.weights):
            raise ValueError("weights must be strictly positive")


def _kmeanspp_centers(x: np.ndarray, w: np.ndarray, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Weighted k-means++ seeding on scalar values."""
    centers = np.empty(k)
    centers[0] = x[rng.choice(x.size, p=w)]
    d2 = (x - centers[0]) ** 2
    for j in range(1, k):
        mass = w * d2
        total = mass.sum()
        if total <= 0.0:
            # all residual mass sits on already chosen centers; fall back to
            # any distinct value not used yet (guaranteed to exist by the
            # distinct-values precondition)
            remaining = np.setdiff1d(x, centers[:j])
            centers[j] = remaining[rng.integers(remaining.size)]
        else:
            centers[j] = x[rng.choice(x.size, p=mass / total)]
        np.minimum(d2, (x - centers[j]) ** 2, out=d2)
    return centers


def fit_em(samples: WeightedSamples, k: int, seed: int = 0,
           max_iter: int = 200, tol: float = 1e-8,
           var_min: float = VAR_MIN) -> Gmm1D:
    """Weighted EM fit of a K-component mixture to scalar samples.

    Weights are normalized internally, so uniformly rescaling all weights
    leaves the fit unchanged (bit-identical for power-of-two scales).  The
    weighted log-likelihood is asserted non-decreasing per iteration;
    iteration stops when it changes by less than ``tol``.  Components are
    returned in ascending order of mean.
    """
    if k < 1:
        raise ValueError("component count must be >= 1")
    x = np.asarray(samples.values, dtype=np.float64)
    w = np.asarray(samples.weights, dtype=np.float64)
    if np.unique(x).size < k:
        raise DegenerateSamplesError(
            f"need at least {k} distinct values, got {np.unique(x).size}")
    w = w / w.sum()

    rng = np.random.default_rng(seed)
    mu = _kmeanspp_centers(x, w, k, rng)
    assign = np.argmin((x[:, None] - mu[None, :]) ** 2, axis=1)
    phi = np.zeros(k)
    var = np.zeros(k)
    global_mean = float(np.sum(w * x))
    global_var = max(float(np.sum(w * (x - global_mean) ** 2)), var_min)
    for j in range(k):
        sel = assign == j
        mass = float(w[sel].sum())
        phi[j] = mass
        if mass > 0.0:
            var[j] = float(np.sum(w[sel] * (x[sel] - mu[j]) ** 2) / mass)
        else:
            var[j] = global_var
    var = np.maximum(var, var_min)
    phi = (phi + 1e-12) / (phi + 1e-12).sum()

    prev_ll = -np.inf
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            log_comp = (np.log(phi)[None, :]
                        - 0.5 * ((x[:, None] - mu[None, :]) ** 2 / var[None, :]
                                 + np.log(2.0 * np.pi * var)[None, :]))
        peak = log_comp.max(axis=1, keepdims=True)
        log_mix = peak[:, 0] + np.log(np.exp(log_comp - peak).sum(axis=1))
        ll = float(np.sum(w * log_mix))
        assert ll >= prev_ll - 1e-8 * max(1.0, abs(prev_ll)), \
            f"EM log-likelihood decreased: {prev_ll} -> {ll}"
        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll

        resp = np.exp(log_comp - log_mix[:, None])
        wr = w[:, None] * resp
        nk = np.maximum(wr.sum(axis=0), 1e-300)
        mu = (wr * x[:, None]).sum(axis=0) / nk
        var = np.maximum((wr * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk,
                         var_min)
        phi = nk / nk.sum()

    order = np.argsort(mu, kind="stable")
    return Gmm1D(tuple(float(p) for p in phi[order]),
                 tuple(float(m) for m in mu[order]),
                 tuple(float(v) for v in var[order]))
