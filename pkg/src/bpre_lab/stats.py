"""Estimators shared by the samplers: weighted means, laws and distances."""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np


class ZeroEffectiveSampleError(ValueError):
    """All importance weights vanished; no conditional estimate exists."""


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def proportion_se(hits: int, n: int) -> tuple[float, float]:
    p = hits / n
    return p, math.sqrt(max(p * (1 - p), 0.0) / n)


def ess(weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    s2 = float(np.dot(w, w))
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


def weighted_mean(values, weights) -> tuple[float, float]:
    """Self-normalised estimate sum(w x)/sum(w) with its delta-method standard error."""
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ZeroEffectiveSampleError("sum of importance weights is zero")
    mu = float(np.dot(w, x) / total)
    se = math.sqrt(float(np.dot(w * w, (x - mu) ** 2))) / total
    return mu, se


def weighted_law(values, weights) -> dict:
    """Normalised weighted mass function of integer-valued observations."""
    x = np.asarray(values)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ZeroEffectiveSampleError("sum of importance weights is zero")
    live = w > 0  # zero-weight (killed) samples carry no atom
    atoms, inv = np.unique(x[live], return_inverse=True)
    mass = np.bincount(inv, weights=w[live], minlength=atoms.size) / total
    return {int(a): float(p) for a, p in zip(atoms, mass)}


def weighted_law_se(values, weights) -> dict:
    """Per-atom standard errors of :func:`weighted_law`."""
    x = np.asarray(values)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    law = weighted_law(x, w)
    w2 = w * w
    out = {}
    for a, p in law.items():
        ind = (x == a).astype(float)
        out[a] = math.sqrt(float(np.dot(w2, (ind - p) ** 2))) / total
    return out


def lumped(law: Mapping[int, float], keep) -> dict:
    """Restrict ``law`` to atoms in ``keep``; remaining mass goes to the key ``'tail'``."""
    out = {a: law.get(a, 0.0) for a in keep}
    out["tail"] = max(0.0, 1.0 - sum(out.values()))
    return out


def tv_distance(p: Mapping[int, float], q: Mapping[int, float], min_mass: float = 1e-3) -> float:
    """Total variation on atoms carrying at least ``min_mass`` in either law, plus a lumped tail."""
    keep = sorted({a for a, m in p.items() if m >= min_mass} | {a for a, m in q.items() if m >= min_mass})
    lp, lq = lumped(p, keep), lumped(q, keep)
    return 0.5 * sum(abs(lp[a] - lq[a]) for a in lp)


def tv_noise(p_se: Mapping[int, float], q_se: Mapping[int, float], keep) -> float:
    """Rough standard error of :func:`tv_distance` from per-atom standard errors."""
    v = sum(p_se.get(a, 0.0) ** 2 + q_se.get(a, 0.0) ** 2 for a in keep)
    return 0.5 * math.sqrt(v)


def _weighted_ecdf(x, w):
    order = np.argsort(x, kind="stable")
    xs = np.asarray(x, dtype=float)[order]
    ws = np.asarray(w, dtype=float)[order]
    cw = np.cumsum(ws)
    total = cw[-1]
    if not total > 0:
        raise ZeroEffectiveSampleError("sum of importance weights is zero")
    # collapse ties: keep the last cumulative weight of every distinct value
    last = np.r_[xs[1:] != xs[:-1], True]
    return xs[last], cw[last] / total


def weighted_ks(x1, w1, x2, w2) -> float:
    """Two-sample Kolmogorov-Smirnov distance between weighted empirical laws."""
    a, fa = _weighted_ecdf(x1, w1)
    b, fb = _weighted_ecdf(x2, w2)
    grid = np.union1d(a, b)
    ia = np.searchsorted(a, grid, side="right") - 1
    ib = np.searchsorted(b, grid, side="right") - 1
    Fa = np.where(ia >= 0, fa[np.clip(ia, 0, None)], 0.0)
    Fb = np.where(ib >= 0, fb[np.clip(ib, 0, None)], 0.0)
    return float(np.max(np.abs(Fa - Fb)))


def ks_to_cdf(x, cdf: Callable, weights=None) -> float:
    """One-sample KS distance of an (optionally weighted) empirical law to ``cdf``."""
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    xs, F = _weighted_ecdf(x, w)
    F_before = np.r_[0.0, F[:-1]]
    G = np.asarray(cdf(xs), dtype=float)
    return float(max(np.max(np.abs(F - G)), np.max(np.abs(G - F_before))))


def ks_from_atoms(atoms, masses, cdf: Callable) -> float:
    """KS distance of a discrete law given by sorted ``atoms`` and ``masses`` to ``cdf``."""
    atoms = np.asarray(atoms, dtype=float)
    F = np.cumsum(np.asarray(masses, dtype=float))
    F /= F[-1]
    F_before = np.r_[0.0, F[:-1]]
    G = np.asarray(cdf(atoms), dtype=float)
    return float(max(np.max(np.abs(F - G)), np.max(np.abs(G - F_before))))


def arcsine_cdf(t):
    """CDF of Beta(1/2, 1/2): (2/pi) arcsin(sqrt(t))."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 2.0 / math.pi * np.arcsin(np.sqrt(t))


def ks_critical(n1: int, n2: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def within(diff: float, se: float, sigmas: float = 3.0) -> bool:
    return abs(diff) <= sigmas * se
