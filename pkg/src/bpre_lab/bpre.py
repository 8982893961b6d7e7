"""Branching processes in random environment.

Quenched dynamics given a fixed environment, exact quenched survival
probabilities, and the importance-sampling engine that realises the law of
the process conditioned on survival to generation n.

Conditioning on {Z_n > 0} uses the tilted environment measure P, under which
E[phi] = gamma^n E_P[phi e^{-S_n}]. The annealed survival probability decays
like gamma^n, whereas under P the relevant weights stay of polynomial size.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .environment import EnvironmentSpec
from .offspring import OffspringLaw, PopulationOverflowError, sample_generation_total, sample_totals
from .stats import ZeroEffectiveSampleError, ess, mean_se, weighted_law, weighted_law_se, weighted_mean
from .streams import as_stream, chunk_sizes, concat
from .walk import WalkPath, path_stats

STRATEGIES = ("tilted_rejection", "tilted_rao_blackwell")

#: cells (rows x generations) per sampler chunk
CELLS_PER_CHUNK = 1 << 22


def _laws(env) -> list[OffspringLaw]:
    return [e[0] if isinstance(e, tuple) else e for e in env]


def environment_walk(env) -> WalkPath:
    laws = _laws(env)
    return path_stats(0.0, [math.log(q.mean) if q.mean > 0 else -math.inf for q in laws])


@dataclass
class GenerationTrace:
    env: list[OffspringLaw]
    walk: WalkPath | None
    sizes: list[int]
    capped: bool = False

    @property
    def survived_to(self) -> int:
        last = 0
        for k, z in enumerate(self.sizes):
            if z > 0:
                last = k
        return last


def simulate_quenched(env, z0: int, horizon: int, rng, cap: int | None = None) -> GenerationTrace:
    """One realisation of Z_0..Z_horizon in a fixed environment.

    ``env`` is a sequence of offspring laws (or ``(law, X)`` pairs). If ``cap``
    is given and a generation exceeds it, simulation stops and the trace is
    flagged; capped traces are for diagnostics only.
    """
    if z0 < 0:
        raise ValueError("initial population must be nonnegative")
    laws = _laws(env)[:horizon]
    if len(laws) < horizon:
        raise ValueError("environment shorter than the horizon")
    gen = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()
    sizes = [int(z0)]
    capped = False
    for q in laws:
        z = sizes[-1]
        sizes.append(sample_generation_total(q, z, gen) if z else 0)
        if cap is not None and sizes[-1] > cap:
            capped = True
            break
    walk = environment_walk(laws) if laws and all(q.mean > 0 for q in laws) else None
    return GenerationTrace(laws, walk, sizes, capped)


def _replica_chunk(laws, z0, rng, size) -> np.ndarray:
    z = np.full(size, z0, dtype=np.int64)
    out = np.empty((size, len(laws) + 1), dtype=np.int64)
    out[:, 0] = z
    for k, q in enumerate(laws, start=1):
        z = sample_totals(q, z, rng)
        out[:, k] = z
    return out


def quenched_replicas(env, z0: int, n: int, N: int, rng, chunk: int = 100_000) -> np.ndarray:
    """N independent population paths (N x (n+1) int64) in one fixed environment."""
    laws = tuple(_laws(env)[:n])
    stream = as_stream(rng)
    parts = stream.map(partial(_replica_chunk, laws, int(z0)), chunk_sizes(N, chunk))
    return np.concatenate(parts)


def quenched_survival(env, n: int | None = None) -> float:
    """Exact P(Z_n > 0 | environment) for Z_0 = 1.

    Evaluates t_k = 1 - f_k(1 - t_{k+1}) backward from t_n = 1. For geometric
    laws every step is linear fractional, so this equals
    1 / (sum_{k<n} e^{-S_k} + e^{-S_n}); for finite tables, Poisson and point
    masses the generating functions are evaluated exactly.
    """
    laws = _laws(env)
    n = len(laws) if n is None else int(n)
    t = 1.0
    for q in reversed(laws[:n]):
        t = float(q.survival_map(t))
    return t


def survival_from(spec: EnvironmentSpec, codes: np.ndarray, r: int) -> np.ndarray:
    """Row-wise P(Z_n > 0 | Z_r = 1, environment) for a batch of coded environments (rows x n)."""
    codes = np.asarray(codes)
    n = codes.shape[1]
    t = np.ones(codes.shape[0])
    for k in range(n - 1, r - 1, -1):
        t = spec.survival_maps(codes[:, k], t)
    return t


def linear_fractional_survival(sums: np.ndarray) -> np.ndarray:
    """1 / (sum_{k<n} e^{-S_k} + e^{-S_n}) along the last axis, computed in log space."""
    s = np.asarray(sums, dtype=float)
    return np.exp(-np.logaddexp.reduce(-s, axis=-1))


# -- weighted samples -------------------------------------------------------


@dataclass(frozen=True)
class WeightedSample:
    observables: dict
    weight: float
    meta: dict


@dataclass
class WeightedSampleSet:
    """Self-normalised weighted sample: observables with nonnegative weights."""

    weights: np.ndarray
    observables: dict
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.weights.size)

    def __getitem__(self, i: int) -> WeightedSample:
        obs = {k: float(v[i]) for k, v in self.observables.items()}
        return WeightedSample(obs, float(self.weights[i]), dict(self.meta))

    @property
    def ess(self) -> float:
        return ess(self.weights)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def mean(self, name: str) -> tuple[float, float]:
        return weighted_mean(self.observables[name], self.weights)

    def law(self, name: str) -> dict:
        return weighted_law(self.observables[name], self.weights)

    def law_se(self, name: str) -> dict:
        return weighted_law_se(self.observables[name], self.weights)

    def positive(self) -> "WeightedSampleSet":
        keep = self.weights > 0
        return WeightedSampleSet(self.weights[keep], {k: v[keep] for k, v in self.observables.items()}, self.meta)

    def merge(self, other: "WeightedSampleSet") -> "WeightedSampleSet":
        if set(self.observables) != set(other.observables):
            raise ValueError("cannot merge samples with different observables")
        return WeightedSampleSet(
            np.concatenate([self.weights, other.weights]),
            {k: np.concatenate([v, other.observables[k]]) for k, v in self.observables.items()},
            dict(self.meta),
        )

    def manifest(self) -> dict:
        return {k: v for k, v in self.meta.items()}

    def to_csv(self, path, manifest_path=None) -> None:
        names = sorted(self.observables)
        meta_names = [k for k in ("n", "r") if k in self.meta]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["weight", *names, *meta_names])
            cols = [self.observables[k] for k in names]
            consts = [self.meta[k] for k in meta_names]
            for i in range(len(self)):
                w.writerow([repr(float(self.weights[i])), *(repr(float(c[i])) for c in cols), *consts])
        if manifest_path is not None:
            with open(manifest_path, "w", encoding="utf-8") as fh:
                json.dump(self.manifest(), fh, indent=2, sort_keys=True)


def default_r(n: int) -> int:
    return max(1, math.isqrt(n - 1) + 1) if n > 1 else 1


def survival_profile(spec: EnvironmentSpec, codes: np.ndarray, upto: int) -> np.ndarray:
    """t_k = P(Z_n > 0 | Z_k = 1, environment) for k = 0..upto, row-wise (rows x (upto+1))."""
    codes = np.asarray(codes)
    n = codes.shape[1]
    out = np.empty((codes.shape[0], upto + 1))
    t = np.ones(codes.shape[0])
    if upto >= n:
        out[:, n] = t
    for k in range(n - 1, -1, -1):
        t = spec.survival_maps(codes[:, k], t)
        if k <= upto:
            out[:, k] = t
    return out


def _nb(count: np.ndarray, p: np.ndarray, rng) -> np.ndarray:
    out = np.zeros(count.shape, dtype=np.int64)
    live = count > 0
    if live.any():
        out[live] = rng.negative_binomial(count[live].astype(float), np.minimum(p[live], 1.0))
    return out


def _table_step(law: OffspringLaw, red, blue, t_next, rng):
    """One generation of the survival-conditioned population for a finite-support law."""
    w = np.asarray(law.as_table().weights)
    K = w.size - 1
    y = np.arange(K + 1)
    q = (1.0 - t_next)[:, None]
    # blue parents: children law w(b)(1-t)^b, renormalised
    pb = w[None, :] * q ** y[None, :]
    # t' = 1 leaves no blue mass; such rows have no blue parents either
    pb[pb.sum(axis=1) == 0, 0] = 1.0
    pb /= pb.sum(axis=1, keepdims=True)
    new_blue = rng.multinomial(blue, pb) @ y
    # red parents: joint law of (red children a >= 1, blue children b)
    pairs = [(a, b) for a in range(1, K + 1) for b in range(0, K + 1 - a)]
    a_arr = np.array([a for a, _ in pairs])
    b_arr = np.array([b for _, b in pairs])
    from scipy.special import comb

    pr = w[a_arr + b_arr] * comb(a_arr + b_arr, a_arr) * t_next[:, None] ** a_arr * q**b_arr
    pr /= pr.sum(axis=1, keepdims=True)
    counts = rng.multinomial(red, pr)
    return counts @ a_arr, new_blue + counts @ b_arr


def conditioned_population(spec: EnvironmentSpec, codes: np.ndarray, t: np.ndarray, r: int, rng) -> np.ndarray:
    """Z_0..Z_r drawn exactly from the quenched law given Z_n > 0 (Doob transform).

    Every individual of generation k independently has descendants in
    generation n with probability t[:, k]; call these red. Given survival the
    ancestor is red, a red parent has at least one red child, and a blue
    parent has only blue children. For geometric laws with success
    probability s and c = (1-s)(1-t'), d = (1-s)t' (t' the next-generation
    survival), rho red parents have rho + NegBin(rho, s/(s+d)) red children
    and the blue children of everyone form NegBin(red children + rho + blue
    parents, 1 - c).
    """
    rows = codes.shape[0]
    red = np.ones(rows, dtype=np.int64)
    blue = np.zeros(rows, dtype=np.int64)
    z = np.empty((rows, r + 1), dtype=np.int64)
    z[:, 0] = 1
    for k in range(r):
        tn = t[:, k + 1]
        if spec.family == "lognormal_geometric":
            m = np.exp(codes[:, k].astype(float))
            new_red = red + _nb(red, 1.0 / (1.0 + m * tn), rng)
            new_blue = _nb(new_red + red + blue, (1.0 + m * tn) / (1.0 + m), rng)
        else:
            new_red = np.zeros(rows, dtype=np.int64)
            new_blue = np.zeros(rows, dtype=np.int64)
            for j, (law, _) in enumerate(spec.atoms):
                mask = codes[:, k] == j
                if mask.any():
                    new_red[mask], new_blue[mask] = _table_step(law, red[mask], blue[mask], tn[mask], rng)
        red, blue = new_red, new_blue
        if float(red.max(initial=0)) + float(blue.max(initial=0)) > 2.0**61:
            raise PopulationOverflowError("generation size would overflow int64")
        z[:, k + 1] = red + blue
    return z


def _survival_chunk(spec: EnvironmentSpec, n: int, r: int, strategy: str, m_early: int, rng, size: int) -> dict:
    codes = spec.draw_codes("tilted", (size, n), rng)
    x = spec.log_means(codes)
    s = np.zeros((size, n + 1))
    np.cumsum(x, axis=1, out=s[:, 1:])
    rows = np.arange(size)

    if strategy == "tilted_rao_blackwell":
        t = survival_profile(spec, codes, r)
        z = conditioned_population(spec, codes, t, r, rng)
        with np.errstate(over="ignore"):
            weight = np.exp(-s[:, n] + np.log(t[:, 0]))
    else:
        z = np.empty((size, r + 1), dtype=np.int64)
        z[:, 0] = 1
        cur = z[:, 0].copy()
        for k in range(1, n + 1):
            cur = spec.sample_totals(codes[:, k - 1], cur, rng)
            if k <= r:
                z[:, k] = cur
        weight = np.where(cur > 0, np.exp(-s[:, n]), 0.0)

    tau = np.argmin(s[:, : r + 1], axis=1)
    s_tau = s[rows, tau]
    z_tau = z[rows, tau]
    z_r = z[:, r]
    x_tau = np.where(tau >= 1, x[rows, np.maximum(tau - 1, 0)], np.nan)
    x_next = np.where(tau < n, x[rows, np.minimum(tau, n - 1)], np.nan)
    early = np.clip(x[:, :m_early].mean(axis=1), -1.0, 1.0)
    return {
        "weight": weight,
        "Z_1": z[:, 1].astype(float),
        "Z_tau": z_tau.astype(float),
        "Z_r": z_r.astype(float),
        "Z_r_normalized": z_r * np.exp(-(s[:, r] - s_tau)),
        "tau_r": tau.astype(float),
        "S_r_minus_S_tau": s[:, r] - s_tau,
        "X_tau": x_tau,
        "X_tau_next": x_next,
        "early_mean": early,
    }


def conditioned_survival_sampler(
    spec: EnvironmentSpec,
    n: int,
    r: int | None = None,
    N: int = 100_000,
    rng=0,
    strategy: str = "tilted_rao_blackwell",
    chunk_rows: int | None = None,
) -> WeightedSampleSet:
    """Weighted sample realising the law of the process given Z_n > 0.

    Environments and populations are drawn with the environment under the
    tilted measure. The weight is

    * ``tilted_rejection``: e^{-S_n} 1{Z_n > 0}, populations simulated to n;
    * ``tilted_rao_blackwell``: e^{-S_n} P(Z_n > 0 | environment), with
      Z_0..Z_r drawn from the quenched law conditioned on Z_n > 0 (see
      :func:`conditioned_population`). These weights never exceed 1.

    Observables: Z_1, Z_tau (tau = tau_r, first minimum of S_0..S_r), Z_r,
    Z_r e^{-(S_r - S_tau)}, tau_r, S_r - S_tau, the increments X_tau and
    X_{tau+1} (NaN where undefined) and the clipped early mean
    clip(mean(X_1..X_m), -1, 1) with m = ceil(sqrt(n)).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    r = default_r(n) if r is None else int(r)
    if not 1 <= r <= n:
        raise ValueError("need 1 <= r <= n")
    m_early = min(n, default_r(n))
    stream = as_stream(rng)
    rows = chunk_rows or max(256, CELLS_PER_CHUNK // (n + 1))
    fn = partial(_survival_chunk, spec, int(n), r, strategy, m_early)
    data = concat(stream.map(fn, chunk_sizes(N, rows)))
    weights = data.pop("weight")
    if not weights.sum() > 0:
        raise ZeroEffectiveSampleError(f"all {N} weights vanished (n={n}, strategy={strategy})")
    meta = {"n": int(n), "r": r, "N": int(N), "strategy": strategy, "seed": stream.seed, "spec": spec.to_dict()}
    return WeightedSampleSet(weights, data, meta)


def _annealed_chunk(spec: EnvironmentSpec, n: int, measure: str, rng, size: int) -> dict:
    codes = spec.draw_codes(measure, (size, n), rng)
    z = np.ones(size, dtype=np.int64)
    for k in range(n):
        z = spec.sample_totals(codes[:, k], z, rng)
    return {"Z_n": z, "S_n": spec.log_means(codes).sum(axis=1)}


def simulate_population(spec: EnvironmentSpec, n: int, N: int, rng, measure: str = "annealed") -> dict:
    """Z_n and S_n for N independent environment-population pairs under ``measure``."""
    stream = as_stream(rng)
    rows = max(256, CELLS_PER_CHUNK // (n + 1))
    return concat(stream.map(partial(_annealed_chunk, spec, int(n), measure), chunk_sizes(N, rows)))


@dataclass(frozen=True)
class AnnealedMeanCheck:
    n: int
    N: int
    estimate: float  # of E[Z_n]
    stderr: float
    ratio: float  # estimate / gamma^n
    ratio_stderr: float


def annealed_mean_check(spec: EnvironmentSpec, n: int, N: int, rng) -> AnnealedMeanCheck:
    """Estimate E[Z_n] as gamma^n times the tilted mean of Z_n e^{-S_n}."""
    d = simulate_population(spec, n, N, rng, measure="tilted")
    g = spec.gamma**n
    ratio, se = mean_se(d["Z_n"] * np.exp(-d["S_n"]))
    return AnnealedMeanCheck(int(n), int(N), ratio * g, se * g, ratio, se)


__all__ = [
    "GenerationTrace",
    "simulate_quenched",
    "quenched_replicas",
    "quenched_survival",
    "survival_from",
    "survival_profile",
    "conditioned_population",
    "linear_fractional_survival",
    "WeightedSample",
    "WeightedSampleSet",
    "conditioned_survival_sampler",
    "simulate_population",
    "annealed_mean_check",
    "AnnealedMeanCheck",
    "default_r",
    "STRATEGIES",
    "PopulationOverflowError",
    "ZeroEffectiveSampleError",
]
