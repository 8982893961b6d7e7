"""Size-biased trees with a spine.

The spine particle of generation k-1 reproduces by the size-biased law of
Q_k; one of its children (uniformly chosen) continues the spine, the others
found the side population of index k-1. Every other particle reproduces by
Q_k. Side populations are tracked as generation counts:

    side[k, i] = number of generation-k particles descending from the spine
                 particle of generation i but not from the one of generation i+1,

so side[i+1, i] = (spine offspring in generation i+1) - 1, side[k, i] = 0 for
i >= k, and the total of generation k is 1 + sum_i side[k, i].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .environment import EnvironmentSpec
from .offspring import DegenerateMeanError, OffspringLaw, PopulationOverflowError, sample_size_biased, sample_totals
from .streams import as_stream
from .walk import WalkPath, path_stats

_ROOM = 2.0**61


def _laws(env) -> list[OffspringLaw]:
    return [e[0] if isinstance(e, tuple) else e for e in env]


@dataclass
class SpineTrace:
    env: list[OffspringLaw]
    walk: WalkPath
    spine_offspring: np.ndarray  # entry k-1: spine offspring in generation k
    sides: np.ndarray  # (n+1) x n
    totals: np.ndarray  # Z~_0..Z~_n

    @property
    def n(self) -> int:
        return int(self.spine_offspring.size)

    def to_csv(self, path, sides_path=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "total", "S_k"])
            for k, (z, s) in enumerate(zip(self.totals, self.walk.sums)):
                w.writerow([k, int(z), repr(float(s))])
        if sides_path is not None:
            with open(sides_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["k", "i", "count"])
                for k, i in zip(*np.nonzero(self.sides)):
                    w.writerow([int(k), int(i), int(self.sides[k, i])])


def simulate_spine(env, horizon: int, rng) -> SpineTrace:
    """One spine tree in a fixed environment, up to generation ``horizon``."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    laws = _laws(env)[:horizon]
    if len(laws) < horizon:
        raise ValueError("environment shorter than the horizon")
    if any(not q.mean > 0 for q in laws):
        raise DegenerateMeanError("the spine needs every offspring law to have positive mean")
    gen = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()
    n = horizon
    sides = np.zeros((n + 1, n), dtype=np.int64)
    spine = np.zeros(n, dtype=np.int64)
    for k in range(1, n + 1):
        q = laws[k - 1]
        if k >= 2:
            sides[k, : k - 1] = sample_totals(q, sides[k - 1, : k - 1], gen)
        spine[k - 1] = int(sample_size_biased(q, 1, gen)[0])
        sides[k, k - 1] = spine[k - 1] - 1
    totals = 1 + sides.sum(axis=1)
    walk = path_stats(0.0, [math.log(q.mean) for q in laws])
    return SpineTrace(laws, walk, spine, sides, totals)


def wplus_trajectory(trace: SpineTrace) -> np.ndarray:
    """e^{-S_k} Z~_k for k = 0..n."""
    return np.exp(-trace.walk.sums) * trace.totals


# -- batches ---------------------------------------------------------------


@dataclass
class SpineBatch:
    """Many spine trees; row j uses environment row j.

    ``sides`` is rows x (n+1) x n when kept. ``frozen`` marks rows whose total
    exceeded the cap; from then on their normalised total is held constant
    and their counts are no longer simulated (diagnostic use only).
    """

    sums: np.ndarray  # rows x (n+1)
    spine_offspring: np.ndarray  # rows x n
    totals: np.ndarray  # rows x (n+1), float when a cap is used
    sides: np.ndarray | None
    frozen: np.ndarray
    etas: np.ndarray  # rows x n, eta of Q_1..Q_n

    @property
    def wplus(self) -> np.ndarray:
        return np.exp(-self.sums) * self.totals


class _FixedEnv:
    def __init__(self, laws: Sequence[OffspringLaw]):
        self.laws = list(laws)

    def step(self, k, z, rng):
        return sample_totals(self.laws[k], z, rng)

    def spine(self, k, rows, rng):
        return sample_size_biased(self.laws[k], rows, rng)

    def log_means(self, rows, n):
        x = np.array([math.log(q.mean) for q in self.laws[:n]])
        return np.broadcast_to(x, (rows, n))

    def etas(self, rows, n):
        return np.broadcast_to(np.array([q.eta for q in self.laws[:n]]), (rows, n))


class _CodedEnv:
    def __init__(self, spec: EnvironmentSpec, codes: np.ndarray):
        self.spec, self.codes = spec, np.asarray(codes)

    def step(self, k, z, rng):
        return self.spec.sample_totals(self.codes[:, k], z, rng)

    def spine(self, k, rows, rng):
        return self.spec.sample_spine_offspring(self.codes[:, k], rng)

    def log_means(self, rows, n):
        return self.spec.log_means(self.codes[:, :n])

    def etas(self, rows, n):
        return self.spec.etas(self.codes[:, :n])


def simulate_spine_batch(
    env,
    horizon: int,
    rows: int | None = None,
    rng=0,
    keep_sides: bool = True,
    cap: float | None = None,
    codes: np.ndarray | None = None,
) -> SpineBatch:
    """Vectorised spine trees.

    ``env`` is either a list of offspring laws shared by all rows (then give
    ``rows``) or an :class:`EnvironmentSpec` together with a ``codes`` matrix
    (rows x horizon) of environment codes.
    """
    gen = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()
    if isinstance(env, EnvironmentSpec):
        if codes is None:
            raise ValueError("coded environments need a codes matrix")
        src = _CodedEnv(env, codes)
        rows = codes.shape[0]
    else:
        laws = _laws(env)
        if any(not q.mean > 0 for q in laws[:horizon]):
            raise DegenerateMeanError("the spine needs every offspring law to have positive mean")
        src = _FixedEnv(laws)
        if rows is None:
            raise ValueError("give the number of rows for a fixed environment")
    n = int(horizon)
    x = np.asarray(src.log_means(rows, n), dtype=float)
    sums = np.zeros((rows, n + 1))
    np.cumsum(x, axis=1, out=sums[:, 1:])
    spine = np.zeros((rows, n), dtype=np.int64)
    frozen = np.zeros(rows, dtype=bool)
    totals = np.ones((rows, n + 1), dtype=float if cap is not None else np.int64)
    sides = np.zeros((rows, n + 1, n), dtype=np.int64) if keep_sides else None
    others = np.zeros(rows, dtype=np.int64)  # non-spine particles of the current generation
    for k in range(1, n + 1):
        y = np.asarray(src.spine(k - 1, rows, gen), dtype=np.int64)
        spine[:, k - 1] = y
        if keep_sides:
            if k >= 2:
                prev = sides[:, k - 1, : k - 1]
                flat = src_step_matrix(src, k - 1, prev, gen)
                sides[:, k, : k - 1] = flat
            sides[:, k, k - 1] = y - 1
            others = sides[:, k, :k].sum(axis=1)
        else:
            stepped = src.step(k - 1, np.where(frozen, 0, others), gen)
            others = np.where(frozen, 0, stepped + y - 1)
        if cap is not None:
            tot = np.where(frozen, totals[:, k - 1] * np.exp(x[:, k - 1]), 1.0 + others)
            totals[:, k] = tot
            frozen = frozen | (tot > cap)
            others = np.where(frozen, 0, others)
        else:
            if float(others.max(initial=0)) > _ROOM:
                raise PopulationOverflowError("spine population would overflow int64")
            totals[:, k] = 1 + others
    return SpineBatch(sums, spine, totals, sides, frozen, np.asarray(src.etas(rows, n), dtype=float))


def src_step_matrix(src, k: int, counts: np.ndarray, rng) -> np.ndarray:
    """Offspring totals for a rows x m block of counts, law of generation k+1 per row."""
    rows, m = counts.shape
    if isinstance(src, _FixedEnv):
        return sample_totals(src.laws[k], counts.ravel(), rng).reshape(rows, m)
    col = np.repeat(src.codes[:, k], m)
    return src.spec.sample_totals(col, counts.ravel(), rng).reshape(rows, m)


def trace_from_batch(batch: SpineBatch, row: int, env=None) -> SpineTrace:
    sums = batch.sums[row]
    walk = path_stats(0.0, np.diff(sums))
    return SpineTrace(
        list(env) if env is not None else [],
        walk,
        batch.spine_offspring[row].copy(),
        batch.sides[row].copy(),
        np.asarray(batch.totals[row]).copy(),
    )


# -- diagnostics -----------------------------------------------------------


def side_mean_identity(env, i: int, n: int) -> float:
    """Quenched mean of side[n, i]: eta(Q_{i+1}) e^{S_n - S_i}."""
    laws = _laws(env)
    s = np.concatenate([[0.0], np.cumsum([math.log(q.mean) for q in laws])])
    return laws[i].eta * math.exp(s[n] - s[i])


@dataclass(frozen=True)
class SubmartingaleBound:
    k: int
    eps: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    def holds(self, sigmas: float = 3.0) -> bool:
        return self.lhs <= self.rhs + sigmas * math.hypot(self.lhs_se, self.rhs_se)


def spine_submartingale_bound(batch: SpineBatch, k: int, eps: float) -> SubmartingaleBound:
    """Frequency of sup_{m>k} e^{-S_m} sum_{i=k}^{m-1} side[m, i] >= eps against
    (1/eps) E[1 ^ sum_{i>=k} eta_{i+1} e^{-S_i}], over the rows of ``batch``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if batch.sides is None:
        raise ValueError("the bound needs the side populations")
    rows, n1, n = batch.sides.shape
    if k >= n:
        raise ValueError("k must be below the horizon")
    tail = batch.sides[:, :, k:].sum(axis=2).astype(float)  # sum_{i>=k} side[m, i]
    norm = np.exp(-batch.sums) * tail
    sup = norm[:, k + 1 :].max(axis=1)
    hit = (sup >= eps).astype(float)
    rhs_terms = np.minimum(1.0, (batch.etas[:, k:] * np.exp(-batch.sums[:, k:n])).sum(axis=1)) / eps
    return SubmartingaleBound(
        int(k),
        float(eps),
        float(hit.mean()),
        float(hit.std(ddof=1) / math.sqrt(rows)) if rows > 1 else 0.0,
        float(rhs_terms.mean()),
        float(rhs_terms.std(ddof=1) / math.sqrt(rows)) if rows > 1 else 0.0,
    )


@dataclass(frozen=True)
class AlphaBeta:
    tau: int
    z_hat_r: int
    z_hat_shift: int  # Z^_{a, tau+a}
    alpha: float
    beta: float
    in_range: bool


def _alpha_beta_arrays(sums, sides, a: int, r: int):
    """Vectorised alpha/beta over rows; sums rows x (n+1), sides rows x (n+1) x n."""
    rows = sums.shape[0]
    idx = np.arange(rows)
    tau = np.argmin(sums[:, : r + 1], axis=1)
    i = np.arange(sides.shape[2])[None, :]
    window = (np.abs(i - tau[:, None]) <= a) & (i < r)
    z_r = (sides[:, r, :] * window).sum(axis=1)
    shift = np.minimum(tau + a, sides.shape[1] - 1)
    in_range = tau + a <= r
    z_shift = (sides[idx, shift, :] * window).sum(axis=1)
    alpha = np.exp(sums[idx, tau] - sums[:, r]) * z_r
    beta = np.where(in_range, np.exp(sums[idx, tau] - sums[idx, shift]) * z_shift, np.nan)
    return tau, z_r, z_shift, alpha, beta, in_range


def alpha_beta(trace: SpineTrace, a: int, r: int) -> AlphaBeta:
    """Window sums around tau_r: Z^_{a,k} = sum_{|i - tau_r| <= a} side[k, i],
    alpha = e^{S_tau - S_r} Z^_{a,r}, beta = e^{S_tau - S_{tau+a}} Z^_{a,tau+a}.

    When tau_r + a > r the shifted quantity is undefined: ``in_range`` is False
    and beta is NaN.
    """
    if not 1 <= r <= trace.n:
        raise ValueError("need 1 <= r <= n")
    out = _alpha_beta_arrays(trace.walk.sums[None, :], trace.sides[None, :, :], int(a), int(r))
    tau, zr, zs, al, be, ok = (v[0] for v in out)
    return AlphaBeta(int(tau), int(zr), int(zs), float(al), float(be), bool(ok))


@dataclass(frozen=True)
class AlphaBetaRegression:
    slope: float
    slope_se: float
    intercept: float
    intercept_se: float
    expected_intercept: float
    rows: int


def alpha_beta_regression(env, a: int, r: int, N: int, rng) -> AlphaBetaRegression:
    """OLS of alpha on beta over N spine trees sharing one fixed environment.

    Given the environment and the side counts up to generation tau_r + a, the
    conditional mean of alpha is beta plus the expected contribution of the
    side population founded at generation tau_r + a + 1, which is
    eta(Q_{tau+a+1}) e^{S_tau - S_{tau+a}} when tau_r + a < r. So the slope
    should be 1 and the intercept that constant. Standard errors are
    heteroskedasticity-robust (HC0).
    """
    laws = _laws(env)
    batch = simulate_spine_batch(laws, r, rows=N, rng=rng)
    _, _, _, alpha, beta, ok = _alpha_beta_arrays(batch.sums, batch.sides, int(a), int(r))
    if not ok[0]:
        raise ValueError("tau_r + a exceeds r in this environment")
    s = batch.sums[0]
    tau = int(np.argmin(s[: r + 1]))
    expected = laws[tau + a].eta * math.exp(s[tau] - s[tau + a]) if tau + a < r else 0.0
    X = np.column_stack([np.ones(N), beta])
    XtX_inv = np.linalg.inv(X.T @ X)
    coef = XtX_inv @ X.T @ alpha
    resid = alpha - X @ coef
    meat = (X * resid[:, None] ** 2).T @ X
    cov = XtX_inv @ meat @ XtX_inv
    return AlphaBetaRegression(
        float(coef[1]), math.sqrt(cov[1, 1]), float(coef[0]), math.sqrt(cov[0, 0]), expected, int(N)
    )
