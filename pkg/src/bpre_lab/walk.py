"""The associated random walk: path statistics, renewal functions and conditioned samplers.

All samplers draw increments X = log m(Q) under the tilted measure by default,
where the walk of an intermediately subcritical environment has mean zero.
Conditioned paths are produced by exact rejection. Rejection is organised as
an *alive set*: a batch of walks is advanced step by step and a walk is
dropped as soon as it violates the constraint, so the cost per attempt is the
expected lifetime rather than the horizon.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .environment import EnvironmentSpec, Regime
from .stats import arcsine_cdf, ks_from_atoms
from .streams import AttemptsExhaustedError, as_stream, chunk_sizes, concat

__all__ = [
    "WalkPath",
    "path_stats",
    "ConditionedSample",
    "sample_conditioned_paths",
    "sample_conditioned_path",
    "RenewalTable",
    "default_grid",
    "estimate_renewal",
    "HarmonicityResult",
    "check_harmonicity",
    "walk_event_summary",
    "minimum_position_law",
    "meander_scaling_snapshot",
    "two_walk_overshoot_probability",
    "AttemptsExhaustedError",
    "OutOfGridError",
    "TruncationWarning",
]

CONDITIONS = ("stay_nonneg", "stay_neg", "min_at_end", "stay_below")

#: attempted walks per rejection chunk
REJECTION_CHUNK = 1 << 17
#: walks per chunk for unconditioned full-path simulation is about this many cells / n
CELLS_PER_CHUNK = 1 << 22


class OutOfGridError(ValueError):
    """A harmonicity check needs the renewal table far outside its fitted grid."""


class TruncationWarning(UserWarning):
    """The last retained term of a renewal series is not negligible."""


# -- single paths ----------------------------------------------------------


@dataclass(frozen=True)
class WalkPath:
    """A walk S_0..S_n with its extremal statistics.

    ``running_min`` and ``running_max`` are taken over S_1..S_n (S_0 excluded);
    ``min_index`` is the first index in 0..n where S attains its minimum.
    """

    start: float
    increments: np.ndarray
    sums: np.ndarray
    min_index: int
    running_min: float
    running_max: float
    codes: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def n(self) -> int:
        return int(self.increments.size)

    def reversed(self) -> "WalkPath":
        """The path with increments in reverse order and the same start."""
        codes = None if self.codes is None else self.codes[::-1].copy()
        return path_stats(self.start, self.increments[::-1], codes=codes)


def path_stats(start: float, increments, codes=None) -> WalkPath:
    x = np.asarray(increments, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("a walk path needs at least one increment")
    sums = np.empty(x.size + 1)
    sums[0] = start
    np.cumsum(x, out=sums[1:])
    sums[1:] += start
    return WalkPath(
        start=float(start),
        increments=x.copy(),
        sums=sums,
        min_index=int(np.argmin(sums)),
        running_min=float(sums[1:].min()),
        running_max=float(sums[1:].max()),
        codes=None if codes is None else np.asarray(codes).copy(),
    )


# -- alive-set rejection ---------------------------------------------------


def _violates(kind: str, s: np.ndarray, level: float) -> np.ndarray:
    if kind == "stay_nonneg":
        return s < level
    return s >= level  # stay_neg, stay_below


def _alive_chunk(
    spec: EnvironmentSpec,
    kind: str,
    n: int,
    level: float,
    measure: str,
    store: tuple[int, ...],
    rng: np.random.Generator,
    attempts: int,
) -> dict:
    """Advance ``attempts`` walks for n steps, keeping those that never violate the constraint.

    Returns survivors in attempt order: endpoint ``S_n``, and for every step in
    ``store`` (1-based) the code and partial sum at that step.
    """
    alive = np.arange(attempts)
    s = np.zeros(attempts)
    kept: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    store_set = set(store)
    for k in range(1, n + 1):
        if alive.size == 0:
            break
        codes = spec.draw_codes(measure, alive.size, rng)
        s = s + spec.log_means(codes)
        ok = ~_violates(kind, s, level)
        alive, s, codes = alive[ok], s[ok], codes[ok]
        if k in store_set:
            kept[k] = (alive, codes, s)
    out = {"S_n": s, "_attempt": alive}
    if store:
        code_cols, sum_cols = [], []
        for k in store:
            idx, codes, sums = kept[k] if k in kept else (np.empty(0, int), np.empty(0), np.empty(0))
            pos = np.searchsorted(idx, alive)
            code_cols.append(codes[pos] if alive.size else codes[:0])
            sum_cols.append(sums[pos] if alive.size else sums[:0])
        out["codes"] = np.stack(code_cols, axis=1) if alive.size else np.empty((0, len(store)))
        out["sums"] = np.stack(sum_cols, axis=1) if alive.size else np.empty((0, len(store)))
    return out


@dataclass
class ConditionedSample:
    """A batch of conditioned walks.

    ``codes[:, j]`` and ``sums[:, j]`` hold the environment code and S at step
    ``steps[j]`` (1-based, in the returned path's own time order).
    """

    kind: str
    n: int
    endpoint: np.ndarray
    steps: np.ndarray
    codes: np.ndarray
    sums: np.ndarray
    attempts: int
    weights: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.endpoint.size)

    @property
    def acceptance_rate(self) -> float:
        return self.size / self.attempts if self.attempts else math.nan

    def increments(self, spec: EnvironmentSpec) -> np.ndarray:
        return spec.log_means(self.codes)


def sample_conditioned_paths(
    spec: EnvironmentSpec,
    kind: str,
    n: int,
    N: int,
    rng,
    max_attempts: int | None = None,
    steps: Sequence[int] | None = None,
    level: float = 0.0,
    measure: str = "tilted",
    strategy: str = "rejection",
    table: "RenewalTable | None" = None,
    chunk: int = REJECTION_CHUNK,
) -> ConditionedSample:
    """Draw N walks of length n conditioned on one of

    * ``stay_nonneg``: S_k >= level for k = 1..n (L_n >= 0 at level 0);
    * ``stay_neg``: S_k < level for k = 1..n (M_n < 0 at level 0);
    * ``stay_below``: same as ``stay_neg``, for a general level x (M_n < x);
    * ``min_at_end``: tau_n = n, produced by reversing ``stay_neg`` paths.

    ``steps`` selects which steps keep their code and partial sum (default all).
    ``strategy='h_transform'`` additionally attaches the weights
    table(S_n) / table(0) that turn the killed walk into the Doob transform
    (opt-in, since the table is itself an estimate).
    """
    if kind not in CONDITIONS:
        raise ValueError(f"unknown conditioning {kind!r}")
    if n < 1:
        raise ValueError("horizon must be at least 1")
    steps = tuple(range(1, n + 1)) if steps is None else tuple(sorted(int(k) for k in steps))
    if any(k < 1 or k > n for k in steps):
        raise ValueError("stored steps must lie in 1..n")
    base = "stay_neg" if kind == "min_at_end" else kind
    if kind == "min_at_end":
        # step j of the reversed path is step n + 1 - j of the original
        store = tuple(sorted(n + 1 - k for k in steps))
        if level != 0.0:
            raise ValueError("min_at_end is defined at level 0")
    else:
        store = steps
    stream = as_stream(rng)
    if max_attempts is None:
        max_attempts = max(1000 * N, 10**7)
    fn = partial(_alive_chunk, spec, base, int(n), float(level), measure, store)
    results, attempts = stream.collect(fn, int(N), int(chunk), int(max_attempts))
    data = concat(results)
    codes = data.get("codes", np.empty((0, 0)))
    sums = data.get("sums", np.empty((0, 0)))
    endpoint = data["S_n"]
    if kind == "min_at_end" and store:
        # reversed path: S'_j = S_n - S_{n-j}; store is ascending in original time
        codes = codes[:, ::-1]
        orig = np.asarray(store)[::-1]  # original step n+1-j for each requested j
        prev_idx = orig - 1  # S'_j = S_n - S_{n-j}, and n - j = orig - 1
        prev = np.zeros_like(sums)
        # S_{orig-1} is available when orig-1 is also stored; otherwise rebuild from codes
        lookup = {k: sums[:, i] for i, k in enumerate(store)}
        for j, k in enumerate(prev_idx):
            if k == 0:
                prev[:, j] = 0.0
            elif k in lookup:
                prev[:, j] = lookup[k]
            else:
                prev[:, j] = lookup[k + 1] - spec.log_means(codes[:, j])
        sums = endpoint[:, None] - prev
    weights = None
    if strategy == "h_transform":
        if table is None:
            raise ValueError("h_transform strategy needs a renewal table")
        weights = np.asarray(table(endpoint - level), dtype=float) / float(table(0.0) or 1.0)
    elif strategy != "rejection":
        raise ValueError(f"unknown strategy {strategy!r}")
    return ConditionedSample(kind, int(n), endpoint, np.asarray(steps, dtype=int), codes, sums, attempts, weights)


def sample_conditioned_path(
    spec: EnvironmentSpec, kind: str, n: int, rng, max_attempts: int | None = None, level: float = 0.0
) -> WalkPath:
    """One conditioned path with all increments and codes."""
    batch = sample_conditioned_paths(spec, kind, n, 1, rng, max_attempts=max_attempts, level=level, chunk=256)
    codes = batch.codes[0]
    return path_stats(0.0, spec.log_means(codes), codes=codes)


# -- renewal functions -----------------------------------------------------


def default_grid(which: str, extent: float = 8.0, step: float = 0.05) -> np.ndarray:
    pts = np.round(np.arange(0.0, extent + step / 2, step), 10)
    return pts if which == "u" else -pts[::-1]


@dataclass
class RenewalTable:
    """Estimated renewal function on a grid.

    For ``which='u'`` the grid is nonnegative and u vanishes to the left of 0.
    For ``which='v'`` the grid is nonpositive, v vanishes to the right of 0,
    the grid value at 0 is the left limit of the series (equal to 1) and the
    separately defined value at 0 is ``v_at_zero``.
    """

    which: str
    grid: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray
    covariance: np.ndarray = field(repr=False)
    truncation_K: int
    samples_N: int
    v_at_zero: float | None = None
    v_at_zero_se: float | None = None
    truncation_warning: bool = False
    term_counts: np.ndarray = field(default=None, repr=False)

    def weights(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linear interpolation (extrapolation beyond the grid) as index pairs and weights."""
        x = np.asarray(x, dtype=float)
        g = self.grid
        j = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        t = (x - g[j]) / (g[j + 1] - g[j])
        return j, 1.0 - t, t

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j, w0, w1 = self.weights(x)
        out = w0 * self.values[j] + w1 * self.values[j + 1]
        if self.which == "u":
            out = np.where(x < 0, 0.0, out)
        else:
            out = np.where(x > 0, 0.0, out)
            if self.v_at_zero is not None:
                out = np.where(x == 0, self.v_at_zero, out)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value", "stderr", "side"])
            for x, v, s in zip(self.grid, self.values, self.standard_errors):
                w.writerow([repr(float(x)), repr(float(v)), repr(float(s)), self.which])


def _renewal_chunk(
    spec: EnvironmentSpec, which: str, ygrid: np.ndarray, K: int, rng: np.random.Generator, size: int
) -> dict:
    """Per-chunk sums for the renewal series.

    u counts steps k with S_1..S_k < 0 and -S_k <= x; v counts steps with
    S_1..S_k > 0 and S_k < -x. ``ygrid`` is the grid in the distance variable
    (x for u, -x for v), ascending.
    """
    G = ygrid.size
    alive = np.arange(size)
    s = np.zeros(size)
    paths, cols, ks = [], [], []
    term = np.zeros(K + 1, dtype=np.int64)
    ymax = ygrid[-1]
    for k in range(1, K + 1):
        if alive.size == 0:
            break
        s = s + spec.log_means(spec.draw_codes("tilted", alive.size, rng))
        ok = s < 0 if which == "u" else s > 0
        alive, s = alive[ok], s[ok]
        d = -s if which == "u" else s
        if which == "u":
            hit = d <= ymax
            col = np.searchsorted(ygrid, d[hit], side="left")
        else:
            hit = d < ymax
            col = np.searchsorted(ygrid, d[hit], side="right")
        term[k] = int(hit.sum())
        paths.append(alive[hit])
        cols.append(col)
        ks.append(np.full(col.size, k, dtype=np.int32))
    p = np.concatenate(paths) if paths else np.empty(0, int)
    c = np.concatenate(cols) if cols else np.empty(0, int)
    kk = np.concatenate(ks) if ks else np.empty(0, np.int32)
    return {"paths": p, "cols": c, "k": kk, "term": term, "G": G}


def _ladder_chunk(
    mu: float, sigma: float, which: str, ygrid: np.ndarray, max_iter: int, z: float, rng: np.random.Generator, size: int
) -> dict:
    """Record-value form of the renewal series for Gaussian increments.

    u(x) is the expected number of strict descending ladder epochs whose depth
    is at most x (v: strict ascending epochs of height below -x). Each walk
    runs until its record passes the grid edge. Far from the current record
    the walk moves in exact Gaussian blocks of b steps, with b chosen so that
    the distance to the record is at least ``z`` block standard deviations,
    which makes a missed record a z-sigma event.
    """
    sign = 1.0 if which == "u" else -1.0
    ymax = ygrid[-1]
    alive = np.arange(size)
    s = np.zeros(size)
    rec = np.zeros(size)
    paths, cols = [], []
    it = 0
    while alive.size and it < max_iter:
        it += 1
        h = s - rec
        b = np.maximum(1.0, np.floor((h / (z * sigma)) ** 2))
        s = s + sign * rng.normal(mu * b, sigma * np.sqrt(b))
        new = s < rec
        if new.any():
            d = -s[new]
            if which == "u":
                hit = d <= ymax
                col = np.searchsorted(ygrid, d[hit], side="left")
            else:
                hit = d < ymax
                col = np.searchsorted(ygrid, d[hit], side="right")
            paths.append(alive[new][hit])
            cols.append(col)
            rec = np.where(new, s, rec)
            done = np.zeros(alive.size, dtype=bool)
            done[np.flatnonzero(new)[~hit]] = True
            alive, s, rec = alive[~done], s[~done], rec[~done]
    p = np.concatenate(paths) if paths else np.empty(0, int)
    c = np.concatenate(cols) if cols else np.empty(0, int)
    return {"paths": p, "cols": c, "k": np.zeros(p.size, np.int32), "unfinished": int(alive.size)}


def _accumulate(chunks: list[dict], G: int, K_eff: int, size_of: Sequence[int]):
    total = np.zeros(G)
    cross = np.zeros((G, G))
    for ch, n_paths in zip(chunks, size_of):
        sel = ch["k"] <= K_eff
        p, c = ch["paths"][sel], ch["cols"][sel]
        if p.size == 0:
            continue
        uniq, local = np.unique(p, return_inverse=True)
        mat = np.zeros((uniq.size, G))
        np.add.at(mat, (local, c), 1.0)
        mat = np.cumsum(mat, axis=1)
        total += mat.sum(axis=0)
        cross += mat.T @ mat
    return total, cross


def estimate_renewal(
    spec: EnvironmentSpec,
    which: str,
    grid=None,
    K: int = 200,
    N: int = 200_000,
    rng=0,
    chunk: int = 50_000,
    method: str | None = None,
    max_iter: int = 200_000,
) -> RenewalTable:
    """Estimate u (``which='u'``) or v (``which='v'``) from N walks under the tilted measure.

    u(x) = 1 + sum_{k=1..K} P(-S_k <= x, M_k < 0) for x >= 0, and
    v(x) = 1 + sum_{k=1..K} P(-S_k > x, L_k > 0) for x <= 0.

    ``method='series'`` sums the first K terms. The truncation point is
    shortened to the first k after which three consecutive terms (at the
    widest grid point) fall below their standard errors; a
    :class:`TruncationWarning` is issued when the last retained term still
    exceeds its standard error. The neglected tail decays only like K^(-1/2)
    and shifts the harmonicity residual by a comparable constant.

    ``method='ladder'`` (default for the lognormal family with a mean-zero
    tilted walk) counts the same events along each walk without truncation,
    by following ladder records until they leave the grid. ``K`` is then
    unused and ``truncation_K`` is reported as 0.
    """
    if which not in ("u", "v"):
        raise ValueError("which must be 'u' or 'v'")
    if K < 1:
        raise ValueError("truncation K must be at least 1")
    if spec.classification is not Regime.INTERMEDIATELY_SUBCRITICAL:
        warnings.warn("renewal functions assume a mean-zero tilted walk", RuntimeWarning, stacklevel=2)
    grid = default_grid(which) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if which == "u" and grid[0] < 0 or which == "v" and grid[-1] > 0:
        raise ValueError("grid lies on the wrong side of zero")
    if grid.size < 2:
        raise ValueError("grid needs at least two points")
    ygrid = grid if which == "u" else -grid[::-1]
    stream = as_stream(rng)
    sizes = chunk_sizes(N, chunk)
    gaussian = spec.family == "lognormal_geometric" and abs(spec.increment_mean("tilted")) < 1e-12
    if method is None:
        method = "ladder" if gaussian else "series"
    if method == "ladder":
        if not gaussian:
            raise ValueError("the ladder method needs Gaussian mean-zero tilted increments")
        fn = partial(_ladder_chunk, 0.0, spec.sigma, which, ygrid, int(max_iter), 7.0)
        chunks = stream.map(fn, sizes)
        unfinished = sum(c["unfinished"] for c in chunks)
        if unfinished:
            warnings.warn(f"{unfinished} walks did not leave the grid", TruncationWarning, stacklevel=2)
        total, cross = _accumulate(chunks, ygrid.size, 0, sizes)
        return _finish_table(spec, which, grid, total, cross, N, 0, bool(unfinished), None, stream)
    if method != "series":
        raise ValueError(f"unknown renewal method {method!r}")
    chunks = stream.map(partial(_renewal_chunk, spec, which, ygrid, int(K)), sizes)
    term = np.sum([c["term"] for c in chunks], axis=0)

    # adaptive truncation: term estimate below its binomial standard error
    p = term / N
    below = p < np.sqrt(p * (1 - p) / N)
    K_eff = int(K)
    run = 0
    for k in range(1, K + 1):
        run = run + 1 if below[k] else 0
        if run == 3:
            K_eff = k
            break
    warn = bool(not below[K_eff])
    if warn:
        warnings.warn(
            f"renewal series term {K_eff} ({p[K_eff]:.3g}) exceeds its standard error; "
            "increase K for a smaller truncation bias",
            TruncationWarning,
            stacklevel=2,
        )
    total, cross = _accumulate(chunks, ygrid.size, K_eff, sizes)
    return _finish_table(spec, which, grid, total, cross, N, K_eff, warn, term, stream)


def _finish_table(spec, which, grid, total, cross, N, K_eff, warn, term, stream) -> RenewalTable:
    mean = total / N
    cov = cross / N - np.outer(mean, mean)
    if which == "v":
        # back to ascending x = -y
        mean, cov = mean[::-1], cov[::-1, ::-1]
    values = 1.0 + mean
    se = np.sqrt(np.maximum(np.diag(cov), 0.0) / N)
    table = RenewalTable(which, grid, values, se, cov, K_eff, int(N), truncation_warning=warn, term_counts=term)
    if which == "v":
        # v(0) := E[v(X); X < 0], evaluated with the fitted table
        g = stream.child("v_at_zero").generator()
        x = spec.log_means(spec.draw_codes("tilted", 200_000, g))
        vals = np.where(x < 0, table(np.minimum(x, -1e-300)), 0.0)
        table.v_at_zero = float(vals.mean())
        table.v_at_zero_se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    return table


@dataclass(frozen=True)
class HarmonicityResult:
    x: float
    lhs: float
    rhs: float
    residual: float
    stderr: float

    @property
    def abs_residual(self) -> float:
        return abs(self.residual)

    def within(self, sigmas: float = 3.0) -> bool:
        return self.abs_residual <= sigmas * self.stderr


def check_harmonicity(
    table: RenewalTable, spec: EnvironmentSpec, x: float, N: int = 1_000_000, rng=0, max_outside: float = 1e-4
) -> HarmonicityResult:
    """Compare E[u(x+X); x+X >= 0] with u(x) (or E[v(x+X); x+X < 0] with v(x)).

    The standard error combines the Monte Carlo error of the expectation over
    X with the sampling error of the table itself (through its per-path
    covariance), since both sides are linear in the table values.
    """
    x = float(x)
    if table.which == "u" and x < 0 or table.which == "v" and x >= 0:
        raise ValueError("x lies outside the domain of the renewal function")
    gen = as_stream(rng).generator()
    X = spec.log_means(spec.draw_codes("tilted", int(N), gen))
    y = x + X
    mask = y >= 0 if table.which == "u" else y < 0
    outside = (y > table.grid[-1]) if table.which == "u" else (y < table.grid[0])
    frac = float(np.mean(outside & mask))
    if frac > max_outside:
        raise OutOfGridError(f"{frac:.3g} of the mass of x+X lies beyond the fitted grid")
    f = np.where(mask, table(y), 0.0)
    lhs = float(f.mean())
    rhs = float(table(x))
    # sensitivity of lhs - rhs to the table values
    G = table.grid.size
    d = np.zeros(G)
    j, w0, w1 = table.weights(y[mask])
    np.add.at(d, j, w0 / N)
    np.add.at(d, j + 1, w1 / N)
    jx, a0, a1 = table.weights(np.array([x]))
    d[jx[0]] -= a0[0]
    d[jx[0] + 1] -= a1[0]
    var = float(f.var(ddof=1)) / N + float(d @ table.covariance @ d) / table.samples_N
    return HarmonicityResult(x, lhs, rhs, lhs - rhs, math.sqrt(max(var, 0.0)))


# -- unconditioned walk statistics -----------------------------------------


def _events_chunk(spec: EnvironmentSpec, n: int, measure: str, rng: np.random.Generator, size: int) -> dict:
    sums = np.zeros((size, n + 1))
    np.cumsum(spec.log_means(spec.draw_codes(measure, (size, n), rng)), axis=1, out=sums[:, 1:])
    tau = np.argmin(sums, axis=1)
    m_neg = sums[:, 1:].max(axis=1) < 0
    at_end = tau == n
    return {
        "tau_hist": np.bincount(tau, minlength=n + 1),
        "min_at_end": int(at_end.sum()),
        "max_neg": int(m_neg.sum()),
        "diff_sq": int(np.sum((at_end.astype(np.int64) - m_neg) ** 2)),
    }


@dataclass(frozen=True)
class WalkEventSummary:
    n: int
    N: int
    tau_hist: np.ndarray
    min_at_end: int
    max_neg: int
    diff_sq: int

    @property
    def p_min_at_end(self) -> float:
        return self.min_at_end / self.N

    @property
    def p_max_neg(self) -> float:
        return self.max_neg / self.N

    def duality(self) -> tuple[float, float]:
        """Paired difference P(tau_n = n) - P(M_n < 0) and its standard error."""
        d = self.p_min_at_end - self.p_max_neg
        var = self.diff_sq / self.N - d * d
        return d, math.sqrt(max(var, 0.0) / self.N)


def walk_event_summary(spec: EnvironmentSpec, n: int, N: int, rng, measure: str = "tilted") -> WalkEventSummary:
    """Simulate N unconditioned walks of length n; tally tau_n and the events {tau_n=n}, {M_n<0}."""
    if n < 1:
        raise ValueError("horizon must be at least 1")
    stream = as_stream(rng)
    rows = max(1, CELLS_PER_CHUNK // (n + 1))
    parts = stream.map(partial(_events_chunk, spec, int(n), measure), chunk_sizes(N, rows))
    return WalkEventSummary(
        int(n),
        int(N),
        np.sum([p["tau_hist"] for p in parts], axis=0),
        sum(p["min_at_end"] for p in parts),
        sum(p["max_neg"] for p in parts),
        sum(p["diff_sq"] for p in parts),
    )


@dataclass(frozen=True)
class MinimumPositionLaw:
    n: int
    N: int
    positions: np.ndarray  # k / n
    masses: np.ndarray
    ks: float


def minimum_position_law(
    spec: EnvironmentSpec, n: int, N: int, rng, reference_cdf: Callable | None = arcsine_cdf
) -> MinimumPositionLaw:
    """Empirical law of tau_n / n and its KS distance to ``reference_cdf``."""
    summ = walk_event_summary(spec, n, N, rng)
    masses = summ.tau_hist / N
    pos = np.arange(n + 1) / n
    ks = ks_from_atoms(pos, masses, reference_cdf) if reference_cdf is not None else math.nan
    return MinimumPositionLaw(int(n), int(N), pos, masses, ks)


@dataclass(frozen=True)
class MeanderSnapshot:
    n: int
    a_n: float
    x: float
    endpoint: np.ndarray  # S_n / a_n
    times: np.ndarray  # steps at which the path is recorded
    values: np.ndarray  # S_k / a_n at those steps
    acceptance_rate: float


def meander_scaling_snapshot(
    spec: EnvironmentSpec, n: int, x: float, N: int, rng, max_attempts: int | None = None
) -> MeanderSnapshot:
    """Law of S/a_n given M_n < x, a_n = sigma * sqrt(n), at the endpoint and dyadic times."""
    if n < 1:
        raise ValueError("horizon must be at least 1")
    a_n = spec.sigma * math.sqrt(n)
    times = sorted({max(1, n >> j) for j in range(0, int(math.log2(n)) + 1)})
    batch = sample_conditioned_paths(
        spec, "stay_below", n, N, rng, max_attempts=max_attempts, steps=times, level=float(x)
    )
    return MeanderSnapshot(
        int(n), a_n, float(x), batch.endpoint / a_n, np.asarray(times), batch.sums / a_n, batch.acceptance_rate
    )


@dataclass(frozen=True)
class OvershootEstimate:
    n: int
    r: int
    value: float
    stderr: float
    acceptance_rate: float


def two_walk_overshoot_probability(
    spec: EnvironmentSpec, n: int, r: int, N: int, rng, max_attempts: int | None = None
) -> OvershootEstimate:
    """P(min_{1<=i<=r}(S1_i - S1_r) <= S2_n | tau2_n = n) for independent walks S1, S2.

    Walk 2 only enters through its endpoint, which reversal leaves unchanged,
    so it is drawn as a stay-negative walk. The probability is estimated by
    the two-sample U-statistic over all N x N pairs.
    """
    if not 0 <= r < n:
        raise ValueError("need 0 <= r < n")
    if r == 0:
        return OvershootEstimate(int(n), 0, 0.0, 0.0, math.nan)
    stream = as_stream(rng)
    walk2 = sample_conditioned_paths(
        spec, "stay_neg", n, N, stream.child("walk2"), max_attempts=max_attempts, steps=()
    )
    b = walk2.endpoint
    g = stream.child("walk1").generator()
    sums = np.cumsum(spec.log_means(spec.draw_codes("tilted", (int(N), int(r)), g)), axis=1)
    a = (sums - sums[:, -1:]).min(axis=1)
    a_sorted, b_sorted = np.sort(a), np.sort(b)
    F_a = np.searchsorted(a_sorted, b, side="right") / a.size  # P(A <= b)
    G_b = 1.0 - np.searchsorted(b_sorted, a, side="left") / b.size  # P(B >= a)
    value = float(F_a.mean())
    var = F_a.var(ddof=1) / b.size + G_b.var(ddof=1) / a.size
    return OvershootEstimate(int(n), int(r), value, math.sqrt(max(var, 0.0)), walk2.acceptance_rate)
