"""Offspring distributions on {0, 1, 2, ...}.

Four families are supported: geometric (number of failures before the first
success, success probability ``s``), Poisson, point mass and finite table.
Laws are immutable; every sampler takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: populations are int64 on the sampling paths
MAX_POPULATION = 2**63 - 1

_TABLE_TOL = 1e-12
_TAIL_TOL = 1e-14

KINDS = ("geometric", "poisson", "point_mass", "finite_table")


class DegenerateMeanError(ValueError):
    """Raised when an operation needs m(q) > 0 but the law has mean zero."""


class PopulationOverflowError(OverflowError):
    """Raised when a generation size would not fit in a signed 64-bit integer."""


@dataclass(frozen=True)
class OffspringLaw:
    """A probability mass function on the nonnegative integers.

    Use the constructors :meth:`geometric`, :meth:`poisson`,
    :meth:`point_mass` and :meth:`table` rather than calling this directly.
    """

    kind: str
    param: float = 0.0
    weights: tuple[float, ...] = ()
    cached_mean: float = field(init=False, compare=False, repr=False)
    cached_eta: float = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown offspring family {self.kind!r}")
        if self.kind == "geometric":
            if not 0.0 < self.param < 1.0:
                raise ValueError("geometric success probability must lie in (0, 1)")
        elif self.kind == "poisson":
            if not self.param > 0.0:
                raise ValueError("Poisson rate must be positive")
        elif self.kind == "point_mass":
            if self.param < 0 or self.param != int(self.param):
                raise ValueError("point mass location must be a nonnegative integer")
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or w.size == 0:
                raise ValueError("finite table needs at least one weight")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("table weights must be finite and nonnegative")
            if abs(math.fsum(self.weights) - 1.0) > _TABLE_TOL:
                raise ValueError(f"table weights sum to {math.fsum(self.weights)!r}, not 1")
        object.__setattr__(self, "cached_mean", self._mean())
        m = self.cached_mean
        object.__setattr__(self, "cached_eta", self._second_factorial() / (m * m) if m > 0 else math.nan)

    # -- constructors -----------------------------------------------------

    @classmethod
    def geometric(cls, s: float) -> "OffspringLaw":
        return cls("geometric", float(s))

    @classmethod
    def geometric_with_mean(cls, m: float) -> "OffspringLaw":
        """Geometric law on {0,1,...} with mean ``m`` (success probability 1/(1+m))."""
        return cls("geometric", 1.0 / (1.0 + float(m)))

    @classmethod
    def poisson(cls, lam: float) -> "OffspringLaw":
        return cls("poisson", float(lam))

    @classmethod
    def point_mass(cls, k: int) -> "OffspringLaw":
        return cls("point_mass", float(int(k)))

    @classmethod
    def table(cls, weights) -> "OffspringLaw":
        """Finite table; ``weights`` is a sequence indexed by y or a ``{y: q(y)}`` dict."""
        if isinstance(weights, dict):
            top = max(int(y) for y in weights)
            w = [0.0] * (top + 1)
            for y, p in weights.items():
                w[int(y)] = float(p)
        else:
            w = [float(p) for p in weights]
        while len(w) > 1 and w[-1] == 0.0:
            w.pop()
        return cls("finite_table", 0.0, tuple(w))

    # -- moments ----------------------------------------------------------

    @property
    def mean(self) -> float:
        return self.cached_mean

    @property
    def eta(self) -> float:
        if not self.cached_mean > 0:
            raise DegenerateMeanError("eta is undefined for a law with zero mean")
        return self.cached_eta

    @property
    def truncation_K(self) -> int | None:
        """Largest support point of a table law; ``None`` for parametric kinds."""
        return len(self.weights) - 1 if self.kind == "finite_table" else None

    def _mean(self) -> float:
        if self.kind == "geometric":
            return (1.0 - self.param) / self.param
        if self.kind in ("poisson", "point_mass"):
            return self.param
        return math.fsum(y * p for y, p in enumerate(self.weights))

    def _second_factorial(self) -> float:
        # E[Y(Y-1)]
        if self.kind == "geometric":
            s = self.param
            return 2.0 * (1.0 - s) ** 2 / s**2
        if self.kind == "poisson":
            return self.param**2
        if self.kind == "point_mass":
            k = self.param
            return k * (k - 1.0)
        return math.fsum(y * (y - 1) * p for y, p in enumerate(self.weights))

    def second_moment(self) -> float:
        """E[Y^2]."""
        return self._second_factorial() + self.cached_mean

    def zeta(self, a: int) -> float:
        """Truncated normalised second moment (1/m^2) * sum_{y >= a} y^2 q(y)."""
        if int(a) != a or a < 1:
            raise ValueError("zeta is defined for integer a >= 1")
        a = int(a)
        m = self.cached_mean
        if not m > 0:
            raise DegenerateMeanError("zeta is undefined for a law with zero mean")
        if self.kind == "geometric":
            # memoryless: Y | Y >= a has the law of a + Y
            tail = (1.0 - self.param) ** a
            return tail * (self.second_moment() + 2 * a * m + a * a) / (m * m)
        if self.kind == "point_mass":
            return 1.0 if self.param >= a else 0.0
        if self.kind == "finite_table":
            return math.fsum(y * y * p for y, p in enumerate(self.weights) if y >= a) / (m * m)
        lam = self.param
        if a <= lam:
            head = math.fsum(y * y * self.pmf(y) for y in range(a))
            return (self.second_moment() - head) / (m * m)
        terms = []
        y = a
        while True:
            t = y * y * self.pmf(y)
            terms.append(t)
            if t < 1e-18 * terms[0] or t == 0.0:
                break
            y += 1
        return math.fsum(terms) / (m * m)

    # -- mass function ----------------------------------------------------

    def pmf(self, y) -> float | np.ndarray:
        y_arr = np.asarray(y)
        if self.kind == "geometric":
            s = self.param
            out = np.where(y_arr >= 0, s * (1.0 - s) ** np.maximum(y_arr, 0), 0.0)
        elif self.kind == "poisson":
            from scipy.stats import poisson

            out = poisson.pmf(y_arr, self.param)
        elif self.kind == "point_mass":
            out = np.where(y_arr == int(self.param), 1.0, 0.0)
        else:
            w = np.asarray(self.weights)
            inside = (y_arr >= 0) & (y_arr < w.size)
            out = np.where(inside, w[np.clip(y_arr, 0, w.size - 1)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def support_bound(self, tol: float = _TAIL_TOL) -> int:
        """Smallest Y with P(Y > Y) < tol (exact for point mass and tables)."""
        if self.kind == "point_mass":
            return int(self.param)
        if self.kind == "finite_table":
            return len(self.weights) - 1
        if self.kind == "geometric":
            # P(Y > y) = (1-s)^(y+1)
            return max(0, math.ceil(math.log(tol) / math.log1p(-self.param)))
        from scipy.stats import poisson

        return int(poisson.isf(tol, self.param)) + 1

    def as_table(self, tol: float = _TAIL_TOL) -> "OffspringLaw":
        """Finite-table copy, truncated where the tail mass is below ``tol``."""
        if self.kind == "finite_table":
            return self
        top = self.support_bound(tol)
        w = np.asarray(self.pmf(np.arange(top + 1)), dtype=float)
        return OffspringLaw.table(w / w.sum())

    # -- generating function ----------------------------------------------

    def survival_map(self, t):
        """Return 1 - f(1 - t), f the generating function; vectorised in ``t``.

        Evaluated in the 1-t parametrisation so that small survival
        probabilities keep full relative precision.
        """
        t = np.asarray(t, dtype=float)
        if self.kind == "geometric":
            m = self.cached_mean
            return m * t / (1.0 + m * t)
        if self.kind == "poisson":
            return -np.expm1(-self.param * t)
        if self.kind == "point_mass":
            k = int(self.param)
            with np.errstate(divide="ignore"):
                return -np.expm1(k * np.log1p(-t)) if k else np.zeros_like(t)
        with np.errstate(divide="ignore"):  # t = 1 gives log(0) = -inf, which is exact here
            log1m = np.log1p(-np.minimum(t, 1.0))
        out = np.zeros_like(t)
        for y, p in enumerate(self.weights):
            if y and p:
                out = out + p * -np.expm1(y * log1m)
        return out


# -- module-level operations ---------------------------------------------


def mean(law: OffspringLaw) -> float:
    """m(q) = sum_y y q(y)."""
    return law.mean


def eta(law: OffspringLaw) -> float:
    """Normalised second factorial moment sum y(y-1)q(y) / m(q)^2."""
    return law.eta


def zeta(law: OffspringLaw, a: int) -> float:
    return law.zeta(a)


def size_bias(law: OffspringLaw) -> OffspringLaw:
    """The law with weights y q(y) / m(q).

    A point mass maps to itself. Geometric and Poisson laws are returned as
    finite tables truncated where the size-biased tail is below 1e-14.
    """
    m = law.mean
    if not m > 0:
        raise DegenerateMeanError("cannot size-bias a law with zero mean")
    if law.kind == "point_mass":
        return law
    if law.kind == "finite_table":
        w = [y * p / m for y, p in enumerate(law.weights)]
        total = math.fsum(w)
        return OffspringLaw.table([x / total for x in w])
    top = law.support_bound(_TAIL_TOL * 1e-3)
    ys = np.arange(top + 1)
    w = ys * np.asarray(law.pmf(ys)) / m
    return OffspringLaw.table(w / w.sum())


def sample_generation_total(law: OffspringLaw, z: int, rng: np.random.Generator) -> int:
    """Draw the sum of ``z`` i.i.d. offspring counts (the z-fold convolution)."""
    z = int(z)
    if z < 0:
        raise ValueError("population size must be nonnegative")
    if z == 0:
        return 0
    return int(sample_totals(law, np.array([z], dtype=np.int64), rng)[0])


def sample_totals(law: OffspringLaw, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`sample_generation_total` over an array of parent counts."""
    z = np.asarray(z, dtype=np.int64)
    out = np.zeros(z.shape, dtype=np.int64)
    live = z > 0
    if not live.any():
        return out
    zl = z[live]
    _check_room(zl, law.mean)
    if law.kind == "geometric":
        out[live] = rng.negative_binomial(zl.astype(float), law.param)
    elif law.kind == "poisson":
        out[live] = rng.poisson(law.param * zl)
    elif law.kind == "point_mass":
        out[live] = zl * int(law.param)
    else:
        w = np.asarray(law.weights)
        counts = rng.multinomial(zl, w / w.sum())
        out[live] = counts @ np.arange(w.size)
    return out


def _check_room(z: np.ndarray, m: float) -> None:
    # a mean-based headroom check; leaves a wide margin below 2^63
    if z.size and float(z.max()) * max(m, 1.0) > 2.0**61:
        raise PopulationOverflowError(
            f"generation size {int(z.max())} with mean {m:.3g} would overflow int64"
        )


def sample_size_biased(law: OffspringLaw, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` values from :func:`size_bias` of ``law`` (each at least 1)."""
    m = law.mean
    if not m > 0:
        raise DegenerateMeanError("cannot size-bias a law with zero mean")
    if law.kind == "geometric":
        # y s (1-s)^y / m is the law of 1 + NegBin(2, s)
        return 1 + rng.negative_binomial(2, law.param, size)
    if law.kind == "poisson":
        return 1 + rng.poisson(law.param, size)
    if law.kind == "point_mass":
        return np.full(size, int(law.param), dtype=np.int64)
    w = np.asarray(size_bias(law).weights)
    return rng.choice(w.size, size=size, p=w).astype(np.int64)
