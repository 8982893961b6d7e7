"""Random environments: families, criticality regimes and the two sampling measures.

An environment is an i.i.d. sequence of offspring laws Q_1, Q_2, ... with
log-mean increments X_k = log m(Q_k). Two measures are used throughout:

* ``annealed`` -- the original law of Q;
* ``tilted``  -- the law reweighted by e^X / gamma, gamma = E[e^X].

Samplers work on *codes*: for the lognormal-geometric family the code of an
environment step is X itself (the offspring law is geometric with mean e^X);
for a discrete mixture it is the atom index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .offspring import OffspringLaw, size_bias
from .streams import as_stream

#: absolute tolerance for the regime boundaries E[X] = 0 and E[X e^X] = 0
REGIME_TOL = 1e-10

FAMILIES = ("lognormal_geometric", "discrete_mixture")
MEASURES = ("annealed", "tilted")


class Regime(str, Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    WEAKLY_SUBCRITICAL = "weakly_subcritical"
    INTERMEDIATELY_SUBCRITICAL = "intermediately_subcritical"
    STRONGLY_SUBCRITICAL = "strongly_subcritical"


class NonFiniteMomentError(ValueError):
    """E[X] or E[X e^X] is not finite, so the regime is undefined."""


@dataclass(frozen=True)
class EnvironmentSpec:
    family: str
    sigma_sq: float = 0.0
    mu: float = 0.0
    atoms: tuple[tuple[OffspringLaw, float], ...] = ()
    measure: str = "tilted"
    gamma: float = field(init=False, compare=False)
    moments: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown environment family {self.family!r}")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if self.family == "lognormal_geometric":
            if not self.sigma_sq > 0:
                raise ValueError("lognormal variance must be positive")
            g = math.exp(self.mu + self.sigma_sq / 2)
            ex, exex = self.mu, (self.mu + self.sigma_sq) * g
        else:
            if not self.atoms:
                raise ValueError("a discrete mixture needs at least one atom")
            probs = [p for _, p in self.atoms]
            if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
                raise ValueError("mixture probabilities must be nonnegative and sum to 1")
            means = [law.mean for law, _ in self.atoms]
            g = math.fsum(p * m for m, p in zip(means, probs))
            ex = math.fsum(p * _log(m) for m, p in zip(means, probs) if p > 0)
            exex = math.fsum(p * m * math.log(m) for m, p in zip(means, probs) if p > 0 and m > 0)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "moments", {"E_X": ex, "E_XeX": exex})
        if not g > 0:
            raise ValueError("gamma = E[e^X] must be positive")

    # -- descriptive ------------------------------------------------------

    @property
    def oracle_only(self) -> bool:
        """Mixtures have atomic X; they exist for exhaustive-enumeration checks only."""
        return self.family == "discrete_mixture"

    @property
    def classification(self) -> Regime:
        return classify(self)

    @property
    def sigma(self) -> float:
        """Standard deviation of X (identical under both measures for the lognormal family)."""
        if self.family == "lognormal_geometric":
            return math.sqrt(self.sigma_sq)
        x, p = self._atom_arrays("tilted")
        mu = float(np.dot(p, x))
        return math.sqrt(float(np.dot(p, (x - mu) ** 2)))

    def increment_mean(self, measure: str = "tilted") -> float:
        if self.family == "lognormal_geometric":
            return self.mu + (self.sigma_sq if measure == "tilted" else 0.0)
        x, p = self._atom_arrays(measure)
        return float(np.dot(p[p > 0], x[p > 0]))

    def atom_probs(self, measure: str) -> np.ndarray:
        p = np.array([q for _, q in self.atoms], dtype=float)
        if measure == "tilted":
            m = np.array([law.mean for law, _ in self.atoms])
            p = p * m / self.gamma
            p = p / p.sum()
        return p

    def _atom_arrays(self, measure: str):
        x = np.array([_log(law.mean) for law, _ in self.atoms])
        return x, self.atom_probs(measure)

    # -- vectorised per-step quantities -----------------------------------

    def draw_codes(self, measure: str, size, rng: np.random.Generator) -> np.ndarray:
        if self.family == "lognormal_geometric":
            return rng.normal(self.increment_mean(measure), math.sqrt(self.sigma_sq), size)
        p = self.atom_probs(measure)
        if p.size == 1:
            return np.zeros(size, dtype=np.int64)
        return rng.choice(p.size, size=size, p=p)

    def log_means(self, codes) -> np.ndarray:
        if self.family == "lognormal_geometric":
            return np.asarray(codes, dtype=float)
        x, _ = self._atom_arrays("annealed")
        return x[np.asarray(codes, dtype=np.int64)]

    def law(self, code) -> OffspringLaw:
        if self.family == "lognormal_geometric":
            return OffspringLaw.geometric_with_mean(math.exp(float(code)))
        return self.atoms[int(code)][0]

    def laws(self, codes) -> list[OffspringLaw]:
        return [self.law(c) for c in np.asarray(codes).ravel()]

    def etas(self, codes) -> np.ndarray:
        codes = np.asarray(codes)
        if self.family == "lognormal_geometric":
            return np.full(codes.shape, 2.0)
        e = np.array([law.eta if law.mean > 0 else 0.0 for law, _ in self.atoms])
        return e[codes.astype(np.int64)]

    def zetas(self, codes, a: int) -> np.ndarray:
        codes = np.asarray(codes)
        if self.family == "lognormal_geometric":
            m = np.exp(codes.astype(float))
            second = m + 2 * m * m
            return (m / (1 + m)) ** a * (second + 2 * a * m + a * a) / (m * m)
        z = np.array([law.zeta(a) for law, _ in self.atoms])
        return z[codes.astype(np.int64)]

    def sample_totals(self, codes, z, rng: np.random.Generator) -> np.ndarray:
        """Sum of ``z[j]`` i.i.d. draws from the law with code ``codes[j]``."""
        codes = np.asarray(codes)
        z = np.asarray(z, dtype=np.int64)
        out = np.zeros(z.shape, dtype=np.int64)
        live = z > 0
        if not live.any():
            return out
        if self.family == "lognormal_geometric":
            m = np.exp(codes[live].astype(float))
            zl = z[live]
            if float(zl.max()) * max(1.0, float(m.max())) > 2.0**61:
                from .offspring import PopulationOverflowError

                raise PopulationOverflowError("generation size would overflow int64")
            out[live] = rng.negative_binomial(zl.astype(float), 1.0 / (1.0 + m))
            return out
        from .offspring import sample_totals

        for j, (law, _) in enumerate(self.atoms):
            mask = live & (codes == j)
            if mask.any():
                out[mask] = sample_totals(law, z[mask], rng)
        return out

    def sample_spine_offspring(self, codes, rng: np.random.Generator) -> np.ndarray:
        """Offspring counts of spine particles: size-biased draws, always >= 1."""
        codes = np.asarray(codes)
        if self.family == "lognormal_geometric":
            p = 1.0 / (1.0 + np.exp(codes.astype(float)))
            return 1 + rng.negative_binomial(2, p)
        from .offspring import sample_size_biased

        out = np.zeros(codes.shape, dtype=np.int64)
        for j, (law, _) in enumerate(self.atoms):
            mask = codes == j
            if mask.any():
                out[mask] = sample_size_biased(law, int(mask.sum()), rng)
        return out

    def survival_maps(self, codes, t) -> np.ndarray:
        """Vectorised t -> 1 - f(1 - t) for the laws coded by ``codes``."""
        codes = np.asarray(codes)
        t = np.asarray(t, dtype=float)
        if self.family == "lognormal_geometric":
            m = np.exp(codes.astype(float))
            return m * t / (1.0 + m * t)
        out = np.zeros(np.broadcast(codes, t).shape)
        tb = np.broadcast_to(t, out.shape)
        cb = np.broadcast_to(codes, out.shape)
        for j, (law, _) in enumerate(self.atoms):
            mask = cb == j
            if mask.any():
                out[mask] = law.survival_map(tb[mask])
        return out

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        if self.family == "lognormal_geometric":
            params = {"sigma_sq": self.sigma_sq, "mu": self.mu}
        else:
            params = {"atoms": [{"law": law_to_dict(law), "prob": p} for law, p in self.atoms]}
        return {"family": self.family, "parameters": params, "measure": self.measure}

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentSpec":
        family = d["family"]
        params = d.get("parameters", {})
        measure = d.get("measure", "tilted")
        if family == "lognormal_geometric":
            s2 = float(params["sigma_sq"])
            return cls(family, sigma_sq=s2, mu=float(params.get("mu", -s2)), measure=measure)
        if family == "discrete_mixture":
            atoms = tuple((law_from_dict(a["law"]), float(a["prob"])) for a in params["atoms"])
            return cls(family, atoms=atoms, measure=measure)
        raise ValueError(f"unknown environment family {family!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnvironmentSpec":
        return cls.from_dict(json.loads(text))


def _log(m: float) -> float:
    return math.log(m) if m > 0 else -math.inf


def law_to_dict(law: OffspringLaw) -> dict:
    if law.kind == "geometric":
        return {"kind": "geometric", "s": law.param}
    if law.kind == "poisson":
        return {"kind": "poisson", "lambda": law.param}
    if law.kind == "point_mass":
        return {"kind": "point_mass", "k": int(law.param)}
    return {"kind": "finite_table", "weights": list(law.weights)}


def law_from_dict(d: dict) -> OffspringLaw:
    kind = d["kind"]
    if kind == "geometric":
        return OffspringLaw.geometric(d["s"])
    if kind == "poisson":
        return OffspringLaw.poisson(d["lambda"])
    if kind == "point_mass":
        return OffspringLaw.point_mass(d["k"])
    if kind == "finite_table":
        return OffspringLaw.table(d["weights"])
    raise ValueError(f"unknown offspring family {kind!r}")


# -- constructors ----------------------------------------------------------


def lognormal_geometric(sigma_sq: float, mu: float | None = None, measure: str = "tilted") -> EnvironmentSpec:
    """X ~ Normal(mu, sigma_sq) under the annealed measure; offspring geometric with mean e^X."""
    if not sigma_sq > 0:
        raise ValueError("lognormal variance must be positive")
    return EnvironmentSpec(
        "lognormal_geometric", sigma_sq=float(sigma_sq), mu=-float(sigma_sq) if mu is None else float(mu), measure=measure
    )


def calibrate_lognormal(sigma_sq: float) -> EnvironmentSpec:
    """The lognormal-geometric family with mu = -sigma_sq, which makes E[X e^X] = 0.

    E[X e^X] = (mu + sigma^2) exp(mu + sigma^2/2) for X ~ Normal(mu, sigma^2),
    and the tilted increment law is Normal(0, sigma^2).
    """
    return lognormal_geometric(sigma_sq)


def mixture(atoms: Sequence[tuple[OffspringLaw, float]], measure: str = "tilted") -> EnvironmentSpec:
    return EnvironmentSpec("discrete_mixture", atoms=tuple((law, float(p)) for law, p in atoms), measure=measure)


def point_environment(law: OffspringLaw) -> EnvironmentSpec:
    """Deterministic environment Q = law."""
    return mixture([(law, 1.0)])


def calibrate_two_atom(law_a: OffspringLaw, law_b: OffspringLaw) -> EnvironmentSpec:
    """Mixture of two laws with the weight solving E[X e^X] = 0.

    Needs one law with mean above 1 and one with mean below 1.
    """
    xa, xb = math.log(law_a.mean), math.log(law_b.mean)
    if not xa * xb < 0:
        raise ValueError("need one atom with m > 1 and one with m < 1")
    fa, fb = xa * law_a.mean, xb * law_b.mean
    pa = -fb / (fa - fb)
    return mixture([(law_a, pa), (law_b, 1.0 - pa)])


def two_atom_oracle_spec() -> EnvironmentSpec:
    """Intermediately subcritical mixture of two laws supported on {0, 2}."""
    return calibrate_two_atom(OffspringLaw.table({0: 0.25, 2: 0.75}), OffspringLaw.table({0: 0.75, 2: 0.25}))


# -- operations ------------------------------------------------------------


def classify(spec: EnvironmentSpec) -> Regime:
    """Regime from the signs of E[X] and E[X e^X], each with tolerance 1e-10 around zero.

    The strongly subcritical branch is E[X e^X] < 0.
    """
    ex, exex = spec.moments["E_X"], spec.moments["E_XeX"]
    if not (math.isfinite(ex) and math.isfinite(exex)):
        raise NonFiniteMomentError(f"E[X]={ex}, E[Xe^X]={exex}")
    if ex > REGIME_TOL:
        return Regime.SUPERCRITICAL
    if abs(ex) <= REGIME_TOL:
        return Regime.CRITICAL
    if exex > REGIME_TOL:
        return Regime.WEAKLY_SUBCRITICAL
    if exex < -REGIME_TOL:
        return Regime.STRONGLY_SUBCRITICAL
    return Regime.INTERMEDIATELY_SUBCRITICAL


def sample_environment(spec: EnvironmentSpec, measure: str, n: int, rng) -> list[tuple[OffspringLaw, float]]:
    """Draw Q_1..Q_n i.i.d. under ``measure``; returns ``(law, X_k)`` pairs."""
    if n < 1:
        raise ValueError("horizon must be at least 1")
    gen = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()
    codes = spec.draw_codes(measure, n, gen)
    xs = spec.log_means(codes)
    return [(spec.law(c), float(x)) for c, x in zip(codes, xs)]


def log_moment_check_A3(
    spec: EnvironmentSpec, a: int, eps: float, N: int, rng, alpha: float = 2.0
) -> tuple[float, float]:
    """Estimate E_P[(log+ zeta(a))^(alpha+eps)] under the tilted measure.

    Mixtures are summed exactly over their atoms (standard error 0).
    """
    if int(a) != a or a < 1:
        raise ValueError("a must be a positive integer")
    power = alpha + eps
    if spec.family == "discrete_mixture":
        p = spec.atom_probs("tilted")
        z = np.array([law.zeta(a) if law.mean > 0 else 1.0 for law, _ in spec.atoms])
        vals = np.maximum(np.log(np.maximum(z, 1.0)), 0.0) ** power
        return float(np.dot(p, vals)), 0.0
    gen = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()
    codes = spec.draw_codes("tilted", int(N), gen)
    vals = np.log(np.maximum(spec.zetas(codes, a), 1.0)) ** power
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))
