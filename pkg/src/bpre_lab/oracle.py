"""Exact reference laws for tiny instances, by exhaustive enumeration.

Everything here uses :class:`fractions.Fraction` arithmetic. Floating-point
inputs (table weights, mixture probabilities) are converted exactly, so the
results are the exact laws of the model as represented in binary floating
point. Nothing in this module consumes randomness.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .environment import EnvironmentSpec
from .offspring import OffspringLaw

MAX_BPRE_N = 4
MAX_WALK_N = 12
#: upper bound on enumerated (environment, history) states
MAX_STATES = 5_000_000


class StateSpaceTooLargeError(ValueError):
    def __init__(self, bound: int, limit: int = MAX_STATES):
        self.bound = bound
        super().__init__(f"enumeration would visit up to {bound} states (limit {limit})")


@dataclass(frozen=True)
class ExactLaw:
    """An exact law: value -> probability, plus the conditioning event and its probability."""

    atoms: dict
    event: str
    event_probability: Fraction

    def __post_init__(self) -> None:
        if self.atoms and abs(float(sum(self.atoms.values())) - 1.0) > 1e-12:
            raise ValueError("exact law does not sum to 1")

    def as_float(self) -> dict:
        return {k: float(v) for k, v in sorted(self.atoms.items())}

    def to_json(self) -> str:
        return json.dumps(
            {
                "event": self.event,
                "event_probability": float(self.event_probability),
                "event_probability_exact": str(self.event_probability),
                "atoms": {str(k): float(v) for k, v in sorted(self.atoms.items())},
                "atoms_exact": {str(k): str(v) for k, v in sorted(self.atoms.items())},
            },
            indent=2,
            sort_keys=True,
        )


def _law_key(law: OffspringLaw) -> tuple:
    if law.kind == "finite_table":
        return tuple(law.weights)
    if law.kind == "point_mass":
        w = [0.0] * (int(law.param) + 1)
        w[-1] = 1.0
        return tuple(w)
    raise ValueError(f"enumeration needs finite supports, got {law.kind}")


@lru_cache(maxsize=None)
def convolution_power(weights: tuple, z: int) -> tuple[tuple[int, Fraction], ...]:
    """Exact law of the sum of z i.i.d. draws from the table ``weights``."""
    if z == 0:
        return ((0, Fraction(1)),)
    if z == 1:
        return tuple((y, Fraction(p)) for y, p in enumerate(weights) if p > 0)
    half = dict(convolution_power(weights, z // 2))
    rest = dict(convolution_power(weights, z - z // 2))
    out: dict[int, Fraction] = {}
    for a, pa in half.items():
        for b, pb in rest.items():
            out[a + b] = out.get(a + b, Fraction(0)) + pa * pb
    return tuple(sorted(out.items()))


def _tau(sums: Sequence[float]) -> int:
    best, arg = sums[0], 0
    for k, v in enumerate(sums):
        if v < best:
            best, arg = v, k
    return arg


# functionals: f(history Z_0..Z_n, environment atom indices, log-means) -> value
FUNCTIONALS: dict[str, Callable] = {
    "Z1": lambda z, env, x: z[1],
    "Zn": lambda z, env, x: z[-1],
}


def _z_tau_r(r: int) -> Callable:
    def f(z, env, x):
        sums = [0.0]
        for v in x[:r]:
            sums.append(sums[-1] + v)
        return z[_tau(sums)]

    return f


def _atoms(spec: EnvironmentSpec):
    if spec.family != "discrete_mixture":
        raise ValueError("exact enumeration needs a discrete_mixture environment")
    return [(law, Fraction(p)) for law, p in spec.atoms if p > 0]


def enumerate_bpre(
    spec: EnvironmentSpec, n: int, functional="Z1", event: str = "survival", r: int | None = None
) -> ExactLaw:
    """Exact law of ``functional`` under the annealed measure, given Z_n > 0 (or unconditionally).

    ``functional`` is ``'Z1'``, ``'Zn'``, ``'Z_tau_r'`` (with ``r``) or a callable
    ``f(history, atom_indices, log_means)``. ``event`` is ``'survival'`` or ``'none'``.
    """
    if not 1 <= n <= MAX_BPRE_N:
        raise ValueError(f"enumeration supports 1 <= n <= {MAX_BPRE_N}")
    atoms = _atoms(spec)
    if callable(functional):
        f = functional
    elif functional == "Z_tau_r":
        f = _z_tau_r(r if r is not None else max(1, math.isqrt(n - 1) + 1))
    else:
        f = FUNCTIONALS[functional]
    if event not in ("survival", "none"):
        raise ValueError(f"unknown event {event!r}")
    keys = [_law_key(law) for law, _ in atoms]
    top = max(len(k) - 1 for k in keys)
    bound, pop = 1, 1
    for _ in range(n):
        pop *= max(top, 1)
        bound *= len(atoms) * (pop + 1)
    if bound > MAX_STATES:
        raise StateSpaceTooLargeError(bound)
    xs = [math.log(law.mean) if law.mean > 0 else -math.inf for law, _ in atoms]

    joint: dict = {}
    p_event = Fraction(0)
    for env in itertools.product(range(len(atoms)), repeat=n):
        p_env = Fraction(1)
        for j in env:
            p_env *= atoms[j][1]
        x = [xs[j] for j in env]
        hist: dict[tuple[int, ...], Fraction] = {(1,): Fraction(1)}
        for j in env:
            nxt: dict[tuple[int, ...], Fraction] = {}
            for h, p in hist.items():
                for y, q in convolution_power(keys[j], h[-1]):
                    key = h + (y,)
                    nxt[key] = nxt.get(key, Fraction(0)) + p * q
            hist = nxt
        for h, p in hist.items():
            if event == "survival" and h[-1] == 0:
                continue
            w = p_env * p
            p_event += w
            val = f(h, env, x)
            joint[val] = joint.get(val, Fraction(0)) + w
    if p_event == 0:
        raise ZeroDivisionError("the conditioning event has probability zero")
    atoms_out = {k: v / p_event for k, v in joint.items() if v}
    label = f"Z_{n} > 0" if event == "survival" else "none"
    return ExactLaw(atoms_out, label, p_event)


def enumerate_walk(increments, n: int, statistic: str = "tau") -> ExactLaw:
    """Exact law of tau_n, 1{M_n < 0} or 1{L_n >= 0} for a walk with finitely many increment values.

    ``increments`` is a discrete_mixture spec (atoms X = log m) or a sequence of
    ``(value, probability)`` pairs. Rational values (ints, Fractions) are
    compared exactly; float values are summed through their composition
    counts, so equal partial sums compare equal.
    """
    if not 1 <= n <= MAX_WALK_N:
        raise ValueError(f"enumeration supports 1 <= n <= {MAX_WALK_N}")
    if statistic not in ("tau", "M_neg", "L_nonneg"):
        raise ValueError(f"unknown statistic {statistic!r}")
    if isinstance(increments, EnvironmentSpec):
        pairs = [(math.log(law.mean), p) for law, p in _atoms(increments)]
    else:
        pairs = [(v, Fraction(p)) for v, p in increments]
    values = [v for v, _ in pairs]
    probs = [Fraction(p) for _, p in pairs]
    A = len(pairs)
    if A**n > MAX_STATES:
        raise StateSpaceTooLargeError(A**n)
    seqs = np.array(list(itertools.product(range(A), repeat=n)), dtype=np.int64).reshape(-1, n)
    if all(isinstance(v, (int, Fraction)) for v in values):
        fr = [Fraction(v) for v in values]
        den = math.lcm(*(f.denominator for f in fr))
        vals = np.array([int(f * den) for f in fr], dtype=np.int64)
        sums = np.cumsum(vals[seqs], axis=1)
    else:
        onehot = np.eye(A, dtype=np.int64)[seqs]  # (S, n, A)
        counts = np.cumsum(onehot, axis=1)
        sums = counts @ np.asarray(values, dtype=float)
    sums = np.concatenate([np.zeros((sums.shape[0], 1), dtype=sums.dtype), sums], axis=1)
    if statistic == "tau":
        stat = np.argmin(sums, axis=1)
    elif statistic == "M_neg":
        stat = (sums[:, 1:].max(axis=1) < 0).astype(np.int64)
    else:
        stat = (sums[:, 1:].min(axis=1) >= 0).astype(np.int64)
    comp = np.stack([(seqs == a).sum(axis=1) for a in range(A)], axis=1)
    out: dict[int, Fraction] = {}
    groups: dict[tuple, dict[int, int]] = {}
    for c, s in zip(map(tuple, comp), stat):
        g = groups.setdefault(c, {})
        g[int(s)] = g.get(int(s), 0) + 1
    for c, g in groups.items():
        pc = Fraction(1)
        for a, k in enumerate(c):
            pc *= probs[a] ** int(k)
        for s, cnt in g.items():
            out[s] = out.get(s, Fraction(0)) + cnt * pc
    label = {"tau": f"law of tau_{n}", "M_neg": f"1{{M_{n} < 0}}", "L_nonneg": f"1{{L_{n} >= 0}}"}[statistic]
    return ExactLaw(dict(sorted(out.items())), label, Fraction(1))


def sparre_andersen_tau(n: int) -> list[Fraction]:
    """P(tau_n = k) = C(2k,k) C(2(n-k),n-k) / 4^n, exact for symmetric continuous increments."""
    return [Fraction(math.comb(2 * k, k) * math.comb(2 * (n - k), n - k), 4**n) for k in range(n + 1)]
