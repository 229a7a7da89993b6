"""Critical offspring distributions with exact pmf, tail, pgf and derivatives.

Three families are provided:

``stable_frac``
    ``f(s) = s + c (1 - s)**(1 + alpha)`` with ``alpha`` in (0, 1] and
    ``0 < c <= 1/(1 + alpha)``. The slowly varying factor is the constant ``c``.
``geometric``
    ``f(s) = 1/(2 - s)``; finite variance 2, iterates known in closed form.
``custom``
    A finite probability vector with mean exactly one and a declared
    stable index.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

import numpy as np
from scipy.special import gamma as gamma_fn, poch

from . import _kernels
from .errors import DomainError, NotCritical, ParameterOutOfRange

SAMPLER_TABLE = 64

FAMILIES = ("stable_frac", "geometric", "custom")


@dataclass(frozen=True)
class OffspringLaw:
    family: str
    alpha: float
    sigma2: float
    j0: int
    c: float | None = None
    probabilities: tuple[float, ...] | None = None
    exact: Mapping[str, Fraction] = field(default_factory=dict, compare=False, repr=False)

    @property
    def kind(self) -> int:
        if self.family == "stable_frac":
            return _kernels.CUSTOM if self.alpha == 1.0 else _kernels.STABLE
        if self.family == "geometric":
            return _kernels.GEOMETRIC
        return _kernels.CUSTOM

    @property
    def finite_variance(self) -> bool:
        return math.isfinite(self.sigma2)

    @property
    def p0(self) -> float:
        return pmf(self, 0)

    def kernel_args(self):
        """(kind, c, beta, probs) tuple consumed by the compiled kernels."""
        kind = self.kind
        if kind == _kernels.STABLE:
            return kind, float(self.c), 1.0 + self.alpha, np.zeros(1)
        if kind == _kernels.GEOMETRIC:
            return kind, 0.0, 0.0, np.zeros(1)
        return kind, 0.0, 0.0, np.asarray(_finite_probs(self), dtype=float)

    def to_dict(self) -> dict[str, Any]:
        return law_to_dict(self)


def _as_number(value, name):
    """Accept floats, ints, Fractions, "p/q" strings or [p, q] pairs."""
    if isinstance(value, Fraction):
        return float(value), value
    if isinstance(value, bool):
        raise ParameterOutOfRange(f"{name} must be numeric")
    if isinstance(value, int):
        return float(value), Fraction(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        fr = Fraction(int(value[0]), int(value[1]))
        return float(fr), fr
    if isinstance(value, str):
        fr = Fraction(value)
        return float(fr), fr
    return float(value), None


def stable_frac(alpha, c) -> OffspringLaw:
    a, a_exact = _as_number(alpha, "alpha")
    cc, c_exact = _as_number(c, "c")
    if not 0.0 < a <= 1.0:
        raise ParameterOutOfRange(f"alpha={a} violates 0 < alpha <= 1")
    bound = 1.0 / (1.0 + a)
    if a_exact is not None and c_exact is not None:
        too_big = c_exact > 1 / (1 + a_exact)
    else:
        too_big = cc > bound * (1.0 + 1e-15)
    if not cc > 0.0 or too_big:
        raise ParameterOutOfRange(f"c={cc} violates 0 < c <= 1/(1+alpha) = {bound}")
    p1 = 1.0 - cc * (1.0 + a)
    if a_exact is not None and c_exact is not None:
        j0 = 1 if c_exact * (1 + a_exact) != 1 else 2
    else:
        j0 = 1 if p1 > 1e-15 else 2
    sigma2 = 2.0 * cc if a == 1.0 else math.inf
    exact = {}
    if a_exact is not None:
        exact["alpha"] = a_exact
    if c_exact is not None:
        exact["c"] = c_exact
    return OffspringLaw("stable_frac", a, sigma2, j0, c=cc, exact=exact)


def geometric() -> OffspringLaw:
    return OffspringLaw("geometric", 1.0, 2.0, 1)


def custom_pmf(probabilities, alpha=1.0) -> OffspringLaw:
    exact_probs = None
    if all(isinstance(p, (int, Fraction)) and not isinstance(p, bool) for p in probabilities):
        exact_probs = [Fraction(p) for p in probabilities]
    probs = tuple(float(p) for p in probabilities)
    if len(probs) < 2:
        raise ParameterOutOfRange("custom pmf needs at least two entries")
    if any(p < 0 for p in probs):
        raise ParameterOutOfRange("custom pmf has a negative entry")
    if abs(math.fsum(probs) - 1.0) > 1e-12:
        raise ParameterOutOfRange(f"custom pmf sums to {math.fsum(probs)}, not 1")
    mean = math.fsum(j * p for j, p in enumerate(probs))
    if abs(mean - 1.0) > 1e-10:
        raise NotCritical(f"custom pmf has mean {mean}")
    a, a_exact = _as_number(alpha, "alpha")
    if not 0.0 < a <= 1.0:
        raise ParameterOutOfRange(f"alpha={a} violates 0 < alpha <= 1")
    j0 = next((j for j in range(1, len(probs)) if probs[j] > 0), None)
    if j0 is None:
        raise ParameterOutOfRange("custom pmf puts no mass on j >= 1")
    sigma2 = math.fsum(j * (j - 1) * p for j, p in enumerate(probs))
    exact = {"alpha": a_exact} if a_exact is not None else {}
    if exact_probs is not None:
        exact.update({f"p{j}": p for j, p in enumerate(exact_probs)})
    return OffspringLaw("custom", a, sigma2, j0, probabilities=probs, exact=exact)


def make_law(spec: Mapping[str, Any] | OffspringLaw) -> OffspringLaw:
    """Build a validated law from a family descriptor such as
    ``{"family": "stable_frac", "alpha": 0.5, "c": [2, 3]}``."""
    if isinstance(spec, OffspringLaw):
        return spec
    spec = dict(spec)
    family = spec.pop("family", None)
    if family in ("stable_frac", "StableFrac"):
        return stable_frac(spec["alpha"], spec["c"])
    if family in ("geometric", "Geometric"):
        return geometric()
    if family in ("custom", "CustomPmf", "custom_pmf"):
        probs = spec.get("probabilities")
        if probs is None:
            raise ParameterOutOfRange("custom law needs 'probabilities'")
        probs = [_as_number(p, "p")[1] or _as_number(p, "p")[0] for p in probs]
        return custom_pmf(probs, spec.get("tail_exponent", spec.get("alpha", 1.0)))
    raise ParameterOutOfRange(f"unknown family {family!r}; expected one of {FAMILIES}")


def _encode(value: float, exact: Fraction | None):
    if exact is not None:
        return [exact.numerator, exact.denominator]
    return value


def law_to_dict(law: OffspringLaw) -> dict[str, Any]:
    if law.family == "stable_frac":
        return {
            "family": "stable_frac",
            "alpha": _encode(law.alpha, law.exact.get("alpha")),
            "c": _encode(law.c, law.exact.get("c")),
        }
    if law.family == "geometric":
        return {"family": "geometric"}
    return {
        "family": "custom",
        "probabilities": [_encode(p, law.exact.get(f"p{j}")) for j, p in enumerate(law.probabilities)],
        "tail_exponent": _encode(law.alpha, law.exact.get("alpha")),
    }


def law_to_json(law: OffspringLaw) -> str:
    return json.dumps(law_to_dict(law))


def law_from_json(text: str) -> OffspringLaw:
    return make_law(json.loads(text))


# ---------------------------------------------------------------------------
# pmf / tail
# ---------------------------------------------------------------------------

def _finite_probs(law: OffspringLaw) -> tuple[float, ...]:
    if law.family == "custom":
        return law.probabilities
    # stable_frac with alpha = 1 has support {0, 1, 2}
    c = law.c
    return (c, 1.0 - 2.0 * c, c)


def _stable_tail(law: OffspringLaw, j):
    """P(xi >= j) for j >= 2: c alpha Gamma(j-1-alpha) / (Gamma(1-alpha) Gamma(j))."""
    a, c = law.alpha, law.c
    j = np.asarray(j, dtype=float)
    return c * a / (gamma_fn(1.0 - a) * poch(j - 1.0 - a, 1.0 + a))


def tail(law: OffspringLaw, j: int) -> float:
    """P(xi >= j)."""
    if j <= 0:
        return 1.0
    if j == 1:
        return 1.0 - pmf(law, 0)
    if law.family == "geometric":
        return 2.0 ** (-j)
    if law.kind == _kernels.CUSTOM:
        probs = _finite_probs(law)
        return math.fsum(probs[j:]) if j < len(probs) else 0.0
    return float(_stable_tail(law, j))


def pmf(law: OffspringLaw, j: int) -> float:
    """P(xi = j)."""
    if j < 0:
        return 0.0
    if law.family == "geometric":
        return 2.0 ** (-(j + 1))
    if law.kind == _kernels.CUSTOM:
        probs = _finite_probs(law)
        return probs[j] if j < len(probs) else 0.0
    c, a = law.c, law.alpha
    if j == 0:
        return c
    if j == 1:
        return 0.0 if law.j0 > 1 else 1.0 - c * (1.0 + a)
    # p_j = (1 + alpha)/j * P(xi >= j)
    return (1.0 + a) / j * tail(law, j)


def tail_array(law: OffspringLaw, jmax: int) -> np.ndarray:
    """P(xi >= j) for j = 0..jmax."""
    out = np.empty(jmax + 1)
    out[0] = 1.0
    if jmax >= 1:
        out[1] = 1.0 - pmf(law, 0)
    if jmax < 2:
        return out
    js = np.arange(2, jmax + 1)
    if law.family == "geometric":
        out[2:] = 2.0 ** (-js.astype(float))
    elif law.kind == _kernels.CUSTOM:
        probs = np.asarray(_finite_probs(law))
        rev = np.cumsum(probs[::-1])[::-1]
        padded = np.zeros(jmax + 1)
        m = min(len(rev), jmax + 1)
        padded[:m] = rev[:m]
        out[2:] = padded[2:]
    else:
        out[2:] = _stable_tail(law, js)
    return out


def pmf_array(law: OffspringLaw, jmax: int) -> np.ndarray:
    """P(xi = j) for j = 0..jmax."""
    out = np.empty(jmax + 1)
    out[0] = pmf(law, 0)
    if jmax >= 1:
        out[1] = pmf(law, 1)
    if jmax < 2:
        return out
    js = np.arange(2, jmax + 1)
    if law.family == "geometric":
        out[2:] = 2.0 ** (-(js + 1.0))
    elif law.kind == _kernels.CUSTOM:
        probs = np.asarray(_finite_probs(law))
        padded = np.zeros(jmax + 1)
        m = min(len(probs), jmax + 1)
        padded[:m] = probs[:m]
        out[2:] = padded[2:]
    else:
        out[2:] = (1.0 + law.alpha) / js * _stable_tail(law, js)
    return out


# ---------------------------------------------------------------------------
# pgf and derivatives
# ---------------------------------------------------------------------------

def pgf_eval(law: OffspringLaw, s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s={s} outside [0, 1]")
    if s == 1.0:
        return 1.0
    return 1.0 - pgf_complement(law, 1.0 - s)


def pgf_complement(law: OffspringLaw, u: float) -> float:
    """1 - f(1 - u), accurate in relative terms for small u."""
    kind, c, beta, probs = law.kernel_args()
    return float(_kernels.survival_step(kind, float(u), c, beta, probs))


def pgf_derivative(law: OffspringLaw, k: int, s: float) -> float:
    """k-th derivative of the pgf at s."""
    if k < 1:
        raise DomainError("derivative order must be >= 1")
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s={s} outside [0, 1]")
    return derivative_at_complement(law, k, 1.0 - s)


def derivative_at_complement(law: OffspringLaw, k: int, u: float) -> float:
    """f^(k)(1 - u); taking u directly avoids rounding 1 - s when s is near 1."""
    return math.factorial(k) * taylor_coefficient_at_complement(law, k, u)


def taylor_coefficient_at_complement(law: OffspringLaw, k: int, u: float) -> float:
    """f^(k)(1 - u) / k!."""
    if law.family == "geometric":
        return 1.0 / (1.0 + u) ** (k + 1)
    if law.kind == _kernels.CUSTOM:
        probs = _finite_probs(law)
        s = 1.0 - u
        return math.fsum(math.comb(j, k) * p * s ** (j - k) for j, p in enumerate(probs) if j >= k)
    a, c = law.alpha, law.c
    if k == 1:
        return 1.0 - c * (1.0 + a) * u ** a
    if u == 0.0:
        raise DomainError(f"f^({k}) diverges at s = 1 for alpha < 1")
    # |binom(1 + alpha, k)| = (1+alpha) alpha (1-alpha)_(k-2) / k!
    lc = log_taylor_coefficient_at_complement(law, k, u)
    return math.inf if lc > _LOG_MAX else math.exp(lc)


_LOG_MAX = math.log(np.finfo(float).max)


def log_taylor_coefficient_at_complement(law: OffspringLaw, k: int, u: float) -> float:
    """log(f^(k)(1 - u) / k!) for a stable_frac law with alpha < 1 and k >= 2.

    Stays finite where the coefficient itself overflows (tiny u, large k).
    """
    a, c = law.alpha, law.c
    if law.family != "stable_frac" or a >= 1.0 or k < 2:
        raise ParameterOutOfRange("log coefficient needs stable_frac with alpha < 1 and k >= 2")
    if not 0.0 < u <= 1.0:
        raise DomainError(f"u={u} outside (0, 1]")
    # |binom(1 + alpha, k)| = (1+alpha) alpha (1-alpha)_(k-2) / k!
    log_mag = (math.log((1.0 + a) * a) + math.lgamma(k - 1.0 - a) - math.lgamma(1.0 - a)
               - math.lgamma(k + 1.0))
    return math.log(c) + log_mag + (1.0 + a - k) * math.log(u)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerTables:
    tails: np.ndarray
    kind: int
    alpha: float
    log_const: float


def sampler_tables(law: OffspringLaw) -> SamplerTables:
    """Inverse-CDF table for j <= 64; closed-form tail bisection beyond."""
    kind = law.kind
    if kind == _kernels.CUSTOM:
        probs = _finite_probs(law)
        tails = tail_array(law, len(probs))
        tails[-1] = 0.0
        return SamplerTables(tails, kind, law.alpha, 0.0)
    tails = tail_array(law, SAMPLER_TABLE + 1)
    log_const = 0.0
    if kind == _kernels.STABLE:
        log_const = math.log(law.c * law.alpha / gamma_fn(1.0 - law.alpha))
    return SamplerTables(tails, kind, law.alpha, log_const)


def sample_offspring(law: OffspringLaw, rng: np.random.Generator, size=None):
    """Draw offspring counts using ``rng`` (a seeded numpy Generator)."""
    tabs = sampler_tables(law)
    n = 1 if size is None else int(np.prod(size))
    vs = 1.0 - rng.random(n)  # (0, 1]
    draws = _kernels.draws_from_vs(vs, tabs.tails, tabs.kind, tabs.alpha, tabs.log_const)
    if size is None:
        return int(draws[0])
    return draws.reshape(size)
