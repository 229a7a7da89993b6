"""Quadrature checks of the slowly-varying integral limits and numeric checks of
the derivative bounds for pgf iterates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import ParameterOutOfRange, QuadratureNonConverged
from .offspring_laws import log_taylor_coefficient_at_complement, make_law, tail
from .series_engine import generation_table, survival_sequence, taylor_complement

L_FAMILIES = {
    "constant": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "log": lambda x: np.log(math.e + np.asarray(x, dtype=float)),
    "log2": lambda x: np.log(math.e + np.asarray(x, dtype=float)) ** 2,
}


def _family(name):
    try:
        return L_FAMILIES[name]
    except KeyError:
        raise ParameterOutOfRange(f"unknown slowly varying family {name!r}; use {sorted(L_FAMILIES)}") from None


def _quad(fn, a, b, points=None, rel=1e-11):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if points is not None and math.isfinite(b):
                val, err = integrate.quad(fn, a, b, points=points, limit=500, epsabs=0.0, epsrel=rel)
            else:
                val, err = integrate.quad(fn, a, b, limit=500, epsabs=0.0, epsrel=rel)
        except integrate.IntegrationWarning as exc:
            raise QuadratureNonConverged(str(exc)) from exc
    if not math.isfinite(val) or err > 1e-6 * abs(val):
        raise QuadratureNonConverged(f"quadrature error estimate {err:.3g} for value {val:.6g}")
    return val


def gamma_scaling_ratio(theta: float, x: float, family: str) -> float:
    """int_0^inf y^(theta-1) l(xy)/l(x) e^(-y) dy / Gamma(theta)."""
    if theta <= 0 or x <= 0:
        raise ParameterOutOfRange("theta and x must be positive")
    l = _family(family)
    lx = float(l(x))
    log_g = math.lgamma(theta)

    def integrand(y):
        return math.exp((theta - 1) * math.log(y) - y - log_g) * float(l(x * y)) / lx if y > 0 else 0.0

    # mass of the Gamma(theta) density lies around theta; split there and far out
    pts = sorted({min(1.0, theta), theta, theta + 10 * math.sqrt(theta) + 10})
    total = 0.0
    edges = [0.0, *pts]
    for a, b in zip(edges[:-1], edges[1:]):
        total += _quad(integrand, a, b)
    total += _quad(integrand, edges[-1], math.inf)
    return total


def gamma_tail_ratio(theta: float, s: float, family: str) -> float:
    """(1-s)^theta int_theta^inf y^(theta-1) l(y) e^(-y(1-s)) dy / (Gamma(theta) l(theta/(1-s)))."""
    if theta <= 0 or not 0.0 <= s < 1.0:
        raise ParameterOutOfRange("need theta > 0 and s in [0, 1)")
    l = _family(family)
    u = 1.0 - s
    norm = float(l(theta / u))
    log_g = math.lgamma(theta)

    # substitute z = y u so the Gamma(theta) bulk sits near z = theta
    def integrand(z):
        return math.exp((theta - 1) * math.log(z) - z - log_g) * float(l(z / u)) / norm

    lo = theta * u
    sd = math.sqrt(theta)
    pts = sorted({p for p in (theta - 8 * sd, theta, theta + 8 * sd) if p > lo})
    edges = [lo, *pts]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += _quad(integrand, a, b)
    total += _quad(integrand, edges[-1], math.inf)
    return total


@dataclass(frozen=True)
class IntegralLimitRow:
    kind: str  # "scaling" (x grows) or "tail" (theta grows)
    family: str
    theta: float
    point: float  # x for the first limit, s for the second
    ratio: float


def verify_integral_lemmas(theta_grid, l_family, s_grid, x_grid=(1e2, 1e4, 1e6), tail_theta_grid=None):
    """Ratios for every (theta, x, family) and (theta, s, family) on the grids."""
    families = [l_family] if isinstance(l_family, str) else list(l_family)
    tail_thetas = theta_grid if tail_theta_grid is None else tail_theta_grid
    rows = []
    for fam in families:
        for th in theta_grid:
            for x in x_grid:
                rows.append(IntegralLimitRow("scaling", fam, float(th), float(x), gamma_scaling_ratio(th, x, fam)))
        for th in tail_thetas:
            for s in s_grid:
                rows.append(IntegralLimitRow("tail", fam, float(th), float(s), gamma_tail_ratio(th, s, fam)))
    return rows


# ---------------------------------------------------------------------------
# derivative bounds
# ---------------------------------------------------------------------------

def l1_closed_form(law, z: float) -> float:
    """L1(z) = z^-(1+alpha) P(xi >= 1/z), continued to real 1/z by the Gamma form of the tail."""
    law = make_law(law)
    j = 1.0 / z
    a, c = law.alpha, law.c
    log_tail = math.log(c * a) - math.lgamma(1.0 - a) + math.lgamma(j - 1.0 - a) - math.lgamma(j)
    return math.exp(log_tail + (1.0 + a) * math.log(j))


@dataclass(frozen=True)
class DerivativeBoundRow:
    """Both sides kept as logs; at tiny 1 - s they exceed the double range."""

    k: int
    s: float
    log_lhs: float
    log_rhs: float

    @property
    def lhs(self) -> float:
        return _exp_or_inf(self.log_lhs)

    @property
    def rhs(self) -> float:
        return _exp_or_inf(self.log_rhs)

    @property
    def margin(self) -> float:
        """rhs / lhs; the bound holds when this is at least 1."""
        return math.exp(self.log_rhs - self.log_lhs)

    @property
    def holds(self) -> bool:
        return self.log_lhs <= self.log_rhs


def _exp_or_inf(x: float) -> float:
    return math.inf if x > _LOG_MAX else math.exp(x)


_LOG_MAX = math.log(np.finfo(float).max)


def log_derivative_bound(law, k: int, s: float) -> float:
    """log of k! P(xi >= k) + 2 s^-k k Gamma(k-1-alpha) (1-s)^-(k-1-alpha) L1((1-s)/k).

    In this bound p_k stands for the tail P(xi >= k).
    """
    law = make_law(law)
    a = law.alpha
    u = 1.0 - s
    log_first = math.lgamma(k + 1.0) + math.log(tail(law, k))
    log_second = (math.log(2.0) - k * math.log(s) + math.log(k) + math.lgamma(k - 1.0 - a)
                  - (k - 1.0 - a) * math.log(u) + math.log(l1_closed_form(law, u / k)))
    return float(np.logaddexp(log_first, log_second))


def derivative_bound(law, k: int, s: float) -> float:
    return _exp_or_inf(log_derivative_bound(law, k, s))


def derivative_bound_check(law, k_grid, u_grid, delta: float = 0.1) -> list[DerivativeBoundRow]:
    """Compare f^(k)(s) with the bound on every grid point where k(1-s) <= delta.

    ``u_grid`` lists values of 1 - s.
    """
    law = make_law(law)
    if law.family != "stable_frac" or law.alpha >= 1.0:
        raise ParameterOutOfRange("the derivative bound is checked for stable_frac laws with alpha < 1")
    rows = []
    for k in k_grid:
        if k < 2:
            raise ParameterOutOfRange("k must be >= 2")
        for u in u_grid:
            if k * u > delta:
                continue
            s = 1.0 - u
            log_lhs = math.lgamma(k + 1.0) + log_taylor_coefficient_at_complement(law, k, u)
            rows.append(DerivativeBoundRow(int(k), s, log_lhs, log_derivative_bound(law, k, s)))
    return rows


@dataclass(frozen=True)
class IterateDerivativeRow:
    n: int
    J: int
    x: float
    observed: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.observed / self.predicted


def iterate_derivative_rows(law, n_grid, J_grid, x: float, phi_rule, mu_n: int | None = None) -> list[IterateDerivativeRow]:
    """f_m^{(J)}(f_r(0)) against (-1)^J r Delta(n) Gamma(J+alpha) / ((log f_r(0))^J Gamma(alpha)).

    r = ceil(x phi(n)), m = n - r, Delta(n) = P(Z(n)=J0) / mu_J0 with mu_J0
    estimated at generation ``mu_n`` (default: the largest n).
    """
    law = make_law(law)
    ns = sorted(int(n) for n in n_grid)
    j_max = max(J_grid)
    j0 = law.j0
    mu_n = ns[-1] if mu_n is None else int(mu_n)
    big = generation_table(law, mu_n, j0)
    mu_j0 = law.alpha * mu_n / big.survival * big.coefficients[j0]
    a = law.alpha
    rows = []
    for n in ns:
        phi = phi_rule(n)
        r = math.ceil(x * phi)
        m = n - r
        q = survival_sequence(law, max(r, n))
        p_j0 = generation_table(law, n, j0).coefficients[j0]
        delta = p_j0 / mu_j0
        coef = taylor_complement(law, m, float(q[r]), j_max)
        log_f = math.log1p(-float(q[r]))
        for J in J_grid:
            obs = -coef[J] * math.factorial(J)
            pred = (-1) ** J * r * delta / log_f**J * math.exp(gammaln(J + a) - gammaln(a))
            rows.append(IterateDerivativeRow(n, int(J), float(x), float(obs), float(pred)))
    return rows
