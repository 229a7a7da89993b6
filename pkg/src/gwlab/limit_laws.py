"""Limit objects: the Yaglom law M and its convolution powers, the small-deviation
prediction, the limiting reduced-process pmf and the MRCA limit distribution.

M has no closed form for alpha < 1. Its Laplace-Stieltjes transform is

    Phi(lam) = 1 - (1 + lam**-alpha)**(-1/alpha),

so M^{*j}(x) is the inverse Laplace transform of Phi(lam)**j / lam. The
primary inversion is Gaver-Stehfest in multiprecision arithmetic; a fixed
Talbot contour (``mpmath.invertlaplace``) runs alongside as an independent
check and any disagreement beyond the tolerance raises ``InversionUnstable``.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath as mp
from scipy.special import gammaln

from .errors import DomainError, InversionUnstable, ParameterOutOfRange, RegimeWarning
from .offspring_laws import make_law
from .series_engine import survival_probability

STEHFEST_TERMS = 36
DISAGREEMENT_TOL = 1e-4
REGIME_LIMIT = 0.1


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ParameterOutOfRange(f"alpha={alpha} outside (0, 1]")


def yaglom_transform(alpha: float, j: int, lam: float) -> float:
    """Phi(lam)**j evaluated through logs so both ends stay accurate."""
    _check_alpha(alpha)
    if not lam > 0.0:
        raise DomainError(f"lambda={lam} must be positive")
    if j < 1:
        raise ParameterOutOfRange("j must be >= 1")
    # log(1 + lam^-alpha) without forming lam^-alpha when it would overflow
    la = -alpha * math.log(lam)
    log1p_term = la + math.log1p(math.exp(-la)) if la > 30 else math.log1p(math.exp(la))
    phi = -math.expm1(-log1p_term / alpha)
    if phi <= 0.0:
        return 0.0
    return math.exp(j * math.log(phi))


def _mp_transform(alpha, j, with_lambda: bool):
    a = mp.mpf(alpha)

    def F(lam):
        phi = 1 - (1 + lam ** (-a)) ** (-1 / a)
        val = phi**j
        return val / lam if with_lambda else val

    return F


@lru_cache(maxsize=None)
def stehfest_weights(N: int, dps: int):
    if N % 2:
        raise ParameterOutOfRange("Stehfest term count must be even")
    half = N // 2
    with mp.workdps(dps):
        V = []
        for k in range(1, N + 1):
            s = mp.mpf(0)
            for i in range((k + 1) // 2, min(k, half) + 1):
                s += (mp.mpf(i) ** half * mp.factorial(2 * i)) / (
                    mp.factorial(half - i) * mp.factorial(i) * mp.factorial(i - 1)
                    * mp.factorial(k - i) * mp.factorial(2 * i - k)
                )
            V.append((-1) ** (k + half) * s)
        return tuple(V)


def stehfest_invert(F, x, N: int = STEHFEST_TERMS, dps: int | None = None):
    """Gaver-Stehfest approximation of the inverse Laplace transform of F at x."""
    dps = int(2.2 * N) + 10 if dps is None else dps
    V = stehfest_weights(N, dps)
    with mp.workdps(dps):
        x = mp.mpf(x)
        ln2 = mp.log(2)
        total = mp.fsum(V[k - 1] * F(k * ln2 / x) for k in range(1, N + 1))
        return total * ln2 / x


def talbot_invert(F, x, dps: int = 30):
    with mp.workdps(dps):
        return mp.invertlaplace(F, mp.mpf(x), method="talbot")


@dataclass
class YaglomLaw:
    """Evaluator of M^{*j}(x) with a result cache.

    ``crosscheck`` runs the Talbot contour next to Gaver-Stehfest for every new
    point; set it to False for bulk evaluation once a grid has been validated.
    """

    alpha: float
    terms: int = STEHFEST_TERMS
    dps: int | None = None
    crosscheck: bool = True
    tol: float = DISAGREEMENT_TOL
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        _check_alpha(self.alpha)

    def evaluate(self, j: int, x: float) -> tuple[float, float, bool]:
        """(value, method disagreement, saturated) for M^{*j}(x)."""
        if j < 1:
            raise ParameterOutOfRange("j must be >= 1")
        if math.isnan(x) or x < 0.0:
            raise DomainError(f"x={x} must be positive")
        if x == 0.0:
            return 0.0, 0.0, True
        if math.isinf(x):
            return 1.0, 0.0, True
        key = (j, x)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        F = _mp_transform(self.alpha, j, with_lambda=True)
        value = float(stehfest_invert(F, x, self.terms, self.dps))
        gap = math.nan
        if self.crosscheck:
            other = float(talbot_invert(F, x))
            gap = abs(value - other)
            if gap > self.tol:
                raise InversionUnstable(
                    f"Stehfest {value:.8g} vs Talbot {other:.8g} for alpha={self.alpha}, j={j}, x={x}"
                )
        # rounding can leave the inversion a hair outside [0, 1]
        out = (min(max(value, 0.0), 1.0), gap, False)
        self._cache[key] = out
        return out

    def cdf(self, j: int, x: float) -> float:
        return self.evaluate(j, x)[0]

    def density(self, j: int, x: float) -> float:
        """d/dx M^{*j}(x), the inverse transform of Phi**j."""
        if not x > 0.0:
            raise DomainError("x must be positive")
        F = _mp_transform(self.alpha, j, with_lambda=False)
        return float(stehfest_invert(F, x, self.terms, self.dps))


@lru_cache(maxsize=None)
def yaglom_law(alpha: float) -> YaglomLaw:
    """Shared evaluator per alpha."""
    return YaglomLaw(float(alpha))


def yaglom_cdf(alpha: float, j: int, x: float) -> float:
    if not x > 0.0:
        raise DomainError(f"x={x} must be positive")
    return yaglom_law(alpha).cdf(j, x)


def erlang_cdf(j: int, x: float) -> float:
    """M^{*j}(x) for alpha = 1, where M is the unit exponential law."""
    return float(mp.gammainc(j, 0, x, regularized=True))


def smallx_asymptotic(alpha: float, j: int, x: float) -> float:
    """Leading behaviour x^{alpha j} / (alpha^j Gamma(1 + alpha j)) of M^{*j}(x) as x -> 0."""
    _check_alpha(alpha)
    if not x > 0.0:
        raise DomainError("x must be positive")
    aj = alpha * j
    return math.exp(aj * math.log(x) - j * math.log(alpha) - math.lgamma(1.0 + aj))


def thm1_prediction(law, n: int, phi_n: int) -> float:
    """(Q(n) / (alpha n)) * phi(n) / Gamma(1 + alpha)."""
    law = make_law(law)
    if not 1 <= phi_n <= n:
        raise ParameterOutOfRange(f"need 1 <= phi_n <= n, got {phi_n}, {n}")
    if phi_n / n > REGIME_LIMIT:
        warnings.warn(f"phi(n)/n = {phi_n / n:.3g} exceeds {REGIME_LIMIT}", RegimeWarning, stacklevel=2)
    q = survival_probability(law, n)
    return q / (law.alpha * n) * phi_n / math.gamma(1.0 + law.alpha)


def _scaled_argument(alpha: float, x: float) -> float:
    """x^{-1/alpha}, saturating to 0 or inf instead of raising."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            return math.exp(-math.log(x) / alpha)
        except OverflowError:
            return math.inf


def thm2_limit_pmf(alpha: float, j: int, x: float, law: YaglomLaw | None = None) -> float:
    """alpha Gamma(j + alpha) / j! * x * M^{*j}(x^{-1/alpha})."""
    _check_alpha(alpha)
    if not x > 0.0:
        raise DomainError("x must be positive")
    ev = law if law is not None else yaglom_law(alpha)
    m = ev.cdf(j, _scaled_argument(alpha, x))
    return alpha * math.exp(gammaln(j + alpha) - gammaln(j + 1)) * x * m


def mrca_limit_cdf(alpha: float, x: float, law: YaglomLaw | None = None) -> float:
    """alpha Gamma(1 + alpha) x M(x^{-1/alpha})."""
    return thm2_limit_pmf(alpha, 1, x, law)


def laplace_stieltjes(alpha: float, j: int, lam: float, law: YaglomLaw | None = None) -> float:
    """int e^{-lam x} dM^{*j}(x) = int_0^inf e^{-t} M^{*j}(t / lam) dt, by quadrature
    of the inverted distribution function."""
    ev = law if law is not None else YaglomLaw(alpha, crosscheck=False)
    with mp.workdps(20):
        val = mp.quad(lambda t: mp.exp(-t) * ev.cdf(j, float(t) / lam) if t > 0 else mp.mpf(0), [0, 1, 10, mp.inf])
    return float(val)


def convolution_check(alpha: float, x: float, law: YaglomLaw | None = None) -> tuple[float, float]:
    """(M^{*2}(x) by inversion, int_0^x M(x - y) m(y) dy by quadrature)."""
    ev = law if law is not None else YaglomLaw(alpha, crosscheck=False)
    with mp.workdps(20):
        conv = mp.quad(lambda y: ev.density(1, float(y)) * ev.cdf(1, float(x - y)) if 0 < y < x else mp.mpf(0), [0, x / 2, x])
    return ev.cdf(2, x), float(conv)


def limit_curve_csv(rows, dest=None) -> str:
    """rows of (alpha, j, x, value, disagreement) -> CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "j", "x", "value", "method_disagreement"])
    for a, j, x, v, d in rows:
        w.writerow([f"{a:.17g}", j, f"{x:.17g}", f"{v:.17g}", f"{d:.3g}"])
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text
