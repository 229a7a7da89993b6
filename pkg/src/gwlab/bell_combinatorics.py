"""Partial Bell polynomials, Stirling numbers of the second kind and the
Faà di Bruno recursion for pgf iterates.

Floating-point tables are stored normalized, ``beta[J, k] = B_{J,k} / J!`` with
inputs ``a_r = x_r / r!``, because the raw values overflow long before the
sizes used here. In that scaling the convolution recurrence reads

    beta[J, k] = (1/J) * sum_r r a_r beta[J - r, k - 1].

Integer and Fraction inputs use the unnormalized recurrence in exact arithmetic.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .errors import ParameterOutOfRange, StirlingRangeError
from .offspring_laws import make_law, pmf, taylor_coefficient_at_complement
from .series_engine import survival_sequence

STIRLING_JMAX = 300
ENUMERATION_JMAX = 12


# ---------------------------------------------------------------------------
# Stirling numbers
# ---------------------------------------------------------------------------

def stirling2_explicit(J: int, k: int) -> int:
    """S(J, k) = (1/k!) sum_i (-1)^(k-i) C(k, i) i^J."""
    total = sum((-1) ** (k - i) * math.comb(k, i) * i**J for i in range(k + 1))
    q, r = divmod(total, math.factorial(k))
    assert r == 0
    return q


@lru_cache(maxsize=None)
def _stirling_rows(jmax: int) -> tuple[tuple[int, ...], ...]:
    rows = [(1,)]
    for J in range(1, jmax + 1):
        prev = rows[-1]
        row = [0] * (J + 1)
        for k in range(1, J + 1):
            left = prev[k - 1]
            right = prev[k] if k < J else 0
            row[k] = left + k * right
        rows.append(tuple(row))
    return tuple(rows)


def stirling2_triangle(J: int, k: int) -> int:
    """S(J, k) from S(J, k) = S(J-1, k-1) + k S(J-1, k)."""
    return _stirling_rows(STIRLING_JMAX)[J][k]


def stirling2(J: int, k: int, jmax: int = STIRLING_JMAX) -> int:
    """Stirling number of the second kind, cross-checked by two formulas."""
    if J > jmax or J > STIRLING_JMAX:
        raise StirlingRangeError(f"J={J} exceeds the configured limit {min(jmax, STIRLING_JMAX)}")
    if not 1 <= k <= J:
        raise ParameterOutOfRange(f"need 1 <= k <= J, got J={J}, k={k}")
    a = stirling2_triangle(J, k)
    b = stirling2_explicit(J, k)
    if a != b:
        raise ArithmeticError(f"Stirling formulas disagree at ({J}, {k})")
    return a


# ---------------------------------------------------------------------------
# Bell tables
# ---------------------------------------------------------------------------

def _is_exact(values) -> bool:
    return all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in values)


def _partitions(n: int, k: int, largest: int | None = None):
    """Partitions of n into exactly k parts, parts nonincreasing."""
    if largest is None:
        largest = n
    if k == 0:
        if n == 0:
            yield ()
        return
    for first in range(min(n - (k - 1), largest), 0, -1):
        if first * k < n:
            break
        for rest in _partitions(n - first, k - 1, first):
            yield (first, *rest)


def bell_by_enumeration(J: int, k: int, inputs):
    """B_{J,k} summed directly over multiplicity vectors (i_1, i_2, ...) with
    sum i_r = k and sum r i_r = J."""
    exact = _is_exact(inputs)
    total = Fraction(0) if exact else 0.0
    for parts in _partitions(J, k):
        counts: dict[int, int] = {}
        for p in parts:
            counts[p] = counts.get(p, 0) + 1
        # J! / prod i_r! (r!)^i_r
        term = Fraction(math.factorial(J), 1)
        for r, i_r in counts.items():
            term /= math.factorial(i_r) * math.factorial(r) ** i_r
        prod = Fraction(1) if exact else 1.0
        for r, i_r in counts.items():
            x = inputs[r - 1]
            prod *= (Fraction(x) if exact else float(x)) ** i_r
        total += (term if exact else float(term)) * prod
    return total


@dataclass(frozen=True)
class BellTable:
    """B_{J,k}(x_1, ...) for 1 <= k <= J <= Jmax.

    ``normalized[J, k] = B_{J,k} / J!``; exact tables also keep integer or
    Fraction values in ``exact``.
    """

    inputs: tuple
    jmax: int
    normalized: np.ndarray
    exact: tuple | None = None

    def value(self, J: int, k: int):
        if not 0 <= k <= J <= self.jmax:
            return 0
        if self.exact is not None:
            return self.exact[J][k]
        return float(self.normalized[J, k] * math.factorial(J))

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["J", "k", "value"])
        for J in range(1, self.jmax + 1):
            for k in range(1, J + 1):
                v = self.value(J, k)
                w.writerow([J, k, f"{float(v):.17g}"])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def _normalized_table(a: np.ndarray, jmax: int, kmax: int | None = None) -> np.ndarray:
    """beta[J, k] for inputs a_r = x_r / r! (a[0] unused)."""
    kmax = jmax if kmax is None else kmax
    beta = np.zeros((jmax + 1, kmax + 1))
    beta[0, 0] = 1.0
    ra = np.arange(jmax + 1) * a[: jmax + 1]
    ra[0] = 0.0
    inv_j = np.zeros(jmax + 1)
    inv_j[1:] = 1.0 / np.arange(1, jmax + 1)
    for k in range(1, kmax + 1):
        beta[:, k] = np.convolve(ra, beta[:, k - 1])[: jmax + 1] * inv_j
    return beta


def bell_table(inputs, jmax: int, verify: bool = True) -> BellTable:
    """Bell table from the convolution recurrence
    B_{J,k} = sum_r C(J-1, r-1) x_r B_{J-r, k-1}.

    For ``jmax <= 12`` and ``verify`` the table is also compared entry by entry
    with the partition-sum definition.
    """
    if jmax < 1:
        raise ParameterOutOfRange("jmax must be >= 1")
    xs = list(inputs)[:jmax]
    if len(xs) < jmax:
        raise ParameterOutOfRange(f"need {jmax} inputs, got {len(xs)}")
    exact_rows = None
    if _is_exact(xs):
        B = [[Fraction(0)] * (jmax + 1) for _ in range(jmax + 1)]
        B[0][0] = Fraction(1)
        for J in range(1, jmax + 1):
            for k in range(1, J + 1):
                B[J][k] = sum(
                    math.comb(J - 1, r - 1) * Fraction(xs[r - 1]) * B[J - r][k - 1]
                    for r in range(1, J - k + 2)
                )
        exact_rows = tuple(
            tuple(int(v) if v.denominator == 1 else v for v in row) for row in B
        )
        norm = np.array(
            [[float(B[J][k] / math.factorial(J)) for k in range(jmax + 1)] for J in range(jmax + 1)]
        )
    else:
        a = np.zeros(jmax + 1)
        for r in range(1, jmax + 1):
            a[r] = float(xs[r - 1]) / math.factorial(r) if r <= 170 else float(xs[r - 1]) * math.exp(-math.lgamma(r + 1))
        norm = _normalized_table(a, jmax)
    table = BellTable(tuple(xs), jmax, norm, exact_rows)
    if verify and jmax <= ENUMERATION_JMAX:
        for J in range(1, jmax + 1):
            for k in range(1, J + 1):
                ref = bell_by_enumeration(J, k, xs)
                got = table.value(J, k)
                if exact_rows is not None:
                    ok = got == ref
                else:
                    ok = abs(got - ref) <= 1e-10 * max(abs(ref), 1e-300)
                if not ok:
                    raise ArithmeticError(f"Bell recurrence disagrees with enumeration at ({J}, {k})")
    return table


def generating_identity_coefficients(inputs, k: int, jmax: int) -> np.ndarray:
    """Coefficients of (1/k!)(sum_j x_j s^j / j!)^k up to s^jmax, by repeated series products."""
    a = np.zeros(jmax + 1)
    for r in range(1, jmax + 1):
        a[r] = float(inputs[r - 1]) / math.factorial(r)
    out = np.zeros(jmax + 1)
    out[0] = 1.0
    for _ in range(k):
        out = np.convolve(out, a)[: jmax + 1]
    return out / math.factorial(k)


# ---------------------------------------------------------------------------
# weighted Bell sums
# ---------------------------------------------------------------------------

def log_bell_weighted_sum_mu(mu, k: int, T: int) -> float:
    """log of sum_{J=k}^{T} B_{J,k}/J! for inputs x_r = r! mu_r, given mu_1..mu_T.

    The sum equals (1/k!) times the total of the first T coefficients of
    (sum_r mu_r s^r)^k. Inputs are rescaled to unit sum before powering so that
    large k cannot overflow.
    """
    if not 1 <= k <= T:
        raise ParameterOutOfRange(f"need 1 <= k <= T, got k={k}, T={T}")
    m = np.zeros(T + 1)
    vals = np.asarray(mu, dtype=float)[:T]
    if len(vals) < T:
        raise ParameterOutOfRange(f"need {T} mu values, got {len(vals)}")
    m[1:] = vals
    scale = m.sum()
    if scale <= 0:
        return -math.inf
    b = m / scale
    acc = np.zeros(T + 1)
    acc[0] = 1.0
    for _ in range(k):
        acc = np.convolve(acc, b)[: T + 1]
    s = math.fsum(acc)
    if s <= 0:
        return -math.inf
    return k * math.log(scale) + math.log(s) - math.lgamma(k + 1)


def bell_weighted_sum_mu(mu, k: int, T: int) -> float:
    return math.exp(log_bell_weighted_sum_mu(mu, k, T))


def bell_weighted_sum(mu_inputs, k: int, T: int) -> float:
    """sum_{J=k}^{T} B_{J,k}/J! with Bell inputs ``mu_inputs = (1! mu_1, 2! mu_2, ...)``."""
    xs = np.asarray(mu_inputs, dtype=float)[:T]
    r = np.arange(1, len(xs) + 1)
    mu = xs * np.exp(-gammaln(r + 1))
    return bell_weighted_sum_mu(mu, k, T)


def log_bell_sum_prediction(alpha: float, c: float, k: int, T: float) -> float:
    """log of (1/(k! Gamma(alpha k + 1))) (T^alpha / (alpha c))^k."""
    return k * (alpha * math.log(T) - math.log(alpha * c)) - math.lgamma(k + 1) - math.lgamma(alpha * k + 1)


def bell_sum_prediction(alpha: float, c: float, k: int, T: float) -> float:
    return math.exp(log_bell_sum_prediction(alpha, c, k, T))


@dataclass(frozen=True)
class BellBoundDiagnostic:
    k_values: np.ndarray
    T_values: np.ndarray
    log_ratio: np.ndarray  # [iT, ik]: log(sum / prediction)

    @property
    def sup_ratio(self) -> float:
        return float(np.exp(np.nanmax(self.log_ratio)))

    @property
    def per_k_exponent(self) -> np.ndarray:
        """max over T of log(ratio)/k; a bounded value is consistent with C e^{eps k}."""
        return np.nanmax(self.log_ratio, axis=0) / self.k_values


def bell_bound_diagnostic(mu, alpha: float, c: float, k_values, T_values) -> BellBoundDiagnostic:
    """Ratio of weighted Bell sums to the fixed-k Tauberian prediction over a (T, k) grid."""
    ks = np.asarray(sorted(k_values), dtype=int)
    Ts = np.asarray(sorted(T_values), dtype=int)
    out = np.full((len(Ts), len(ks)), np.nan)
    for iT, T in enumerate(Ts):
        for ik, k in enumerate(ks):
            if k <= T:
                out[iT, ik] = log_bell_weighted_sum_mu(mu, int(k), int(T)) - log_bell_sum_prediction(alpha, c, int(k), T)
    return BellBoundDiagnostic(ks, Ts, out)


# ---------------------------------------------------------------------------
# Faà di Bruno
# ---------------------------------------------------------------------------

def faa_di_bruno_coefficients(law, n: int, J: int) -> np.ndarray:
    """f_n^{(j)}(0)/j! for j = 0..J via f_{k+1}^{(j)} = sum_kappa f^{(kappa)}(f_k(0)) B_{j,kappa}(f_k', f_k'', ...).

    In normalized form the Bell factor kappa! beta[j, kappa] multiplies the
    Taylor coefficient f^{(kappa)}(f_k(0))/kappa!, both of moderate size.
    """
    law = make_law(law)
    if n < 0 or J < 1:
        raise ParameterOutOfRange("need n >= 0 and J >= 1")
    q = survival_sequence(law, n)
    a = np.zeros(J + 1)
    a[1] = 1.0  # f_0(s) = s
    kappa = np.arange(J + 1)
    log_fact = gammaln(kappa + 1)
    for step in range(n):
        u = float(q[step])
        fcoef = np.array([taylor_coefficient_at_complement(law, kk, u) if kk >= 1 else 0.0 for kk in range(J + 1)])
        beta = _normalized_table(a, J)
        scaled = beta * np.exp(log_fact)[None, :]  # kappa! beta[j, kappa]
        new = scaled[:, 1:] @ fcoef[1:]
        new[0] = 0.0
        a = new
    out = a.copy()
    out[0] = 1.0 - float(q[n])
    return out


def faa_di_bruno_check(law, n: int, J: int) -> np.ndarray:
    """Derivatives f_n^{(j)}(0), j = 0..J, from the Faà di Bruno recursion."""
    coef = faa_di_bruno_coefficients(law, n, J)
    fact = np.exp(gammaln(np.arange(J + 1) + 1))
    out = coef * fact
    out[0] = coef[0]
    return out


def j0_chain(law, n_max: int) -> np.ndarray:
    """P(Z(n)=J0) = p_{J0} prod_{i=1}^{n-1} f'(f_i(0)) for n = 1..n_max (index 0 unused)."""
    law = make_law(law)
    q = survival_sequence(law, n_max)
    fprime = np.array([taylor_coefficient_at_complement(law, 1, float(q[i])) for i in range(1, n_max)])
    out = np.zeros(n_max + 1)
    out[1:] = pmf(law, law.j0) * np.concatenate([[1.0], np.cumprod(fprime)])
    return out
