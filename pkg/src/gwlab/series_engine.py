"""Exact finite-n laws of Z(n) by iterating the offspring pgf as a truncated series.

Every iteration works on the complement ``U = 1 - f_k`` so that survival
probabilities keep full relative precision even when they are 1e-12 small.
Iterating ``f_{k+1} = f(f_k)`` with the outer map in closed form costs one
fractional power, i.e. O(T^2), per generation. The update is lower
triangular in the coefficient index, so coefficients of index <= T never see
anything that was truncated away.

Set ``GWLAB_PRECISION=extended`` to run the series arithmetic in numpy
``longdouble`` instead of the compiled double-precision kernels (much slower).
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, ParameterOutOfRange, TruncationOverflow
from .offspring_laws import OffspringLaw, make_law, pmf_array, taylor_coefficient_at_complement

#: largest truncation order accepted before raising TruncationOverflow
SERIES_BUDGET = 1 << 15


def precision_mode() -> str:
    mode = os.environ.get("GWLAB_PRECISION", "double").strip().lower()
    if mode in ("", "double", "float64", "64"):
        return "double"
    if mode in ("extended", "longdouble", "80", "128"):
        return "extended"
    raise ParameterOutOfRange(f"GWLAB_PRECISION={mode!r}; use 'double' or 'extended'")


def _check_budget(T: int, budget: int | None) -> None:
    limit = SERIES_BUDGET if budget is None else budget
    if T > limit:
        raise TruncationOverflow(f"truncation order {T} exceeds the series budget {limit}")


# ---------------------------------------------------------------------------
# power series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerSeries:
    """Truncated series sum_k a_k (s - s0)^k, k = 0..T."""

    coefficients: np.ndarray
    expansion_point: float = 0.0

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    def __mul__(self, other: "PowerSeries") -> "PowerSeries":
        if other.expansion_point != self.expansion_point:
            raise DomainError("series expanded about different points")
        T = min(self.order, other.order)
        prod = np.convolve(self.coefficients[: T + 1], other.coefficients[: T + 1])[: T + 1]
        return PowerSeries(prod, self.expansion_point)

    def power(self, beta: float) -> "PowerSeries":
        """Series of self**beta via v' u = beta u' v; needs a positive constant term."""
        u = np.asarray(self.coefficients, dtype=float)
        if u[0] <= 0.0:
            raise DomainError("fractional power needs a positive constant term")
        T = self.order
        v = np.empty(T + 1)
        v[0] = u[0] ** beta
        k_idx = np.arange(T + 1)
        for k in range(1, T + 1):
            i = k_idx[1 : k + 1]
            v[k] = np.dot((beta * i - (k - i)) * u[1 : k + 1], v[k - 1 :: -1][:k]) / (k * u[0])
        return PowerSeries(v, self.expansion_point)

    def __call__(self, s: float) -> float:
        return float(np.polynomial.polynomial.polyval(s - self.expansion_point, self.coefficients))

    def derivatives(self) -> np.ndarray:
        """Derivatives k! a_k at the expansion point."""
        fact = np.array([math.factorial(k) for k in range(self.order + 1)], dtype=float)
        return self.coefficients * fact


# ---------------------------------------------------------------------------
# iteration drivers
# ---------------------------------------------------------------------------

def _extended_step(law: OffspringLaw, u: np.ndarray) -> np.ndarray:
    kind, c, beta, probs = law.kernel_args()
    T = len(u) - 1
    one = np.longdouble(1)
    if kind == _kernels.STABLE:
        v = np.empty_like(u)
        v[0] = u[0] ** np.longdouble(beta)
        idx = np.arange(T + 1, dtype=np.longdouble)
        for k in range(1, T + 1):
            i = idx[1 : k + 1]
            v[k] = np.sum((np.longdouble(beta) * i - (k - i)) * u[1 : k + 1] * v[k - 1 :: -1][:k]) / (k * u[0])
        return u - np.longdouble(c) * v
    if kind == _kernels.GEOMETRIC:
        v = np.empty_like(u)
        d0 = one + u[0]
        v[0] = u[0] / d0
        for k in range(1, T + 1):
            v[k] = (u[k] - np.sum(u[1 : k + 1] * v[k - 1 :: -1][:k])) / d0
        return v
    p = np.asarray(probs, dtype=np.longdouble)
    s = -u.copy()
    s[0] = one - u[0]
    g = np.zeros_like(u)
    g[0] = p[-1]
    for deg in range(len(p) - 2, -1, -1):
        g = np.array([np.sum(g[: k + 1][::-1] * s[: k + 1]) for k in range(T + 1)], dtype=np.longdouble)
        g[0] += p[deg]
    out = -g
    # constant term from the cancellation-free scalar map
    with np.errstate(divide="ignore"):
        lg = np.log1p(-u[0])
    out[0] = -np.sum(p[1:] * np.expm1(np.arange(1, len(p)) * lg))
    return out


def iterate_complement(law: OffspringLaw, u0, nsteps: int, snaps=None) -> np.ndarray:
    """Apply ``U <- 1 - f(1 - U)`` to the series ``u0`` and return the rows at ``snaps``.

    ``snaps`` defaults to ``[nsteps]``. The result has shape ``(len(snaps), len(u0))``.
    """
    snaps = np.array([nsteps] if snaps is None else sorted(snaps), dtype=np.int64)
    if len(snaps) and (snaps[0] < 0 or snaps[-1] > nsteps):
        raise ParameterOutOfRange("snapshot steps must lie in [0, nsteps]")
    if precision_mode() == "extended":
        u = np.asarray(u0, dtype=np.longdouble).copy()
        out = np.empty((len(snaps), len(u)), dtype=np.longdouble)
        idx = 0
        while idx < len(snaps) and snaps[idx] == 0:
            out[idx] = u
            idx += 1
        for step in range(1, nsteps + 1):
            u = _extended_step(law, u)
            while idx < len(snaps) and snaps[idx] == step:
                out[idx] = u
                idx += 1
        return out
    kind, c, beta, probs = law.kernel_args()
    u = np.array(u0, dtype=np.float64)
    return _kernels.iterate_series(kind, u, int(nsteps), snaps, c, beta, probs)


# ---------------------------------------------------------------------------
# survival and extinction
# ---------------------------------------------------------------------------

def survival_sequence(law: OffspringLaw, n_max: int) -> np.ndarray:
    """Q(k) = 1 - f_k(0) for k = 0..n_max, iterated directly on Q."""
    law = make_law(law)
    if n_max < 0:
        raise ParameterOutOfRange("n_max must be nonnegative")
    kind, c, beta, probs = law.kernel_args()
    return _kernels.survival_sequence(kind, int(n_max), c, beta, probs)


def survival_probability(law: OffspringLaw, n: int) -> float:
    return float(survival_sequence(law, n)[-1])


def extinction_sequence(law: OffspringLaw, n_max: int) -> np.ndarray:
    """f_k(0) for k = 0..n_max as ``np.longdouble``.

    Computed as 1 - Q(k) where Q is iterated without cancellation, so the
    small gap to 1 is resolved far below double-precision spacing.
    """
    if n_max < 1:
        raise ParameterOutOfRange("n_max must be >= 1")
    q = survival_sequence(law, n_max).astype(np.longdouble)
    return np.longdouble(1) - q


# ---------------------------------------------------------------------------
# generation tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationTable:
    n: int
    law: OffspringLaw
    coefficients: np.ndarray
    survival: float
    tail_mass: float = field(default=0.0)

    @property
    def T(self) -> int:
        return len(self.coefficients) - 1

    @property
    def extinction_prob(self) -> float:
        return float(self.coefficients[0])

    def q_ratio(self, J: int) -> float:
        """q_n(J) = P(Z(n)=J) / P(Z(n)=j0)."""
        return float(self.coefficients[J] / self.coefficients[self.law.j0])

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "j", "prob", "tail_mass"])
        tm = f"{self.tail_mass:.17g}"
        for j, p in enumerate(self.coefficients):
            w.writerow([self.n, j, f"{float(p):.17g}", tm])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def _table_from_row(law, n, row) -> GenerationTable:
    q = float(row[0])
    probs = -np.asarray(row, dtype=float)
    probs[0] = 1.0 - q
    probs[1:] = np.maximum(probs[1:], 0.0)
    # P(Z(n)=j) = 0 exactly for 1 <= j < j0 once n >= 1; clear rounding residue
    if n >= 1:
        probs[1 : law.j0] = 0.0
    tail_mass = max(math.fsum([q, *(-probs[1:])]), 0.0)
    return GenerationTable(int(n), law, probs, q, tail_mass)


def _identity_complement(T: int) -> np.ndarray:
    u = np.zeros(T + 1)
    u[0] = 1.0
    if T >= 1:
        u[1] = -1.0
    return u


def generation_tables(law, schedule, T: int, budget: int | None = None) -> list[GenerationTable]:
    """Tables of P(Z(n)=j), j <= T, for each n in ``schedule`` from one iteration pass."""
    law = make_law(law)
    if T < 1:
        raise ParameterOutOfRange("T must be >= 1")
    _check_budget(T, budget)
    sched = sorted(int(n) for n in schedule)
    if not sched or sched[0] < 0:
        raise ParameterOutOfRange("schedule must hold nonnegative generations")
    rows = iterate_complement(law, _identity_complement(T), sched[-1], sched)
    return [_table_from_row(law, n, row) for n, row in zip(sched, rows)]


def generation_table(law, n: int, T: int, budget: int | None = None) -> GenerationTable:
    return generation_tables(law, [n], T, budget)[0]


def taylor_complement(law, m: int, u0: float, J: int) -> np.ndarray:
    """Coefficients of ``1 - f_m(1 - u0 + t)`` in powers of t up to t^J.

    Passing the expansion point as its distance ``u0`` from 1 keeps survival
    scale quantities exact.
    """
    law = make_law(law)
    _check_budget(J, None)
    start = np.zeros(J + 1)
    start[0] = u0
    if J >= 1:
        start[1] = -1.0
    return iterate_complement(law, start, int(m))[0].astype(float)


def taylor_at_point(law, m: int, s0: float, J: int) -> np.ndarray:
    """f_m^{(k)}(s0) for k = 0..J."""
    if not 0.0 <= s0 < 1.0:
        raise DomainError(f"s0={s0} outside [0, 1)")
    if J < 1 or m < 0:
        raise ParameterOutOfRange("need J >= 1 and m >= 0")
    u = taylor_complement(law, m, 1.0 - s0, J)
    out = -u * np.array([math.factorial(k) for k in range(J + 1)], dtype=float)
    out[0] = 1.0 - u[0]
    return out


# ---------------------------------------------------------------------------
# small deviations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmallDeviation:
    T: int
    probability: float

    def __iter__(self):
        return iter((self.T, self.probability))


def threshold(law, phi_n: int) -> int:
    """T = floor(1 / (1 - f_phi(0)))."""
    return int(math.floor(1.0 / survival_probability(law, phi_n)))


def small_deviation_prob(law, n: int, phi_n: int, budget: int | None = None) -> SmallDeviation:
    """P(H(n)) = P(0 < Z(n) <= T) with T = floor(1/Q(phi_n))."""
    law = make_law(law)
    if not 1 <= phi_n <= n:
        raise ParameterOutOfRange(f"need 1 <= phi_n <= n, got phi_n={phi_n}, n={n}")
    T = threshold(law, phi_n)
    tab = generation_table(law, n, T, budget)
    return SmallDeviation(T, math.fsum(tab.coefficients[1:]))


# ---------------------------------------------------------------------------
# Slack's local limits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MuEstimate:
    schedule: tuple[int, ...]
    values: np.ndarray  # rows follow schedule, column j = mu_hat_j, column 0 unused (0)
    estimate: np.ndarray
    rel_change: np.ndarray
    threshold: float

    @property
    def non_converged(self) -> np.ndarray:
        """Per-j flag: relative change over the last doubling above threshold."""
        return self.rel_change > self.threshold

    @property
    def converged(self) -> bool:
        return not bool(np.any(self.non_converged))


def mu_from_table(table: GenerationTable) -> np.ndarray:
    """mu_hat_j(n) = alpha n P(Z(n)=j) / Q(n); index 0 is set to 0."""
    mu = table.law.alpha * table.n / table.survival * table.coefficients
    mu = np.array(mu, dtype=float)
    mu[0] = 0.0
    return mu


def mu_sequence(law, j_max: int, n_schedule, threshold: float = 0.01) -> MuEstimate:
    law = make_law(law)
    sched = sorted(set(int(n) for n in n_schedule))
    if len(sched) < 2 or sched[0] < 1 or sched[-1] < 16 * sched[0]:
        raise ParameterOutOfRange("n_schedule must be increasing and span a factor of at least 16")
    half = sched[-1] // 2
    all_n = sorted(set(sched) | {half})
    tabs = {t.n: t for t in generation_tables(law, all_n, j_max)}
    values = np.array([mu_from_table(tabs[n]) for n in sched])
    last = values[-1]
    prev = mu_from_table(tabs[half])
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(last > 0, np.abs(last - prev) / last, 0.0)
    rel[0] = 0.0
    return MuEstimate(tuple(sched), values, last.copy(), rel, threshold)


def transition_probabilities(law, l_max: int, j_max: int) -> np.ndarray:
    """P(l, j) = P(Z(1)=j | Z(0)=l) for l = 0..l_max, j = 0..j_max (l-fold pmf convolutions)."""
    law = make_law(law)
    p = pmf_array(law, j_max)
    out = np.zeros((l_max + 1, j_max + 1))
    row = np.zeros(j_max + 1)
    row[0] = 1.0
    out[0] = row
    for l in range(1, l_max + 1):
        row = np.convolve(row, p)[: j_max + 1]
        out[l] = row
    return out


@dataclass(frozen=True)
class StationarityCheck:
    n: int
    j: np.ndarray
    lhs: np.ndarray
    mu: np.ndarray
    residual: np.ndarray
    p0_sum_truncated: float
    p0_sum_corrected: float


def stationarity_check(law, n: int, T: int, j_max: int = 10) -> StationarityCheck:
    """Residuals of sum_l mu_l P(l, j) = mu_j for j = 1..j_max at generation n.

    The p0 identity sum_l mu_l p0^l = 1 is reported twice: truncated at T, and
    with the neglected l > T part restored from the exact relation
    sum_l P(Z(n)=l) p0^l = Q(n) - Q(n+1).
    """
    law = make_law(law)
    if j_max > T:
        raise ParameterOutOfRange("need j_max <= T")
    tab = generation_table(law, n, T)
    mu = mu_from_table(tab)
    P = transition_probabilities(law, T, j_max)
    lhs = mu[1:] @ P[1:, 1:]
    js = np.arange(1, j_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.where(mu[js] > 0, np.abs(lhs - mu[js]) / mu[js], np.abs(lhs))
    p0 = law.p0
    powers = p0 ** np.arange(T + 1)
    trunc = math.fsum(mu[1:] * powers[1:])
    q = survival_sequence(law, n + 1)
    full_raw = q[n] - q[n + 1]
    kept_raw = math.fsum(tab.coefficients[1:] * powers[1:])
    corrected = trunc + law.alpha * n / q[n] * (full_raw - kept_raw)
    return StationarityCheck(n, js, lhs, mu[js], resid, trunc, corrected)


# ---------------------------------------------------------------------------
# reduced process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedProfile:
    """Exact law of Z(m, n) with its joint behaviour on H(n) = {0 < Z(n) <= T}."""

    n: int
    m: int
    T: int
    pmf_reduced: np.ndarray  # index j = 0..j_max
    cond_H_given_j: np.ndarray
    prob_H: float
    error_bound: np.ndarray

    @property
    def cond_j_given_H(self) -> np.ndarray:
        return self.pmf_reduced * self.cond_H_given_j / self.prob_H


@dataclass(frozen=True)
class ReducedJoint:
    pmf_reduced: float
    cond_H_given_j: float
    cond_j_given_H: float
    error_bound: float

    def __iter__(self):
        return iter((self.pmf_reduced, self.cond_H_given_j, self.cond_j_given_H))


def reduced_profile(law, n: int, m: int, T: int, j_max: int | None = None,
                    prob_H: float | None = None) -> ReducedProfile:
    """P(Z(m,n)=j), P(H(n) | Z(m,n)=j) and P(Z(m,n)=j | H(n)) for j <= j_max.

    P(Z(m,n)=j) is the t^j coefficient of f_m(1 - Q(r)(1 - t)) with r = n - m,
    computed by iterating the rescaled series directly. Given Z(m,n)=j, Z(n) is a
    sum of j independent copies of Z(r) conditioned to be positive; its
    distribution function at T is exact from series truncated at T.
    """
    law = make_law(law)
    if not 0 <= m < n:
        raise ParameterOutOfRange(f"need 0 <= m < n, got m={m}, n={n}")
    if T < 1:
        raise ParameterOutOfRange("T must be >= 1")
    j_max = T if j_max is None else int(j_max)
    if j_max < 1:
        raise ParameterOutOfRange("j_max must be >= 1")
    _check_budget(max(T, j_max), None)
    r = n - m
    need = sorted({r, n}) if prob_H is None else [r]
    tabs = {t.n: t for t in generation_tables(law, need, T)}
    tr = tabs[r]
    q_r = tr.survival

    start = np.zeros(j_max + 1)
    start[0] = q_r
    start[1] = -q_r
    u = iterate_complement(law, start, m)[0].astype(float)
    pz = np.maximum(-u, 0.0)
    pz[0] = 1.0 - u[0]

    g = tr.coefficients.copy()
    g[0] = 0.0
    g /= q_r
    conv = np.zeros(T + 1)
    conv[0] = 1.0
    cond = np.zeros(j_max + 1)
    cond[0] = 0.0  # Z(m,n)=0 means extinction by n, outside H(n)
    for j in range(1, min(j_max, T) + 1):
        conv = np.convolve(conv, g)[: T + 1]
        cond[j] = min(math.fsum(conv), 1.0)
    # S*_j >= j, so j > T cannot lead into H(n)
    eps = np.finfo(float).eps
    err = np.arange(j_max + 1) * (T + 1) * eps * 4.0
    if prob_H is None:
        prob_H = math.fsum(tabs[n].coefficients[1:])
    return ReducedProfile(n, m, T, pz, cond, prob_H, err)


def reduced_joint(law, n: int, m: int, j: int, T: int) -> ReducedJoint:
    if j < 1:
        raise ParameterOutOfRange("j must be >= 1")
    prof = reduced_profile(law, n, m, T, j_max=max(j, 1))
    return ReducedJoint(
        float(prof.pmf_reduced[j]),
        float(prof.cond_H_given_j[j]),
        float(prof.cond_j_given_H[j]),
        float(prof.error_bound[j]),
    )


def mrca_within(law, n: int, k: int, T: int, prob_H: float | None = None) -> float:
    """P(d(n) <= k | H(n)) = P(Z(n-k, n) = 1 | H(n)) for 1 <= k <= n."""
    if not 1 <= k <= n:
        raise ParameterOutOfRange("need 1 <= k <= n")
    prof = reduced_profile(law, n, n - k, T, j_max=1, prob_H=prob_H)
    return float(prof.cond_j_given_H[1])


def mrca_cdf_given_survival(law, n: int, k: int) -> float:
    """P(d(n) <= k | Z(n) > 0) = Q(k) f_{n-k}'(1 - Q(k)) / Q(n), from survival scalars.

    The derivative of the iterate is the product of f' along the orbit
    1 - Q(k), 1 - Q(k+1), ..., 1 - Q(n-1).
    """
    law = make_law(law)
    if not 0 <= k <= n:
        raise ParameterOutOfRange("need 0 <= k <= n")
    if k == 0:
        return 0.0
    q = survival_sequence(law, n)
    logs = [math.log(taylor_coefficient_at_complement(law, 1, float(q[i]))) for i in range(k, n)]
    return float(q[k] / q[n] * math.exp(math.fsum(logs)))
