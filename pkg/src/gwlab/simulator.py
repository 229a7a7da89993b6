"""Forward Monte Carlo simulation of genealogies and rejection-conditioned estimators.

Each replicate draws from its own SplitMix64 stream keyed by (seed, replicate
index), so estimates do not depend on how replicates are split across
workers. A replicate is first screened for Z(n) alone; only replicates that
matter for an estimator are replayed from the same stream with every
particle's offspring count kept, after which survivors are marked backwards.

``population_cap`` bounds the size of any single generation. Screening runs
that hit it are replayed with the cap doubled, at most twice, and are
reported as indeterminate if they still overflow.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .errors import ParameterOutOfRange
from .offspring_laws import make_law, sampler_tables
from .series_engine import threshold

DEFAULT_CAP = 10**7
RETRIES = 2
BATCH = 4096


@dataclass(frozen=True)
class Extinct:
    n: int
    generation: int  # first generation with no particles

    status = "extinct"


@dataclass(frozen=True)
class Overflow:
    n: int
    generation: int
    cap: int

    status = "overflow"


@dataclass(frozen=True)
class TreeRun:
    n: int
    generations: list  # generations[m][i] = offspring count of particle i in generation m
    survivor_marks: list  # survivor_marks[m][i]: particle has a descendant in generation n
    z_final: int
    reduced_counts: np.ndarray  # Z(m, n), m = 0..n
    mrca_distance: int

    status = "ok"

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.generations] + [self.z_final])


def _tables(law):
    t = sampler_tables(law)
    return t.tails, t.kind, t.alpha, t.log_const


def mrca_distance(reduced_counts: np.ndarray) -> int:
    """d(n) = n - max{m < n : Z(m, n) = 1}."""
    n = len(reduced_counts) - 1
    ones = np.flatnonzero(reduced_counts[:n] == 1)
    return int(n - ones[-1])


def simulate_tree(law, n: int, seed: int, population_cap: int = DEFAULT_CAP, replicate: int = 0):
    """One genealogy from a single ancestor over n generations.

    Returns a TreeRun when Z(n) > 0, otherwise Extinct or Overflow.
    """
    law = make_law(law)
    if n < 1:
        raise ParameterOutOfRange("n must be >= 1")
    tabs = _tables(law)
    key = np.uint64(_kernels.stream_key(np.uint64(seed), np.uint64(replicate)))
    over, sizes = _kernels.generation_sizes(n, key, population_cap, *tabs)
    if over:
        g = int(np.flatnonzero(sizes)[-1]) + 1
        return Overflow(n, g, population_cap)
    if sizes[n] == 0:
        return Extinct(n, int(np.flatnonzero(sizes == 0)[0]))
    total = int(sizes[:n].sum())
    flat = _kernels.fill_offspring(n, key, total, *tabs)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    generations = [flat[bounds[m] : bounds[m + 1]] for m in range(n)]
    flat_marks, counts = _kernels.mark_survivors(flat, sizes, n)
    marks = [flat_marks[bounds[m] : bounds[m + 1]] for m in range(n + 1)]
    return TreeRun(n, generations, marks, int(sizes[n]), counts, mrca_distance(counts))


def naive_reduced_counts(generations, n: int) -> np.ndarray:
    """Z(m, n) from explicit parent links and a per-particle descendant walk.

    Quadratic and slow; kept as an independent check of the backward marking.
    """
    parents = [[]]  # parents[m][i] = index of parent in generation m-1
    for m in range(n):
        links = []
        for i, k in enumerate(generations[m]):
            links.extend([i] * int(k))
        parents.append(links)
    sizes = [len(generations[m]) for m in range(n)] + [len(parents[n])]
    alive = [set() for _ in range(n + 1)]
    for i in range(sizes[n]):
        idx = i
        alive[n].add(idx)
        for m in range(n, 0, -1):
            idx = parents[m][idx]
            alive[m - 1].add(idx)
    return np.array([len(a) for a in alive], dtype=np.int64)


# ---------------------------------------------------------------------------
# screening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Screen:
    z_final: np.ndarray  # -1 marks indeterminate
    caps: np.ndarray  # cap under which each replicate completed
    indeterminate: int


def screen(law, n: int, replicates: int, seed: int, population_cap: int = DEFAULT_CAP,
           jobs: int = 1) -> Screen:
    """Z(n) for replicates 0..replicates-1, with the overflow retry policy."""
    law = make_law(law)
    tabs = _tables(law)
    starts = list(range(0, replicates, BATCH))

    def work(first):
        count = min(BATCH, replicates - first)
        return _kernels.screen_batch(n, np.uint64(seed), first, count, population_cap, *tabs)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    z = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    caps = np.full(len(z), population_cap, dtype=np.int64)
    for r in np.flatnonzero(z < 0):
        cap = population_cap
        for _ in range(RETRIES):
            cap *= 2
            val = _kernels.screen_batch(n, np.uint64(seed), int(r), 1, cap, *tabs)[0]
            if val >= 0:
                z[r] = val
                caps[r] = cap
                break
    return Screen(z, caps, int(np.sum(z < 0)))


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass
class EstimatorResult:
    estimate: float
    stderr: float
    replicates: int
    accepted: int
    seed: int
    wall_time: float
    indeterminate_count: int = 0

    def summary(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "replicates": self.replicates,
            "accepted": self.accepted,
            "seed": self.seed,
            "indeterminate_count": self.indeterminate_count,
        }

    def to_json(self, dest=None) -> str:
        text = json.dumps(self.summary(), indent=2)
        if dest is not None:
            with open(dest, "w") as fh:
                fh.write(text)
        return text


def _mean_and_se(ind: np.ndarray) -> tuple[float, float]:
    k = len(ind)
    if k == 0:
        return math.nan, math.nan
    mean = float(ind.mean())
    sd = float(ind.std(ddof=1)) if k > 1 else 0.0
    return mean, sd / math.sqrt(k)


def write_replicate_log(dest, z_final, d_n, accepted) -> None:
    """CSV ``replicate,z_final,d_n,accepted``; d_n is blank where undefined."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "z_final", "d_n", "accepted"])
        for r, (z, d, a) in enumerate(zip(z_final, d_n, accepted)):
            w.writerow([r, int(z), "" if d < 0 else int(d), int(bool(a))])


def _screen_for(law, n, replicates, seed, population_cap, jobs, screening):
    """Reuse a screening of the same (law, n, replicates, seed) when one is given."""
    if screening is None:
        return screen(law, n, replicates, seed, population_cap, jobs)
    if len(screening.z_final) != replicates:
        raise ParameterOutOfRange("screening was run for a different replicate count")
    return screening


def mc_small_dev(law, n: int, phi_n: int, replicates: int, seed: int,
                 population_cap: int = DEFAULT_CAP, jobs: int = 1, log_path=None,
                 screening: Screen | None = None) -> EstimatorResult:
    """Frequency of H(n) = {0 < Z(n) <= T}, T = floor(1/Q(phi_n)).

    ``screening`` may pass in the result of ``screen`` for the same law, n,
    replicates and seed so that several estimators share one pass.
    """
    law = make_law(law)
    if replicates < 1:
        raise ParameterOutOfRange("replicates must be >= 1")
    if not 1 <= phi_n <= n:
        raise ParameterOutOfRange("need 1 <= phi_n <= n")
    t0 = time.perf_counter()
    T = threshold(law, phi_n)
    sc = _screen_for(law, n, replicates, seed, population_cap, jobs, screening)
    ok = sc.z_final >= 0
    hit = (sc.z_final > 0) & (sc.z_final <= T)
    est, se = _mean_and_se(hit[ok].astype(float))
    if log_path is not None:
        write_replicate_log(log_path, sc.z_final, np.full(replicates, -1), hit)
    return EstimatorResult(est, se, replicates, int(ok.sum()), seed, time.perf_counter() - t0, sc.indeterminate)


@dataclass
class ConditionalReducedResult:
    j: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    replicates: int
    accepted: int
    acceptance_rate: float
    too_few_accepted: bool
    seed: int
    wall_time: float
    indeterminate_count: int = 0

    def summary(self) -> dict:
        d = asdict(self)
        for k in ("j", "estimates", "stderr"):
            d[k] = [float(v) for v in d[k]]
        return d


MIN_ACCEPTED = 100


def mc_conditional_reduced(law, n: int, phi_n: int, x: float, j_max: int, replicates: int, seed: int,
                           population_cap: int = DEFAULT_CAP, jobs: int = 1,
                           screening: Screen | None = None) -> ConditionalReducedResult:
    """Rejection estimate of P(Z(n - ceil(x phi), n) = j | H(n)) for j = 1..j_max."""
    law = make_law(law)
    shift = math.ceil(x * phi_n)
    if not 1 <= shift < n:
        raise ParameterOutOfRange(f"need 1 <= ceil(x phi) < n, got {shift}")
    t0 = time.perf_counter()
    T = threshold(law, phi_n)
    sc = _screen_for(law, n, replicates, seed, population_cap, jobs, screening)
    acc = np.flatnonzero((sc.z_final > 0) & (sc.z_final <= T))
    m = n - shift
    counts = np.zeros(j_max + 1)
    for r in acc:
        run = simulate_tree(law, n, seed, int(sc.caps[r]), replicate=int(r))
        j = int(run.reduced_counts[m])
        if j <= j_max:
            counts[j] += 1
    k = len(acc)
    js = np.arange(1, j_max + 1)
    if k:
        p = counts[1:] / k
        se = np.sqrt(p * (1 - p) / max(k - 1, 1))
    else:
        p = np.full(j_max, math.nan)
        se = np.full(j_max, math.nan)
    determinate = replicates - sc.indeterminate
    return ConditionalReducedResult(js, p, se, replicates, k, k / max(determinate, 1),
                                    k < MIN_ACCEPTED, seed, time.perf_counter() - t0, sc.indeterminate)


@dataclass
class ZubkovResult:
    y: np.ndarray
    cdf: np.ndarray
    distances: np.ndarray
    replicates: int
    accepted: int
    seed: int
    wall_time: float
    indeterminate_count: int = 0

    @property
    def sup_deviation(self) -> float:
        return float(np.max(np.abs(self.cdf - self.y)))


def mc_zubkov(law, n: int, replicates: int, seed: int, population_cap: int = DEFAULT_CAP,
              jobs: int = 1, y_grid=None) -> ZubkovResult:
    """Empirical distribution function of d(n)/n given Z(n) > 0."""
    law = make_law(law)
    if replicates < 10**4:
        raise ParameterOutOfRange("mc_zubkov needs at least 10^4 replicates")
    t0 = time.perf_counter()
    y = np.arange(1, 10) / 10 if y_grid is None else np.asarray(y_grid, dtype=float)
    sc = screen(law, n, replicates, seed, population_cap, jobs)
    alive = np.flatnonzero(sc.z_final > 0)

    def one(r):
        return simulate_tree(law, n, seed, int(sc.caps[r]), replicate=int(r)).mrca_distance

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            d = np.array(list(pool.map(one, alive)), dtype=np.int64)
    else:
        d = np.array([one(r) for r in alive], dtype=np.int64)
    ratio = d / n
    cdf = np.array([np.mean(ratio <= yy) if len(d) else math.nan for yy in y])
    return ZubkovResult(y, cdf, d, replicates, len(d), seed, time.perf_counter() - t0, sc.indeterminate)
