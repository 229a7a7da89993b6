"""Compiled inner loops: pgf iteration on truncated series, survival scalars,
counter-based random streams and offspring inversion sampling.

All series kernels operate on the complement ``U(s) = 1 - f_k(s)`` so that the
constant coefficient (a survival probability) never suffers cancellation.
"""
import math

import numpy as np
from numba import njit

STABLE = 0
GEOMETRIC = 1
CUSTOM = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_M3 = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO53 = 1.0 / 9007199254740992.0
_LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# random streams (SplitMix64 keyed per replicate)
# ---------------------------------------------------------------------------

@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, replicate):
    base = mix64(np.uint64(seed) + _GOLDEN)
    return mix64(base ^ (np.uint64(replicate) * _M3))


@njit(cache=True)
def next_open01(state):
    """Advance a SplitMix64 state; return (new_state, v) with v uniform on (0, 1]."""
    state = state + _GOLDEN
    z = mix64(state)
    v = (float(z >> _S11) + 1.0) * _TWO53
    return state, v


# ---------------------------------------------------------------------------
# offspring inversion
# ---------------------------------------------------------------------------

@njit(cache=True)
def _log_tail_far(kind, j, alpha, log_const):
    # P(xi >= j) beyond the table; only infinite-support families get here
    if kind == STABLE:
        return log_const + math.lgamma(j - 1.0 - alpha) - math.lgamma(float(j))
    return -j * _LOG2


@njit(cache=True)
def draw_from_v(v, tails, kind, alpha, log_const):
    """Smallest j with P(xi >= j + 1) <= v, for v in (0, 1].

    ``tails[i] = P(xi >= i)`` for i = 0..L. Finite-support laws must have
    ``tails[L] == 0``.
    """
    L = tails.shape[0] - 1
    if tails[L] <= v:
        # mass sits on small values, so a forward scan beats bisection
        for i in range(L):
            if tails[i + 1] <= v:
                return i
        return L - 1
    logv = math.log(v)
    lo = L - 1
    hi = 2 * L
    while _log_tail_far(kind, hi + 1, alpha, log_const) > logv:
        lo = hi
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _log_tail_far(kind, mid + 1, alpha, log_const) <= logv:
            hi = mid
        else:
            lo = mid
    return hi


@njit(cache=True)
def draws_from_vs(vs, tails, kind, alpha, log_const):
    out = np.empty(vs.shape[0], dtype=np.int64)
    for i in range(vs.shape[0]):
        out[i] = draw_from_v(vs[i], tails, kind, alpha, log_const)
    return out


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def generation_sizes(n, key, cap, tails, kind, alpha, log_const):
    """Population sizes Z(0..n) along the stream ``key``.

    Returns (overflowed, sizes). Sizes past an extinction or overflow are 0.
    """
    sizes = np.zeros(n + 1, dtype=np.int64)
    sizes[0] = 1
    state = key
    z = 1
    for g in range(n):
        s = 0
        for _ in range(z):
            state, v = next_open01(state)
            s += draw_from_v(v, tails, kind, alpha, log_const)
            if s > cap:
                return True, sizes
        sizes[g + 1] = s
        z = s
        if z == 0:
            break
    return False, sizes


@njit(cache=True, nogil=True)
def fill_offspring(n, key, total, tails, kind, alpha, log_const):
    """Replay the stream and record every particle's offspring count, generation by generation."""
    out = np.empty(total, dtype=np.int64)
    state = key
    z = 1
    pos = 0
    for g in range(n):
        s = 0
        for _ in range(z):
            state, v = next_open01(state)
            k = draw_from_v(v, tails, kind, alpha, log_const)
            out[pos] = k
            pos += 1
            s += k
        z = s
        if z == 0:
            break
    return out


@njit(cache=True, nogil=True)
def screen_batch(n, seed, first, count, cap, tails, kind, alpha, log_const):
    """Final sizes Z(n) for replicates first..first+count-1 (-1 marks overflow)."""
    out = np.empty(count, dtype=np.int64)
    for r in range(count):
        key = stream_key(seed, first + r)
        state = key
        z = 1
        over = False
        for g in range(n):
            s = 0
            for _ in range(z):
                state, v = next_open01(state)
                s += draw_from_v(v, tails, kind, alpha, log_const)
                if s > cap:
                    over = True
                    break
            if over:
                break
            z = s
            if z == 0:
                break
        out[r] = -1 if over else z
    return out


# ---------------------------------------------------------------------------
# survival scalars
# ---------------------------------------------------------------------------

@njit(cache=True)
def survival_step(kind, u, c, beta, probs):
    """1 - f(1 - u) evaluated without cancellation."""
    if kind == STABLE:
        return u - c * u ** beta
    if kind == GEOMETRIC:
        return u / (1.0 + u)
    acc = 0.0
    lg = math.log1p(-u)
    for i in range(1, probs.shape[0]):
        acc -= probs[i] * math.expm1(i * lg)
    return acc


@njit(cache=True)
def survival_sequence(kind, n_max, c, beta, probs):
    out = np.empty(n_max + 1)
    out[0] = 1.0
    u = 1.0
    for k in range(1, n_max + 1):
        u = survival_step(kind, u, c, beta, probs)
        out[k] = u
    return out


# ---------------------------------------------------------------------------
# truncated series iteration of U = 1 - f_k
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _stable_step(u, v, w, c, beta):
    T = u.shape[0] - 1
    u0 = u[0]
    v[0] = u0 ** beta
    for i in range(T + 1):
        w[i] = i * u[i]
    # v = u**beta via v' u = beta u' v
    for k in range(1, T + 1):
        a = 0.0
        b = 0.0
        for i in range(1, k + 1):
            t = v[k - i]
            a += w[i] * t
            b += u[i] * t
        v[k] = ((beta + 1.0) * a - k * b) / (k * u0)
    for k in range(T + 1):
        u[k] -= c * v[k]


@njit(cache=True, fastmath=True)
def _geometric_step(u, v):
    # U <- U / (1 + U)
    T = u.shape[0] - 1
    d0 = 1.0 + u[0]
    v[0] = u[0] / d0
    for k in range(1, T + 1):
        acc = u[k]
        for i in range(1, k + 1):
            acc -= u[i] * v[k - i]
        v[k] = acc / d0
    for k in range(T + 1):
        u[k] = v[k]


@njit(cache=True, fastmath=True)
def _custom_step(u, g, tmp, probs, c, beta):
    # U <- 1 - f(1 - U) by Horner on S = 1 - U; constant term recomputed stably
    T = u.shape[0] - 1
    d = probs.shape[0] - 1
    u0_new = survival_step(CUSTOM, u[0], c, beta, probs)
    for k in range(T + 1):
        g[k] = 0.0
    g[0] = probs[d]
    for deg in range(d - 1, -1, -1):
        for k in range(T + 1):
            acc = 0.0
            for i in range(k + 1):
                s_i = (1.0 - u[0]) if i == 0 else -u[i]
                acc += g[k - i] * s_i
            tmp[k] = acc
        for k in range(T + 1):
            g[k] = tmp[k]
        g[0] += probs[deg]
    u[0] = u0_new
    for k in range(1, T + 1):
        u[k] = -g[k]


@njit(cache=True)
def iterate_series(kind, u, nsteps, snaps, c, beta, probs):
    """Apply U <- 1 - f(1 - U) ``nsteps`` times in place.

    ``snaps`` is a sorted array of step counts at which to copy U out; the
    copies are returned as rows of a 2-d array.
    """
    T = u.shape[0] - 1
    out = np.empty((snaps.shape[0], T + 1))
    v = np.empty(T + 1)
    w = np.empty(T + 1)
    idx = 0
    while idx < snaps.shape[0] and snaps[idx] == 0:
        out[idx, :] = u
        idx += 1
    for step in range(1, nsteps + 1):
        if kind == STABLE:
            _stable_step(u, v, w, c, beta)
        elif kind == GEOMETRIC:
            _geometric_step(u, v)
        else:
            _custom_step(u, v, w, probs, c, beta)
        while idx < snaps.shape[0] and snaps[idx] == step:
            out[idx, :] = u
            idx += 1
    return out


@njit(cache=True, nogil=True)
def mark_survivors(flat, sizes, n):
    """Backward pass over a replayed tree.

    ``flat`` holds offspring counts generation by generation. Returns the flat
    survivor marks (generations 0..n) and the reduced counts Z(m, n).
    """
    offs = np.zeros(n + 2, dtype=np.int64)
    for m in range(n + 1):
        offs[m + 1] = offs[m] + sizes[m]
    marks = np.zeros(offs[n + 1], dtype=np.bool_)
    counts = np.zeros(n + 1, dtype=np.int64)
    for i in range(offs[n], offs[n + 1]):
        marks[i] = True
    counts[n] = sizes[n]
    for m in range(n - 1, -1, -1):
        child = offs[m + 1]
        c = 0
        for i in range(offs[m], offs[m + 1]):
            k = flat[i]
            hit = False
            for t in range(child, child + k):
                if marks[t]:
                    hit = True
                    break
            child += k
            marks[i] = hit
            if hit:
                c += 1
        counts[m] = c
    return marks, counts
