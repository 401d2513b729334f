"""Simulated annealing, simulated quantum annealing and mean-field annealing.

All three anneal in units of sweeps and sample their schedule once per sweep
at ``t = k / t_a`` for ``k = 1..t_a``. Sites are visited in index order.

SQA stores the ``M`` imaginary-time replicas of a site as the low ``M`` bits
of one 64-bit word (bit set = spin down). Bonds along imaginary time are
activated Swendsen-Wang style with probability ``1 - exp(-2 J_perp)``
between equal neighbours; every resulting segment of the ring is proposed
for a flip with probability 1/2 and accepted with the Metropolis rule on the
change of the spatial part of the effective action. Cut positions are drawn
by geometric skipping so slow late-anneal sweeps cost one random number per
site.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic

from .instances import CouplingInstance, InvalidParameter
from .rng import combine, next_double, next_u64, seed_state

DEFAULT_JPERP_CAP = 25.0
_TWO64 = 18446744073709551616.0
_ALL = np.uint64(0xFFFFFFFFFFFFFFFF)
# above this cut probability (x 2**53) bond cuts are drawn bitwise, below by geometric skipping
_BITWISE_CUTOFF = np.uint64(int(0.05 * 2**53))
_ONE53 = np.uint64(2**53)


@dataclass(frozen=True)
class SaSchedule:
    t_a: int
    beta_start: float = 0.1
    beta_end: float = 3.0

    def __post_init__(self):
        if self.t_a < 1:
            raise InvalidParameter("t_a must be >= 1")
        if not self.beta_end > self.beta_start > 0:
            raise InvalidParameter("need beta_end > beta_start > 0")

    def betas(self) -> np.ndarray:
        k = np.arange(1, self.t_a + 1)
        return self.beta_start + (self.beta_end - self.beta_start) * k / self.t_a


@dataclass(frozen=True)
class SqaSchedule:
    t_a: int
    beta: float
    M: int = 32
    jperp_cap: float = DEFAULT_JPERP_CAP

    def __post_init__(self):
        if self.t_a < 1:
            raise InvalidParameter("t_a must be >= 1")
        if self.beta <= 0:
            raise InvalidParameter("beta must be > 0")
        if not 2 <= self.M <= 64:
            raise InvalidParameter("M must be in [2, 64]")
        if self.jperp_cap <= 0:
            raise InvalidParameter("jperp_cap must be > 0")

    def A(self, k):
        return 1.0 - np.asarray(k) / self.t_a

    def B(self, k):
        return np.asarray(k) / self.t_a


@dataclass(frozen=True)
class MfaSchedule:
    t_a: int
    beta: float
    table_size: int = 1024

    def __post_init__(self):
        if self.t_a < 1:
            raise InvalidParameter("t_a must be >= 1")
        if self.beta <= 0:
            raise InvalidParameter("beta must be > 0")
        if self.table_size < 0 or (self.table_size and self.table_size % 4):
            raise InvalidParameter("table_size must be 0 or a positive multiple of 4")


@dataclass(frozen=True)
class AnnealOutcome:
    success_fraction: float
    final_energy: int
    sweeps_used: int


def jperp(beta_a_over_m: float, cap: float = DEFAULT_JPERP_CAP) -> float:
    """Imaginary-time coupling -1/2 ln tanh(x), clamped to ``cap``."""
    if beta_a_over_m <= 0:
        return cap
    t = math.tanh(beta_a_over_m)
    if t <= 0:
        return cap
    return min(cap, -0.5 * math.log(t))


def sqa_effective_couplings(schedule: SqaSchedule, k: int) -> tuple[float, float]:
    """(spatial weight per unit coupling, imaginary-time coupling) at sweep k.

    The effective action is evaluated at inverse temperature 1: an edge
    contributes ``-weight * J_ij * s_i s_j`` within each slice and each pair
    of neighbouring slices ``-J_perp * s^m s^(m+1)``.
    """
    if not 1 <= k <= schedule.t_a:
        raise InvalidParameter(f"sweep index {k} outside [1, {schedule.t_a}]")
    t = k / schedule.t_a
    A, B = 1.0 - t, t
    return schedule.beta / schedule.M * B, jperp(schedule.beta * A / schedule.M, schedule.jperp_cap)


def sqa_sweep_parameters(schedule: SqaSchedule) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sweep spatial weight, ``1/ln(1-q)`` and ``q`` as a 53-bit integer,
    where ``q = exp(-2 J_perp)`` is the probability that a bond is cut."""
    w = np.empty(schedule.t_a)
    inv = np.empty(schedule.t_a)
    q53 = np.empty(schedule.t_a, dtype=np.uint64)
    for k in range(1, schedule.t_a + 1):
        w[k - 1], jp = sqa_effective_couplings(schedule, k)
        q = math.exp(-2.0 * jp)
        inv[k - 1] = _inv_log1m(q)
        q53[k - 1] = min(int(q * 2.0**53), 2**53)
    return w, inv, q53


def _inv_log1m(q: float) -> float:
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        return -1e-300
    return 1.0 / math.log1p(-q)


def mfa_sweep_parameters(schedule: MfaSchedule) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, schedule.t_a + 1)
    B = k / schedule.t_a
    return 1.0 - B, B


def mfa_tables(table_size: int) -> tuple[np.ndarray, np.ndarray]:
    """sin/cos lookup tables on the grid 2 pi i / size, with exact zeros and ones."""
    theta = 2.0 * np.pi * np.arange(table_size) / table_size
    s, c = np.sin(theta), np.cos(theta)
    q = table_size // 4
    for i, (sv, cv) in enumerate([(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)]):
        s[i * q], c[i * q] = sv, cv
    return s, c


# -- SA ------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _sa_thresholds(beta, thr):
    # thr[d]: acceptance threshold on a uniform u64 for dE = 2 d
    for d in range(1, thr.shape[0]):
        thr[d] = np.uint64(math.exp(-2.0 * beta * d) * _TWO64)


@njit(cache=True, nogil=True)
def _sa_sweep(s, h, offsets, nbrs, nbrJ, thr, state):
    n = s.shape[0]
    de_total = 0
    for i in range(n):
        half = s[i] * h[i]
        if half > 0 and next_u64(state) >= thr[half]:
            continue
        s[i] = -s[i]
        de_total += 2 * half
        si2 = 2 * s[i]
        for p in range(offsets[i], offsets[i + 1]):
            h[nbrs[p]] += si2 * nbrJ[p]
    return de_total


@njit(cache=True, nogil=True)
def _local_fields(s, offsets, nbrs, nbrJ):
    n = s.shape[0]
    h = np.zeros(n, dtype=np.int64)
    for i in range(n):
        acc = 0
        for p in range(offsets[i], offsets[i + 1]):
            acc += nbrJ[p] * s[nbrs[p]]
        h[i] = acc
    return h


@njit(cache=True, nogil=True)
def _sa_anneal(offsets, nbrs, nbrJ, betas, state, max_degree):
    n = offsets.shape[0] - 1
    s = np.empty(n, dtype=np.int64)
    for i in range(n):
        s[i] = 1 if next_u64(state) >> np.uint64(63) else -1
    h = _local_fields(s, offsets, nbrs, nbrJ)
    e = 0
    for i in range(n):
        e -= s[i] * h[i]
    e //= 2
    e_init = e
    thr = np.zeros(max_degree + 1, dtype=np.uint64)
    for k in range(betas.shape[0]):
        _sa_thresholds(betas[k], thr)
        e += _sa_sweep(s, h, offsets, nbrs, nbrJ, thr, state)
    return s, e, e_init


@njit(cache=True, nogil=True)
def _sa_repeat(offsets, nbrs, nbrJ, betas, e0, target, cap, base_key, max_degree):
    reps = 0
    succ = 0.0
    while reps < cap and succ < target:
        state = seed_state(combine(base_key, reps))
        _, e, _ = _sa_anneal(offsets, nbrs, nbrJ, betas, state, max_degree)
        reps += 1
        if e == e0:
            succ += 1.0
    return reps, succ


# -- SQA -----------------------------------------------------------------------


@intrinsic
def _popcount(typingctx, x):
    def codegen(context, builder, signature, args):
        return builder.zext(builder.ctpop(args[0]), context.get_value_type(types.int64))

    return types.int64(types.uint64), codegen


@intrinsic
def _ctz(typingctx, x):
    def codegen(context, builder, signature, args):
        return builder.zext(builder.cttz(args[0], ir.Constant(ir.IntType(1), 0)),
                            context.get_value_type(types.int64))

    return types.int64(types.uint64), codegen


@njit(cache=True, nogil=True, inline="always")
def _bits_upto(b):
    # bits 0..b set
    return _ALL >> np.uint64(63 - b)


@njit(cache=True, nogil=True, inline="always")
def _bits_from(a):
    # bits a..63 set, a in [0, 63]
    return _ALL << np.uint64(a)


@njit(cache=True, nogil=True, inline="always")
def _bernoulli_word(q53, state):
    """64 independent bits, each set with probability q53 / 2**53.

    Compares a uniform 53-bit number per lane against q53 one bit at a time
    from the top, consuming one random word per bit level until every lane
    is decided.
    """
    if q53 >= _ONE53:
        return _ALL
    result = np.uint64(0)
    open_ = _ALL
    for b in range(52, -1, -1):
        r = next_u64(state)
        if (q53 >> np.uint64(b)) & np.uint64(1):
            result |= open_ & ~r
            open_ &= r
        else:
            open_ &= ~r
        if open_ == 0:
            break
    return result


@njit(cache=True, nogil=True, inline="always")
def _random_cuts(m, mask, inv_log1mq, q53, state):
    """Each of the m bond bits independently set with probability q."""
    if q53 > _BITWISE_CUTOFF:
        return _bernoulli_word(q53, state) & mask
    cuts = np.uint64(0)
    if inv_log1mq == 0.0:
        return cuts
    pos = -1
    while True:
        u = 1.0 - next_double(state)
        g = math.log(u) * inv_log1mq
        if g >= m:
            break
        pos += int(g) + 1
        if pos >= m:
            break
        cuts |= np.uint64(1) << np.uint64(pos)
    return cuts


@njit(cache=True, nogil=True, inline="always")
def _cluster_flip(cluster, deg, b0, b1, b2, accept, state):
    """Decide a proposed flip of ``cluster``; b0..b2 are the bit planes of the
    per-slice count of unsatisfied spatial bonds."""
    size = _popcount(cluster)
    unsat = _popcount(cluster & b0) + 2 * _popcount(cluster & b1) + 4 * _popcount(cluster & b2)
    # sum over the cluster of s_i^m * sum_j J_ij s_j^m
    acc = deg * size - 2 * unsat
    r = next_u64(state)
    if acc <= 0:
        return r >> np.uint64(63) == 0
    return r < accept[acc]


@njit(cache=True, nogil=True)
def _sqa_accept_table(w, size, accept):
    step = math.exp(-2.0 * w)
    p = 0.5
    for a in range(1, size):
        p *= step
        accept[a] = np.uint64(p * _TWO64)


@njit(cache=True, nogil=True)
def _sqa_sweep(words, m, mask, offsets, nbrs, nbrJ, accept, inv_log1mq, q53, state):
    n = words.shape[0]
    for i in range(n):
        x = words[i]
        b0 = np.uint64(0)
        b1 = np.uint64(0)
        b2 = np.uint64(0)
        for p in range(offsets[i], offsets[i + 1]):
            u = x ^ words[nbrs[p]]
            if nbrJ[p] < 0:
                u = ~u
            c0 = b0 & u
            b0 ^= u
            c1 = b1 & c0
            b1 ^= c0
            b2 |= c1
        deg = offsets[i + 1] - offsets[i]
        nxt = ((x >> np.uint64(1)) | ((x & np.uint64(1)) << np.uint64(m - 1))) & mask
        breaks = (x ^ nxt) | _random_cuts(m, mask, inv_log1mq, q53, state)
        if breaks == 0:
            if _cluster_flip(mask, deg, b0, b1, b2, accept, state):
                words[i] = x ^ mask
            continue
        # bond b joins slices b and b+1; segments run from one break to the next
        flips = np.uint64(0)
        first = _ctz(breaks)
        rest = breaks & (breaks - np.uint64(1))
        prev = first
        while rest:
            b = _ctz(rest)
            rest &= rest - np.uint64(1)
            cluster = _bits_upto(b) & _bits_from(prev + 1)
            if _cluster_flip(cluster, deg, b0, b1, b2, accept, state):
                flips |= cluster
            prev = b
        cluster = _bits_upto(first)
        if prev + 1 < m:
            cluster |= _bits_from(prev + 1) & mask
        if _cluster_flip(cluster, deg, b0, b1, b2, accept, state):
            flips |= cluster
        words[i] = x ^ flips


@njit(cache=True, nogil=True)
def _slice_energies(words, m, offsets, nbrs, nbrJ):
    n = words.shape[0]
    e = np.zeros(m, dtype=np.int64)
    for i in range(n):
        for p in range(offsets[i], offsets[i + 1]):
            j = nbrs[p]
            if j <= i:
                continue
            d = words[i] ^ words[j]
            J = nbrJ[p]
            for k in range(m):
                if (d >> np.uint64(k)) & np.uint64(1):
                    e[k] += J
                else:
                    e[k] -= J
    return e


@njit(cache=True, nogil=True)
def _sqa_init(n, mask, state):
    words = np.empty(n, dtype=np.uint64)
    for i in range(n):
        words[i] = mask if next_u64(state) >> np.uint64(63) else np.uint64(0)
    return words


@njit(cache=True, nogil=True)
def _sqa_anneal(offsets, nbrs, nbrJ, m, w, inv_log1mq, q53, state, max_degree):
    n = offsets.shape[0] - 1
    mask = _bits_upto(m - 1)
    words = _sqa_init(n, mask, state)
    accept = np.zeros(max_degree * m + 1, dtype=np.uint64)
    for k in range(w.shape[0]):
        _sqa_accept_table(w[k], accept.shape[0], accept)
        _sqa_sweep(words, m, mask, offsets, nbrs, nbrJ, accept, inv_log1mq[k], q53[k], state)
    return words, _slice_energies(words, m, offsets, nbrs, nbrJ)


@njit(cache=True, nogil=True)
def _sqa_repeat(offsets, nbrs, nbrJ, m, w, inv_log1mq, q53, e0, target, cap, base_key, max_degree):
    reps = 0
    succ = 0.0
    while reps < cap and succ < target:
        state = seed_state(combine(base_key, reps))
        _, energies = _sqa_anneal(offsets, nbrs, nbrJ, m, w, inv_log1mq, q53, state, max_degree)
        hits = 0
        for k in range(m):
            if energies[k] == e0:
                hits += 1
        reps += 1
        succ += hits / m
    return reps, succ


# -- MFA -----------------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _mfa_propose(table_size, sin_t, cos_t, state):
    u = next_double(state)
    if table_size > 0:
        idx = int(u * table_size)
        return idx, sin_t[idx], cos_t[idx]
    theta = 2.0 * math.pi * u
    return 0, math.sin(theta), math.cos(theta)


@njit(cache=True, nogil=True)
def _mfa_sweep(idx, sn, cs, offsets, nbrs, nbrJ, a_beta, b_beta, table_size, sin_t, cos_t, state):
    n = sn.shape[0]
    for i in range(n):
        h = 0.0
        for p in range(offsets[i], offsets[i + 1]):
            h += nbrJ[p] * cs[nbrs[p]]
        j, s_new, c_new = _mfa_propose(table_size, sin_t, cos_t, state)
        d = -a_beta * (s_new - sn[i]) - b_beta * (c_new - cs[i]) * h
        if d > 0.0 and next_double(state) >= math.exp(-d):
            continue
        idx[i] = j
        sn[i] = s_new
        cs[i] = c_new


@njit(cache=True, nogil=True)
def _mfa_init(n, table_size):
    idx = np.full(n, table_size // 4, dtype=np.int64)
    return idx, np.ones(n), np.zeros(n)


@njit(cache=True, nogil=True)
def _projected_energy(cs, offsets, nbrs, nbrJ):
    n = cs.shape[0]
    e = 0
    for i in range(n):
        si = 1 if cs[i] >= 0.0 else -1
        for p in range(offsets[i], offsets[i + 1]):
            j = nbrs[p]
            if j > i:
                sj = 1 if cs[j] >= 0.0 else -1
                e -= nbrJ[p] * si * sj
    return e


@njit(cache=True, nogil=True)
def _mfa_anneal(offsets, nbrs, nbrJ, beta, A, B, table_size, sin_t, cos_t, state):
    n = offsets.shape[0] - 1
    idx, sn, cs = _mfa_init(n, table_size)
    for k in range(A.shape[0]):
        _mfa_sweep(idx, sn, cs, offsets, nbrs, nbrJ, beta * A[k], beta * B[k],
                   table_size, sin_t, cos_t, state)
    return cs, _projected_energy(cs, offsets, nbrs, nbrJ)


@njit(cache=True, nogil=True)
def _mfa_repeat(offsets, nbrs, nbrJ, beta, A, B, table_size, sin_t, cos_t, e0, target, cap, base_key):
    reps = 0
    succ = 0.0
    while reps < cap and succ < target:
        state = seed_state(combine(base_key, reps))
        _, e = _mfa_anneal(offsets, nbrs, nbrJ, beta, A, B, table_size, sin_t, cos_t, state)
        reps += 1
        if e == e0:
            succ += 1.0
    return reps, succ


# -- public API ------------------------------------------------------------------


def _adj(instance: CouplingInstance):
    a = instance.adjacency
    return a.offsets, a.neighbours, a.couplings


def _max_degree(instance: CouplingInstance) -> int:
    return int(np.diff(instance.adjacency.offsets).max(initial=0))


def sa_run(instance: CouplingInstance, schedule: SaSchedule, E0: int, key: int) -> AnnealOutcome:
    state = seed_state(np.uint64(key))
    _, e, _ = _sa_anneal(*_adj(instance), schedule.betas(), state, _max_degree(instance))
    return AnnealOutcome(1.0 if e == E0 else 0.0, int(e), schedule.t_a)


def sa_run_detail(instance: CouplingInstance, schedule: SaSchedule, key: int):
    """(final spins, final energy, initial energy) of one SA run."""
    state = seed_state(np.uint64(key))
    s, e, e_init = _sa_anneal(*_adj(instance), schedule.betas(), state, _max_degree(instance))
    return s.astype(np.int8), int(e), int(e_init)


def sqa_run(instance: CouplingInstance, schedule: SqaSchedule, E0: int, key: int) -> AnnealOutcome:
    state = seed_state(np.uint64(key))
    _, energies = _sqa_anneal(*_adj(instance), schedule.M, *sqa_sweep_parameters(schedule), state,
                              _max_degree(instance))
    return AnnealOutcome(slice_success_fraction(energies, E0), int(energies.min()), schedule.t_a)


def slice_success_fraction(slice_energies, E0: int) -> float:
    """Fraction of Trotter slices whose classical energy is ``E0``."""
    e = np.asarray(slice_energies)
    return int(np.count_nonzero(e == E0)) / e.size


def sqa_slices(instance: CouplingInstance, schedule: SqaSchedule, key: int) -> np.ndarray:
    """Final replicas of one SQA run as an ``(M, N)`` array of +-1."""
    state = seed_state(np.uint64(key))
    words, _ = _sqa_anneal(*_adj(instance), schedule.M, *sqa_sweep_parameters(schedule), state,
                           _max_degree(instance))
    return unpack_words(words, schedule.M)


def unpack_words(words: np.ndarray, m: int) -> np.ndarray:
    bits = (words[None, :] >> np.arange(m, dtype=np.uint64)[:, None]) & np.uint64(1)
    return (1 - 2 * bits.astype(np.int64)).astype(np.int8)


def mfa_run(instance: CouplingInstance, schedule: MfaSchedule, E0: int, key: int) -> AnnealOutcome:
    state = seed_state(np.uint64(key))
    A, B = mfa_sweep_parameters(schedule)
    sin_t, cos_t = mfa_tables(max(schedule.table_size, 4))
    _, e = _mfa_anneal(*_adj(instance), schedule.beta, A, B, schedule.table_size, sin_t, cos_t, state)
    return AnnealOutcome(1.0 if e == E0 else 0.0, int(e), schedule.t_a)


def mfa_readout(instance: CouplingInstance, schedule: MfaSchedule, key: int) -> np.ndarray:
    state = seed_state(np.uint64(key))
    A, B = mfa_sweep_parameters(schedule)
    sin_t, cos_t = mfa_tables(max(schedule.table_size, 4))
    cs, _ = _mfa_anneal(*_adj(instance), schedule.beta, A, B, schedule.table_size, sin_t, cos_t, state)
    return np.where(cs >= 0.0, 1, -1).astype(np.int8)


def run(instance: CouplingInstance, schedule, E0: int, key: int) -> AnnealOutcome:
    if isinstance(schedule, SaSchedule):
        return sa_run(instance, schedule, E0, key)
    if isinstance(schedule, SqaSchedule):
        return sqa_run(instance, schedule, E0, key)
    if isinstance(schedule, MfaSchedule):
        return mfa_run(instance, schedule, E0, key)
    raise InvalidParameter(f"unknown schedule {schedule!r}")


def repeat_until(
    instance: CouplingInstance, schedule, E0: int, target: float, cap: int, base_key: int
) -> tuple[int, float]:
    """Run repetitions ``0, 1, ...`` until the accumulated success reaches
    ``target`` or ``cap`` repetitions are spent.

    Repetition ``r`` uses the stream ``combine(base_key, r)``; returns
    ``(repetitions, accumulated success)``.
    """
    offsets, nbrs, nbrJ = _adj(instance)
    key = np.uint64(base_key)
    if isinstance(schedule, SaSchedule):
        return _sa_repeat(offsets, nbrs, nbrJ, schedule.betas(), E0, target, cap, key,
                          _max_degree(instance))
    if isinstance(schedule, SqaSchedule):
        return _sqa_repeat(offsets, nbrs, nbrJ, schedule.M, *sqa_sweep_parameters(schedule),
                           E0, target, cap, key, _max_degree(instance))
    if isinstance(schedule, MfaSchedule):
        A, B = mfa_sweep_parameters(schedule)
        sin_t, cos_t = mfa_tables(max(schedule.table_size, 4))
        return _mfa_repeat(offsets, nbrs, nbrJ, schedule.beta, A, B, schedule.table_size,
                           sin_t, cos_t, E0, target, cap, key)
    raise InvalidParameter(f"unknown schedule {schedule!r}")
