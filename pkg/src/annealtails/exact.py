"""Exact ground-state energies.

``dp_ground`` is a row transfer-matrix dynamic program. The state after row
``r`` is the configuration of that row's ``4*cols`` vertically-coupled
spins (side ``z=0``). Given those, the horizontally-coupled spins (side
``z=1``) of the row decompose into four independent open chains, which are
minimised exactly inside the row kernel. The vertical couplings act bit by
bit, so carrying the table from one row to the next is ``4*cols`` min-plus
butterflies of size ``2**(4*cols)``.

``brute_force_ground`` enumerates all configurations in Gray-code order and
is kept independent of the DP on purpose: it is the oracle the DP is tested
against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .instances import CouplingInstance, energy, site

BRUTE_FORCE_MAX_N = 26
DEFAULT_MAX_L = 5


class ResourceLimit(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GroundResult:
    energy: int
    witness: np.ndarray | None = None


# -- brute force ---------------------------------------------------------------


@njit(cache=True)
def _gray_code_minimum(n, offsets, nbrs, nbrJ):
    # spin n-1 is pinned to +1 (global flip symmetry)
    s = np.ones(n, dtype=np.int64)
    h = np.zeros(n, dtype=np.int64)
    e = 0
    for i in range(n):
        for p in range(offsets[i], offsets[i + 1]):
            h[i] += nbrJ[p]
        e -= h[i]
    e //= 2
    best = e
    best_code = 0
    total = 1 << (n - 1)
    for t in range(1, total):
        i = 0
        while not (t >> i) & 1:
            i += 1
        e += 2 * s[i] * h[i]
        s[i] = -s[i]
        for p in range(offsets[i], offsets[i + 1]):
            h[nbrs[p]] += 2 * nbrJ[p] * s[i]
        if e < best:
            best = e
            best_code = t ^ (t >> 1)
    return best, best_code


def brute_force_ground(instance: CouplingInstance) -> GroundResult:
    n = instance.n
    if n > BRUTE_FORCE_MAX_N:
        raise ResourceLimit(f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, got N={n}")
    adj = instance.adjacency
    best, code = _gray_code_minimum(n, adj.offsets, adj.neighbours, adj.couplings)
    bits = (code >> np.arange(n)) & 1
    return GroundResult(int(best), (1 - 2 * bits).astype(np.int8))


# -- transfer-matrix DP ----------------------------------------------------------


@njit(cache=True)
def _row_energy(hA, Jh):
    """min over the row's side-1 spins, for every side-0 row configuration.

    hA[c, k, a]: field on side-1 spin k of cell c when cell c's side-0 spins
    are the bit pattern a (bit set = spin -1). Jh[c, k]: coupling between
    side-1 spin k of cells c and c+1.
    """
    cols = hA.shape[0]
    size = 1 << (4 * cols)
    out = np.empty(size, dtype=np.int32)
    for x in range(size):
        total = 0
        for k in range(4):
            h = hA[0, k, x & 15]
            mp = -h
            mm = h
            for c in range(1, cols):
                h = hA[c, k, (x >> (4 * c)) & 15]
                J = Jh[c - 1, k]
                np_ = -h + min(mp - J, mm + J)
                mm = h + min(mp + J, mm - J)
                mp = np_
            total += min(mp, mm)
        out[x] = total
    return out


@njit(cache=True)
def _vertical_transfer(table, Jv):
    """out[x] = min_y table[y] - sum_b Jv[b] sigma(y_b) sigma(x_b)."""
    cur = table.copy()
    size = cur.shape[0]
    for b in range(Jv.shape[0]):
        J = Jv[b]
        stride = 1 << b
        for base in range(0, size, 2 * stride):
            for off in range(stride):
                i0 = base + off
                i1 = i0 + stride
                u0 = cur[i0]
                u1 = cur[i1]
                cur[i0] = min(u0 - J, u1 + J)
                cur[i1] = min(u0 + J, u1 - J)
    return cur


@njit(cache=True)
def _vertical_energy_to(x, Jv, size):
    """Energy of the vertical bonds between every row pattern y and fixed x."""
    out = np.zeros(size, dtype=np.int32)
    for y in range(size):
        e = 0
        d = x ^ y
        for b in range(Jv.shape[0]):
            if (d >> b) & 1:
                e += Jv[b]
            else:
                e -= Jv[b]
        out[y] = e
    return out


def _coupling_tables(instance: CouplingInstance):
    g = instance.graph
    R, C = g.rows, g.L
    J = instance.couplings.astype(np.int32)
    idx = g.edge_index

    def coupling(a, b):
        return J[idx[(min(a, b), max(a, b))]]

    pattern = (np.arange(16)[:, None] >> np.arange(4)) & 1
    sigma = 1 - 2 * pattern  # [a, j]
    hA = np.zeros((R, C, 4, 16), dtype=np.int32)
    Jh = np.zeros((R, max(C - 1, 1), 4), dtype=np.int32)
    Jv = np.zeros((max(R - 1, 1), 4 * C), dtype=np.int32)
    for r in range(R):
        for c in range(C):
            for k in range(4):
                w = np.array([coupling(site(C, r, c, 0, j), site(C, r, c, 1, k)) for j in range(4)])
                hA[r, c, k] = sigma @ w
                if c + 1 < C:
                    Jh[r, c, k] = coupling(site(C, r, c, 1, k), site(C, r, c + 1, 1, k))
                if r + 1 < R:
                    Jv[r, 4 * c + k] = coupling(site(C, r, c, 0, k), site(C, r + 1, c, 0, k))
    return hA, Jh, Jv


def _chain_backtrack(hA_row, Jh_row, x):
    """Optimal side-1 spins of one row given its side-0 pattern x."""
    cols = hA_row.shape[0]
    out = np.zeros((cols, 4), dtype=np.int8)
    for k in range(4):
        h = [int(hA_row[c, k, (x >> (4 * c)) & 15]) for c in range(cols)]
        m = {1: -h[0], -1: h[0]}
        choice = []
        for c in range(1, cols):
            J = int(Jh_row[c - 1, k])
            nxt, arg = {}, {}
            for s in (1, -1):
                opts = {p: m[p] - J * p * s for p in (1, -1)}
                arg[s] = min(opts, key=opts.get)
                nxt[s] = -h[c] * s + opts[arg[s]]
            choice.append(arg)
            m = nxt
        s = min(m, key=m.get)
        out[cols - 1, k] = s
        for c in range(cols - 1, 0, -1):
            s = choice[c - 1][s]
            out[c - 1, k] = s
    return out


def dp_ground(
    instance: CouplingInstance, *, witness: bool = False, max_L: int = DEFAULT_MAX_L
) -> GroundResult:
    g = instance.graph
    if g.L > max_L:
        raise ResourceLimit(
            f"L={g.L} exceeds frontier limit {max_L}: table of 2^{4 * g.L} = "
            f"{1 << (4 * g.L)} states"
        )
    hA, Jh, Jv = _coupling_tables(instance)
    tables = []
    table = _row_energy(hA[0], Jh[0])
    tables.append(table)
    for r in range(1, g.rows):
        table = _vertical_transfer(table, Jv[r - 1]) + _row_energy(hA[r], Jh[r])
        tables.append(table)
    e0 = int(table.min())
    if not witness:
        return GroundResult(e0)

    C = g.L
    size = 1 << (4 * C)
    rows_x = [0] * g.rows
    rows_x[-1] = int(np.argmin(tables[-1]))
    for r in range(g.rows - 1, 0, -1):
        cand = tables[r - 1] + _vertical_energy_to(rows_x[r], Jv[r - 1], size)
        rows_x[r - 1] = int(np.argmin(cand))
    spins = np.zeros(g.n, dtype=np.int8)
    for r, x in enumerate(rows_x):
        side1 = _chain_backtrack(hA[r], Jh[r], x)
        for c in range(C):
            for k in range(4):
                spins[site(C, r, c, 0, k)] = 1 - 2 * ((x >> (4 * c + k)) & 1)
                spins[site(C, r, c, 1, k)] = side1[c, k]
    if energy(instance, spins) != e0:
        raise AssertionError("DP witness does not reproduce the optimum")
    return GroundResult(e0, spins)


def ground_energy(instance: CouplingInstance, max_L: int = DEFAULT_MAX_L) -> int:
    return dp_ground(instance, max_L=max_L).energy
