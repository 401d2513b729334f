"""Fixed-parameter sweeps sample the right Gibbs distributions.

Chains run 10**6 sweeps unless noted; states are recorded every ``thin`` sweeps so
recorded samples are close to independent and the multinomial error bars are
honest.
"""

import numpy as np
import pytest

from annealtails import annealers as A
from chains import (
    check_frequencies,
    csr,
    mfa_chain,
    mfa_gibbs_bins,
    mfa_gibbs_table,
    sa_chain,
    sa_gibbs,
    sqa_chain,
    sqa_gibbs,
)

SWEEPS = 10**6


@pytest.mark.parametrize("edges, beta", [
    ([(0, 1, 1)], 0.7),
    ([(0, 1, -1)], 1.3),
    # frustrated K4; odd degrees keep every move at nonzero energy change
    ([(0, 1, 1), (0, 2, 1), (0, 3, -1), (1, 2, -1), (1, 3, 1), (2, 3, 1)], 0.6),
])
def test_sa_metropolis_gibbs(edges, beta):
    n = 1 + max(max(i, j) for i, j, _ in edges)
    counts = sa_chain(*csr(n, edges), beta, SWEEPS, 5, np.uint64(17))
    z, p = check_frequencies(counts, sa_gibbs(n, edges, beta))
    assert z < 3.0 and p > 1e-3


@pytest.mark.parametrize("jperp", [0.3859684164526524, 1.0, 1.6])
def test_sqa_single_site_ring(jperp):
    counts = sqa_chain(*csr(1, []), 4, 0.0, jperp, SWEEPS, 2, np.uint64(5))
    z, p = check_frequencies(counts, sqa_gibbs(1, [], 4, 0.0, jperp))
    assert z < 3.0 and p > 1e-3


@pytest.mark.parametrize("J, w, jperp", [(1, 0.4, 0.5), (-1, 0.7, 1.7), (-1, 0.7, 1.4), (1, 0.2, 0.2)])
def test_sqa_coupled_rings(J, w, jperp):
    # strongly coupled rings tunnel between the two ordered states only
    # rarely, hence the long chain and heavy thinning
    edges = [(0, 1, J)]
    counts = sqa_chain(*csr(2, edges), 4, w, jperp, 20 * SWEEPS, 500, np.uint64(9))
    _, p = check_frequencies(counts, sqa_gibbs(2, edges, 4, w, jperp))
    assert p > 1e-3


@pytest.mark.parametrize("a_beta, b_beta, J", [(0.8, 1.2, 1), (1.5, 0.0, 1), (0.3, 2.0, -1)])
def test_mfa_table_gibbs(a_beta, b_beta, J):
    edges = [(0, 1, J)]
    s, c = A.mfa_tables(8)
    counts = mfa_chain(*csr(2, edges), a_beta, b_beta, 8, s, c, SWEEPS, 3, 0, np.uint64(3))
    z, p = check_frequencies(counts, mfa_gibbs_table(2, edges, a_beta, b_beta, 8))
    assert z < 3.5 and p > 1e-3


@pytest.mark.parametrize("n, a_beta, b_beta", [(1, 1.5, 0.0), (2, 0.7, 1.5)])
def test_mfa_exact_trig_gibbs(n, a_beta, b_beta):
    edges = [(0, 1, 1)] if n == 2 else []
    s, c = A.mfa_tables(4)
    bins = 16 if n == 1 else 8
    counts = mfa_chain(*csr(n, edges), a_beta, b_beta, 0, s, c, SWEEPS, 3, bins, np.uint64(8))
    z, p = check_frequencies(counts, mfa_gibbs_bins(n, edges, a_beta, b_beta, bins))
    assert z < 3.5 and p > 1e-3


def test_sequential_zero_cost_moves_cycle():
    # Always accepting zero-cost flips in a fixed order is deterministic on a
    # frustrated ring started from all-up: the whole ring flips every sweep.
    edges = [(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, -1)]
    counts = sa_chain(*csr(4, edges), 0.6, 1000, 1, np.uint64(1))
    assert counts[0] == 500 and counts[15] == 500
