import math
from collections import Counter
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given
from hypothesis import strategies as st

from wfdual.bias import ConfigError, Neutral
from wfdual.chains import dual_matrix
from wfdual.exchangeable import (
    DirichletMultinomial,
    Moran,
    WrightFisher,
    ancestral_count_entry,
    ancestral_count_inclusion_exclusion,
    ancestral_count_matrix,
    compositions,
    dirichlet_forward_entry,
    forward_law_matrix,
    law_from_config,
    law_to_config,
    merger_probability,
    sample_reproduction,
)
from wfdual.kernels import rising

F = Fraction


def brute_ancestral(n, offspring_laws, b):
    """Law of the number of distinct parents of b labelled children (WF / Moran by enumeration)."""
    out = Counter()
    for parents, weight in offspring_laws:
        # parents[c] is the parent of child c; sample b children without replacement
        from itertools import combinations
        subsets = list(combinations(range(n), b))
        for sub in subsets:
            out[len({parents[c] for c in sub})] += weight / len(subsets)
    return out


def wf_parent_assignments(n):
    w = F(1, n ** n)
    return [(p, w) for p in product(range(n), repeat=n)]


def moran_parent_assignments(n):
    # a uniform ordered pair (two, zero) of parents; the child of 'zero' is re-assigned to 'two'
    out = []
    w = F(1, n * (n - 1))
    for two in range(n):
        for zero in range(n):
            if two != zero:
                out.append((tuple(two if c == zero else c for c in range(n)), w))
    return out


def test_wf_row_example():
    law = WrightFisher(3)
    row = [ancestral_count_entry(law, 3, a) for a in range(4)]
    assert row == [0, mpq(1, 9), mpq(6, 9), mpq(2, 9)]


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_wf_against_enumeration(n):
    law = WrightFisher(n)
    assign = wf_parent_assignments(n)
    for b in range(1, n + 1):
        brute = brute_ancestral(n, assign, b)
        for a in range(b + 1):
            assert ancestral_count_entry(law, b, a) == mpq(brute[a].numerator, brute[a].denominator)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_moran_against_enumeration(n):
    law = Moran(n)
    assign = moran_parent_assignments(n)
    for b in range(1, n + 1):
        brute = brute_ancestral(n, assign, b)
        for a in range(b + 1):
            assert ancestral_count_entry(law, b, a) == mpq(brute[a].numerator, brute[a].denominator)


@pytest.mark.parametrize("theta", [F(1, 2), F(1), F(2), F(7, 3)])
def test_dirichlet_pair_merger(theta):
    for n in (2, 5, 9):
        law = DirichletMultinomial(theta, n)
        expect = n * rising(mpq(theta), 2) / rising(n * mpq(theta), 2)
        assert merger_probability(law, (2,)) == expect


def test_wf_pair_merger():
    assert merger_probability(WrightFisher(7), (2,)) == mpq(1, 7)
    assert merger_probability(WrightFisher(7), (1, 1)) == mpq(6, 7)


@pytest.mark.parametrize("k", range(5))
def test_moran_forward_row(k):
    n = 4
    row = forward_law_matrix(Moran(n)).entries[k]
    move = mpq(k * (n - k), n * (n - 1))
    for kk in range(n + 1):
        expect = move if abs(kk - k) == 1 else (1 - 2 * move if kk == k else 0)
        assert row[kk] == expect


def test_merger_invariant_under_reordering():
    law = DirichletMultinomial(F(1, 2), 8)
    assert merger_probability(law, (1, 3, 2)) == merger_probability(law, (3, 2, 1))
    with pytest.raises(ValueError):
        merger_probability(law, (5, 5))


@pytest.mark.parametrize("law", [WrightFisher(6), Moran(6), DirichletMultinomial(F(1, 2), 6),
                                 DirichletMultinomial(2, 7)], ids=str)
def test_merger_total_mass(law):
    # cluster patterns of b children partition the sample space
    for b in range(1, law.n + 1):
        total = mpq(0)
        for a in range(1, b + 1):
            total += ancestral_count_entry(law, b, a)
        assert total == 1


def test_compositions():
    assert sorted(compositions(4, 2)) == [(1, 3), (2, 2), (3, 1)]
    assert list(compositions(0, 0)) == [()]
    assert len(list(compositions(7, 3))) == math.comb(6, 2)


@pytest.mark.parametrize("n", [2, 5, 10])
def test_wf_ancestral_equals_neutral_dual(n):
    bmax = min(n, 8)
    anc = ancestral_count_matrix(WrightFisher(n), n, bmax)
    dual = dual_matrix(Neutral(), n)
    for b in range(bmax + 1):
        for a in range(bmax + 1):
            assert anc.entries[b, a] == dual.entries[b, a]


@pytest.mark.parametrize("law", [WrightFisher(8), Moran(8), DirichletMultinomial(F(1, 2), 8),
                                 DirichletMultinomial(1, 8), DirichletMultinomial(2, 8)], ids=str)
def test_inclusion_exclusion_agrees(law):
    for b in range(law.n + 1):
        for a in range(b + 1):
            assert ancestral_count_inclusion_exclusion(law, law.n, b, a) == ancestral_count_entry(law, b, a)


def test_dirichlet_forward_rows_are_laws():
    n, theta = 6, F(3, 4)
    for k in range(n + 1):
        assert sum(dirichlet_forward_entry(n, theta, k, kk) for kk in range(n + 1)) == 1


def test_dirichlet_large_theta_tends_to_wf():
    n = 6
    d = ancestral_count_matrix(DirichletMultinomial(10 ** 6, n)).as_float64()
    w = ancestral_count_matrix(WrightFisher(n)).as_float64()
    assert np.max(np.abs(d - w)) < 1e-4


def test_law_config():
    law = law_from_config({"kind": "dirichlet", "theta": "1/2"}, 5)
    assert law == DirichletMultinomial(F(1, 2), 5)
    assert law_to_config(law) == {"kind": "dirichlet", "theta": "1/2"}
    assert law_from_config({"kind": "moran"}, 4) == Moran(4)
    with pytest.raises(ConfigError):
        law_from_config({"kind": "dirichlet", "theta": "-1"}, 5)
    with pytest.raises(ConfigError):
        law_from_config({"kind": "lambda"}, 5)
    with pytest.raises(ValueError):
        Moran(1)


@given(st.integers(0, 2 ** 32 - 1))
def test_moran_sampler_shape(seed):
    nu = sample_reproduction(Moran(7), np.random.default_rng(seed))
    assert sorted(nu.tolist()) == [0] + [1] * 5 + [2]


@pytest.mark.parametrize("law", [WrightFisher(6), DirichletMultinomial(F(1, 2), 6)], ids=str)
def test_sampler_pair_merger_rate(law):
    rng = np.random.default_rng(11)
    draws = 40000
    n = law.n
    vals = np.empty(draws)
    for t in range(draws):
        nu = sample_reproduction(law, rng)
        assert nu.sum() == n and (nu >= 0).all()
        vals[t] = (nu * (nu - 1)).sum() / (n * (n - 1))
    # unbiased estimate of P(two labelled children share a parent)
    exact = float(merger_probability(law, (2,)))
    assert abs(vals.mean() - exact) < 4 * vals.std() / math.sqrt(draws)
