import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given
from hypothesis import strategies as st

from wfdual.analysis import (
    AncestralAinfty,
    MutationForward,
    ReducibleChainError,
    absorbing_states,
    absorption,
    alternating_bridge,
    ancestral_limit_law,
    charpoly_at,
    clt_diagnostics,
    dual_spectrum_transport,
    duality_bridge,
    factorial_moments_from_law,
    guard_bits,
    gw_correction,
    gw_fixed_point,
    inverse_bridge,
    is_irreducible,
    is_triangular,
    limit_regime,
    matrix_max_diff,
    pgf_derivative,
    pgf_from_absorption,
    spectral,
    stationary,
    triangular_eigenvalues,
)
from wfdual.bias import Mutation, Neutral, Quadratic, Selection
from wfdual.chains import dual_matrix, forward_matrix
from wfdual.kernels import build_kernel, falling
from wfdual.numeric import RATIONAL, Mode, matrix_power

F = Fraction
MU = (F(1, 10), F(1, 5))


def gw_bisection(lam, lo=0.0, hi=None, steps=200):
    """Smallest root of x - exp(-lam (1 - x)) by bisection on [0, 1/lam]."""
    hi = 1.0 / lam if hi is None else hi
    f = lambda x: x - math.exp(-lam * (1 - x))  # noqa: E731
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def two_state(a, b):
    return np.array([[1 - mpq(a), mpq(a)], [mpq(b), 1 - mpq(b)]], dtype=object)


@given(st.fractions(F(1, 50), 1, max_denominator=50), st.fractions(F(1, 50), 1, max_denominator=50))
def test_two_state_stationary(a, b):
    pi = stationary(two_state(a, b))
    assert list(pi.values) == [mpq(b) / (mpq(a) + mpq(b)), mpq(a) / (mpq(a) + mpq(b))]
    assert pi.residual == 0


def test_power_iteration_cross_check():
    fw = forward_matrix(Mutation(*MU), 12)
    exact = stationary(fw)
    power = stationary(fw, method="power")
    assert power.method == "power" and power.crosscheck < 1e-12
    assert np.max(np.abs(power.values - exact.values.astype(float))) < 1e-12


def test_float_mode_defaults_to_power():
    fw = forward_matrix(Mutation(*MU), 10, Mode.floating(128))
    pi = stationary(fw)
    assert pi.method == "power" and pi.iterations > 0


def test_reducible_chain_rejected():
    fw = forward_matrix(Neutral(), 6)
    assert not is_irreducible(fw)
    with pytest.raises(ReducibleChainError):
        stationary(fw)


def test_absorbing_states():
    assert absorbing_states(forward_matrix(Neutral(), 5)) == [0, 5]
    assert absorbing_states(forward_matrix(Mutation(*MU), 5)) == []
    assert absorbing_states(dual_matrix(Neutral(), 5)) == [0, 1]


@pytest.mark.parametrize("n", [3, 10, 50])
def test_neutral_extinction(n):
    rho = absorption(forward_matrix(Neutral(), n), (0,))
    assert all(rho.values[m] == 1 - mpq(m, n) for m in range(n + 1))
    assert rho.residual == 0


def test_gamblers_ruin_oracle():
    # a birth-death chain with constant up-probability p
    n, p = 6, mpq(1, 3)
    a = RATIONAL.zeros((n + 1, n + 1))
    a[0, 0] = a[n, n] = mpq(1)
    for k in range(1, n):
        a[k, k + 1], a[k, k - 1] = p, 1 - p
    rho = absorption(a, (0,))
    r = (1 - p) / p
    for k in range(n + 1):
        assert rho.values[k] == (r ** n - r ** k) / (r ** n - 1)


def test_absorption_rejects_transient_target():
    with pytest.raises(ValueError):
        absorption(forward_matrix(Neutral(), 4), (2,))


@pytest.mark.parametrize("n", [4, 10, 25])
def test_mutation_bridge(n):
    mu1, mu2 = MU
    pi = stationary(forward_matrix(Mutation(mu1, mu2), n))
    rho = absorption(dual_matrix(Mutation(mu1, mu2), n), (0,))
    kernel = build_kernel(n)
    assert (inverse_bridge(rho, kernel).values == pi.values).all()
    assert (duality_bridge(pi, kernel).values == rho.values).all()
    assert (alternating_bridge(rho) == pi.values).all()
    assert rho.values[1] == mpq(mu2 / (mu1 + mu2))
    assert pi.mean() == n * mpq(mu1 / (mu1 + mu2))


def test_exact_mutation_variance():
    # closed form of the stationary variance for linear p
    for n in (5, 10, 30):
        mu1, mu2 = MU
        kappa = 1 - mu1 - mu2
        pbar = mu1 / (mu1 + mu2)
        expect = n * pbar * (1 - pbar) / (1 - kappa ** 2 + kappa ** 2 / n)
        pi = stationary(forward_matrix(Mutation(mu1, mu2), n))
        assert pi.variance() == mpq(expect.numerator, expect.denominator)


def test_neutral_mrca():
    n = 20
    rho = absorption(forward_matrix(Neutral(), n), (0,))
    law = inverse_bridge(rho, build_kernel(n))
    assert law.values[1] == 1 and sum(law.values) == 1


def test_pgf_of_stationary_law():
    n = 9
    pi = stationary(forward_matrix(Mutation(*MU), n))
    rho = duality_bridge(pi, build_kernel(n))
    for u in (F(0), F(1, 3), F(1, 2), F(1)):
        direct = sum(pi.values[k] * mpq(u) ** k for k in range(n + 1))
        assert pgf_from_absorption(rho, u) == direct
    assert pgf_derivative(rho, 1) == pi.mean()


def test_factorial_moments_from_law():
    n = 7
    pi = stationary(forward_matrix(Mutation(*MU), n))
    rho = duality_bridge(pi, build_kernel(n))
    assert list(factorial_moments_from_law(pi.values)) == list(rho.values)


def test_gw_fixed_point_against_bisection():
    rho, sub = gw_fixed_point(2)
    assert not sub
    assert abs(rho - 0.2031878699799799) < 1e-15
    assert abs(rho - math.exp(-2 * (1 - rho))) < 1e-15
    for lam in (1.2, 1.5, 3.0, 5.0):
        assert abs(gw_fixed_point(lam)[0] - gw_bisection(lam)) < 1e-14


def test_gw_subcritical_and_damping():
    assert gw_fixed_point(1)[1] and gw_fixed_point(F(1, 2))[0] == 1
    assert abs(gw_fixed_point(2, damping=0.5)[0] - gw_fixed_point(2)[0]) < 1e-15
    with pytest.raises(ValueError):
        gw_fixed_point(2, damping=0)


def test_gw_fixed_point_high_precision():
    mode = Mode.floating(200)
    rho, _ = gw_fixed_point(2, tol=1e-55, mode=mode)
    with mode.context():
        assert abs(rho - mode.exp(-2 * (1 - rho))) < mode(2) ** -180


def test_gw_correction_ignores_n():
    rho, _ = gw_fixed_point(2)
    assert gw_correction(2, rho, 2, 100) == gw_correction(2, rho, 2, 400) == gw_correction(2, rho, 2)
    expect = rho * ((1 - rho) / (1 + 2 * rho) + 2 * (1 - rho) * rho / (1 - (2 * rho) ** 2))
    assert abs(gw_correction(2, rho, 1) - expect) < 1e-15


def test_limit_regime():
    assert limit_regime(Mutation(*MU)) == "stationary"
    assert limit_regime(Quadratic(1)) == "absorbing"
    assert limit_regime(Mutation(0, F(1, 5))) == "mixed"


def test_guard_bits():
    assert guard_bits(400) == 64 + 32 + math.ceil(400 * math.log2(3))


def test_ancestral_limit_law_is_a_law():
    law, rho, bits = ancestral_limit_law(Quadratic(1), 40)
    mode = Mode.floating(bits)
    with mode.context():
        assert abs(sum(law.values) - 1) < 1e-25
        assert min(law.values) > -1e-25


def test_ancestral_limit_law_float_matches_exact():
    n = 14
    mech = Quadratic(1)
    exact = inverse_bridge(absorption(forward_matrix(mech, n), (0,)), build_kernel(n))
    law, _, _ = ancestral_limit_law(mech, n)
    assert max(abs(float(a) - float(b)) for a, b in zip(law.values, exact.values)) < 1e-25


def test_clt_rows():
    rows = clt_diagnostics(MutationForward(F(1, 10), F(1, 10), 20), [20, 40])
    assert [r["n"] for r in rows] == [20, 40]
    for r in rows:
        assert abs(r["mean"] - r["mean_target"]) < 1e-20
    rows = clt_diagnostics(AncestralAinfty.from_slope(2, 30))
    assert rows[0]["moment_identity_gap"] < 1e-20 and abs(rows[0]["law_total"] - 1) < 1e-20
    assert AncestralAinfty.from_slope(2, 5).mechanism == Quadratic(1)


def test_triangular_eigenvalues_neutral_dual():
    n = 8
    bw = dual_matrix(Neutral(), n)
    assert is_triangular(bw)
    ev = triangular_eigenvalues(bw)
    assert ev == [falling(n, i) / mpq(n) ** i for i in range(n + 1)]
    # states 0 and 1 both have eigenvalue 1; the rest are distinct
    assert len(set(ev[1:])) == n


@pytest.mark.parametrize("mech", [Neutral(), Selection(1), Quadratic(F(1, 2)), Mutation(*MU)], ids=str)
def test_forward_and_dual_share_charpoly(mech):
    n = 6
    fw, bw = forward_matrix(mech, n), dual_matrix(mech, n)
    for z in (F(0), F(1, 3), F(-2), F(5, 7)):
        assert charpoly_at(fw, z) == charpoly_at(bw, z)


def test_mutation_spectrum():
    n = 7
    kappa = 1 - sum(MU)
    fw = forward_matrix(Mutation(*MU), n)
    eig = spectral(fw, bits=128)
    expect = sorted((falling(n, i) * (mpq(kappa) / n) ** i for i in range(n + 1)), reverse=True)
    with mpmath.workprec(128):
        for got, want in zip(eig.eigenvalues, expect):
            assert abs(got - mpmath.mpf(int(want.numerator)) / int(want.denominator)) < mpmath.mpf(10) ** -30


def test_spectral_reconstruction_128():
    n = 6
    fw = forward_matrix(Selection(1), n)
    eig = spectral(fw, bits=128)
    assert matrix_max_diff(eig.reconstruct(3), matrix_power(fw.entries, 3)) < 1e-20
    assert eig.eigen_residual(fw.entries) < 1e-25


def test_spectral_float64():
    fw = forward_matrix(Mutation(*MU), 8, Mode.floating(53))
    eig = spectral(fw)
    assert eig.backend == "numpy"
    assert matrix_max_diff(eig.reconstruct(2), fw.entries @ fw.entries) < 1e-12


def test_transport_to_dual():
    n = 4
    mech = Mutation(*MU)
    fw, bw = forward_matrix(mech, n), dual_matrix(mech, n)
    eig = spectral(fw, bits=128)
    tr = dual_spectrum_transport(eig, build_kernel(n))
    # the transported vectors are right eigenvectors of P^T
    assert tr.eigen_residual(bw.entries.T.copy()) < 1e-25
    assert matrix_max_diff(tr.reconstruct(2), matrix_power(bw.entries.T.copy(), 2)) < 1e-25
