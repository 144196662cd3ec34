from fractions import Fraction

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpfr, mpq
from hypothesis import given
from hypothesis import strategies as st

from wfdual.numeric import (
    RATIONAL,
    Mode,
    SingularSystemError,
    as_fraction,
    determinant,
    format_scalar,
    matmul,
    matrix_power,
    mode_of,
    parse_scalar,
    read_csv,
    solve,
    write_csv,
)

small_q = st.fractions(min_value=-5, max_value=5, max_denominator=12)


def q_matrix(size):
    return st.lists(st.lists(small_q, min_size=size, max_size=size), min_size=size, max_size=size)


def to_obj(rows):
    return np.array([[mpq(v) for v in row] for row in rows], dtype=object)


@pytest.mark.parametrize("text,value", [("1/10", Fraction(1, 10)), ("0.1", Fraction(1, 10)),
                                        (0.1, Fraction(1, 10)), (3, Fraction(3)), (" 2/4 ", Fraction(1, 2))])
def test_as_fraction(text, value):
    assert as_fraction(text) == value


def test_as_fraction_rejects_bool_and_nan():
    with pytest.raises(TypeError):
        as_fraction(True)
    with pytest.raises(ValueError):
        as_fraction(float("nan"))


def test_mode_parse_and_tolerance():
    assert Mode.parse("rational").exact
    assert Mode.parse("float64").native
    m = Mode.parse("float", 200)
    assert m.bits == 200 and m.rel_tol == 2.0 ** -60
    assert Mode.floating(53).rel_tol == 2.0 ** -40
    with pytest.raises(ValueError):
        Mode.parse("decimal")
    with pytest.raises(ValueError):
        Mode.floating(10)


def test_precision_env(monkeypatch):
    monkeypatch.setenv("WFDUAL_PRECISION", "96")
    assert Mode.floating().bits == 96


def test_mode_context_sets_precision():
    m = Mode.floating(200)
    with m.context():
        x = m(Fraction(1, 3))
    assert x.precision == 200
    assert mode_of(np.array([x], dtype=object)) == m


@given(q_matrix(3), q_matrix(3))
def test_matmul_exact(a, b):
    a, b = to_obj(a), to_obj(b)
    naive = np.array([[sum((a[i, k] * b[k, j] for k in range(3)), mpq(0)) for j in range(3)]
                      for i in range(3)], dtype=object)
    assert (matmul(a, b) == naive).all()


def test_matrix_power_matches_repeated_product():
    a = to_obj([[Fraction(1, 2), Fraction(1, 2)], [Fraction(1, 3), Fraction(2, 3)]])
    expect = matmul(matmul(a, a), a)
    assert (matrix_power(a, 3) == expect).all()


@given(q_matrix(4), st.lists(small_q, min_size=4, max_size=4))
def test_solve_rational_is_exact(rows, rhs):
    a = to_obj(rows)
    if determinant(a) == 0:
        return
    b = np.array([mpq(v) for v in rhs], dtype=object)
    x = solve(a, b, RATIONAL)
    assert all(v == 0 for v in a.dot(x) - b)


def test_determinant_against_laplace():
    rows = [[Fraction(2), Fraction(-1, 3), Fraction(1)], [Fraction(0), Fraction(5, 2), Fraction(1, 7)],
            [Fraction(-4), Fraction(1), Fraction(3)]]
    (a, b, c), (d, e, f), (g, h, i) = rows
    laplace = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    assert determinant(to_obj(rows)) == mpq(laplace)


def test_solve_native_singular_raises():
    with pytest.raises(SingularSystemError):
        solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))


def test_solve_mpfr_matches_rational():
    rows = [[Fraction(3), Fraction(1), Fraction(-1)], [Fraction(1, 2), Fraction(4), Fraction(1)],
            [Fraction(1), Fraction(1, 3), Fraction(5)]]
    b = [Fraction(1), Fraction(2), Fraction(3)]
    exact = solve(to_obj(rows), np.array([mpq(v) for v in b], dtype=object), RATIONAL)
    m = Mode.floating(160)
    approx = solve(m.asarray(rows), m.asarray(b), m)
    with m.context():
        assert max(abs(x - y) for x, y in zip(approx, exact)) < mpfr(2) ** -150


@pytest.mark.parametrize("value", [mpq(1, 3), mpq(-7, 2), mpq(0)])
def test_format_rational(value):
    assert parse_scalar(format_scalar(value), RATIONAL) == value


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_format_float_round_trip(x):
    assert float(format_scalar(x)) == x


def test_format_mpfr_shortest_round_trip():
    m = Mode.floating(128)
    with m.context():
        x = m(Fraction(1, 3))
        text = format_scalar(x)
        assert mpfr(text, 128) == x
        assert mpfr(text[:-1], 128) != x


def test_csv_round_trip(tmp_path):
    a = to_obj([[Fraction(1, 3), Fraction(2, 7)], [Fraction(-1), Fraction(0)]])
    write_csv(tmp_path / "a.csv", a)
    assert (read_csv(tmp_path / "a.csv", RATIONAL) == a).all()
    assert (tmp_path / "a.csv").read_text() == "1/3,2/7\n-1,0\n"
