"""Duality kernels, backward differences and Stirling-type numbers.

Two hypergeometric kernels on ``{0, ..., n}`` are provided::

    phi1[m, k] = C(m, k) / C(n, k)
    phi2[m, k] = C(n - m, k) / C(n, k)

together with their inverses, which are built from closed forms and never by
numerical inversion.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import gmpy2
import numpy as np
from gmpy2 import mpq, mpz

from .numeric import RATIONAL, Mode, is_rational_array, matmul, matrix_to_rows, write_csv

MAX_N = 512
VARIANTS = ("phi1", "phi2")


def binom(n: int, k: int) -> mpz:
    """Exact binomial coefficient, zero outside ``0 <= k <= n``."""
    if n > MAX_N:
        raise OverflowError(f"population size {n} exceeds the supported maximum {MAX_N}")
    if k < 0 or n < 0 or k > n:
        return mpz(0)
    return _binom(n, k)


@lru_cache(maxsize=None)
def _binom(n, k):
    return mpz(math.comb(n, k))


def falling(n: int, j: int) -> mpz:
    """Falling factorial ``(n)_j``."""
    out = mpz(1)
    for t in range(j):
        out *= n - t
    return out


def rising(x, j: int):
    """Rising factorial ``[x]_j = x (x+1) ... (x+j-1)`` for any scalar ``x``."""
    out = x * 0 + 1
    for t in range(j):
        out = out * (x + t)
    return out


# -- kernels -----------------------------------------------------------------
@dataclass(frozen=True)
class DualityKernel:
    n: int
    variant: str
    matrix: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)

    def in_mode(self, mode: Mode) -> "DualityKernel":
        """Kernel with entries converted to ``mode`` (exact entries are rational)."""
        if mode.exact:
            return self
        return DualityKernel(self.n, self.variant, mode.asarray(self.matrix), mode.asarray(self.inverse))

    def identity_residual(self):
        prod = matmul(self.matrix, self.inverse)
        eye = RATIONAL.identity(self.n + 1)
        return max(abs(v) for v in (prod - eye).ravel())

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "variant": self.variant,
            "matrix": matrix_to_rows(self.matrix),
            "inverse": matrix_to_rows(self.inverse),
        })

    def to_csv(self, path, which: str = "matrix") -> None:
        write_csv(path, self.matrix if which == "matrix" else self.inverse)


def phi_entry(n: int, m: int, k: int, variant: str = "phi2") -> mpq:
    if variant == "phi2":
        return mpq(binom(n - m, k), binom(n, k))
    if variant == "phi1":
        return mpq(binom(m, k), binom(n, k))
    raise ValueError(f"unknown kernel variant {variant!r}")


def phi_inverse_entry(n: int, i: int, j: int, variant: str = "phi2") -> mpq:
    if variant == "phi2":
        sign = -1 if (i + j - n) % 2 else 1
        return mpq(sign * binom(i, n - j) * binom(n, i))
    if variant == "phi1":
        sign = -1 if (i - j) % 2 else 1
        return mpq(sign * binom(i, j) * binom(n, i))
    raise ValueError(f"unknown kernel variant {variant!r}")


def build_kernel(n: int, variant: str = "phi2", check: bool | None = None) -> DualityKernel:
    """Kernel and closed-form inverse on ``{0..n}``.

    The product with the inverse is checked against the identity for
    ``n <= 64`` unless ``check`` says otherwise.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if variant not in VARIANTS:
        raise ValueError(f"unknown kernel variant {variant!r}")
    if n > MAX_N:
        raise OverflowError(f"population size {n} exceeds the supported maximum {MAX_N}")
    size = n + 1
    mat = np.empty((size, size), dtype=object)
    inv = np.empty((size, size), dtype=object)
    for a in range(size):
        for b in range(size):
            mat[a, b] = phi_entry(n, a, b, variant)
            inv[a, b] = phi_inverse_entry(n, a, b, variant)
    kernel = DualityKernel(n, variant, mat, inv)
    if check is None:
        check = n <= 64
    if check and kernel.identity_residual() != 0:
        raise ArithmeticError(f"closed-form inverse of {variant} failed at n={n}")
    return kernel


# -- backward differences ----------------------------------------------------
def _integer_scaled(values):
    """Return (integers, denominator) when every value is rational."""
    arr = np.asarray(values, dtype=object)
    if not is_rational_array(arr):
        return None
    den = mpz(1)
    for v in arr:
        den = gmpy2.lcm(den, mpq(v).denominator)
    ints = [(mpq(v) * den).numerator for v in arr]
    return ints, den


def backward_difference_table(values) -> np.ndarray:
    """Table ``D[m, j] = nabla^j v(m)`` for ``j <= m`` (zeros above the diagonal).

    ``nabla v(m) = v(m) - v(m-1)``.  Exact inputs are differenced as integers
    after clearing their common denominator.
    """
    values = list(values)
    size = len(values)
    scaled = _integer_scaled(values)
    if scaled is not None:
        work, den = scaled
        zero = mpz(0)
    else:
        work, den = values, None
        zero = values[0] * 0 if size else 0
    table = np.empty((size, size), dtype=object)
    table.fill(zero)
    col = list(work)
    for j in range(size):
        for m in range(j, size):
            table[m, j] = col[m]
        col = [zero] * (j + 1) + [col[m] - col[m - 1] for m in range(j + 1, size)]
    if den is not None:
        for m in range(size):
            for j in range(size):
                table[m, j] = mpq(table[m, j], den)
    elif np.asarray(values).dtype != object:
        table = table.astype(np.float64)
    return table


def endpoint_differences(values) -> list:
    """``nabla^j v(n)`` for ``j = 0..n``, by the difference triangle."""
    values = list(values)
    size = len(values)
    scaled = _integer_scaled(values)
    work = scaled[0] if scaled is not None else values
    out = []
    col = list(work)
    for j in range(size):
        out.append(col[-1])
        col = [col[m] - col[m - 1] for m in range(1, len(col))]
    if scaled is not None:
        den = scaled[1]
        out = [mpq(v, den) for v in out]
    return out


def alternating_endpoint_differences(values) -> list:
    """``sum_l (-1)^(j-l) C(j, l) v(n-l)`` for ``j = 0..n``.

    This alternating form equals ``(-1)^j nabla^j v(n)``.
    """
    values = list(values)
    n = len(values) - 1
    scaled = _integer_scaled(values)
    work = scaled[0] if scaled is not None else values
    out = []
    for j in range(n + 1):
        acc = work[0] * 0
        for l in range(j + 1):
            term = binom(j, l) * work[n - l]
            acc = acc + term if (j - l) % 2 == 0 else acc - term
        out.append(acc)
    if scaled is not None:
        out = [mpq(v, scaled[1]) for v in out]
    return out


def endpoint_magnitudes(values) -> list:
    """``sum_l C(j, l) |v(n-l)|``: a scale for rounding error in the alternating sums."""
    vals = [abs(v) for v in values]
    out = []
    col = list(vals)
    for j in range(len(vals)):
        out.append(col[-1])
        col = [col[m] + col[m - 1] for m in range(1, len(col))]
    return out


# -- Stirling numbers ----------------------------------------------------------
@lru_cache(maxsize=None)
def _stirling_row(i: int) -> tuple:
    if i == 0:
        return (mpz(1),)
    prev = _stirling_row(i - 1) + (mpz(0),)
    row = [mpz(0)] * (i + 1)
    for j in range(1, i + 1):
        row[j] = j * prev[j] + prev[j - 1]
    return tuple(row)


def stirling_second(i: int, j: int) -> mpz:
    """Second-kind Stirling number ``S(i, j)``."""
    if i < 0 or j < 0:
        raise ValueError("Stirling indices must be non-negative")
    if j > i:
        return mpz(0)
    return _stirling_row(i)[j]


def bell(m: int) -> mpz:
    return sum(_stirling_row(m), mpz(0))


def _generalized_rows(i_max: int, a, b) -> list:
    # (a + b x)^i = sum_j T[i][j] (x)_j, (x)_j the falling factorial
    rows = [[a * 0 + 1]]
    for i in range(i_max):
        prev = rows[-1] + [a * 0]
        row = [(a + b * j) * prev[j] + (b * prev[j - 1] if j else 0) for j in range(i + 2)]
        rows.append(row)
    return rows


def stirling_generalized(i: int, j: int, mu2, ratio, n: int):
    """Generalized Stirling number for the mutation dual.

    Defined by ``(n)_j n^{-i} S = C(n, j) sum_l (-1)^{j-l} C(j, l) (mu2 + kappa l / n)^i``
    with ``ratio = kappa / n``.  For ``mu2 = 0`` and ``ratio = 1/n`` this is the
    classical ``S(i, j)``.
    """
    if j > i:
        return mpz(0)
    if isinstance(mu2, (int, Fraction)):
        mu2 = mpq(mu2)
    if isinstance(ratio, (int, Fraction)):
        ratio = mpq(ratio)
    return _generalized_rows(i, n * mu2, n * ratio)[i][j]


@dataclass(frozen=True)
class StirlingTable:
    n_max: int
    second: np.ndarray = field(repr=False)
    generalized: np.ndarray | None = field(default=None, repr=False)
    mu2: object = None
    kappa: object = None
    n: int | None = None

    @classmethod
    def build(cls, n_max: int, mu2=None, kappa=None, n: int | None = None) -> "StirlingTable":
        size = n_max + 1
        second = np.empty((size, size), dtype=object)
        second.fill(mpz(0))
        for i in range(size):
            for j in range(i + 1):
                second[i, j] = stirling_second(i, j)
        gen = None
        if mu2 is not None:
            if kappa is None or n is None:
                raise ValueError("generalized table needs mu2, kappa and n")
            mu2q, kq = mpq(mu2), mpq(kappa)
            rows = _generalized_rows(n_max, n * mu2q, kq)
            gen = np.empty((size, size), dtype=object)
            gen.fill(mpq(0))
            for i in range(size):
                for j in range(i + 1):
                    gen[i, j] = mpq(rows[i][j])
        return cls(n_max, second, gen, mu2, kappa, n)

    def bell(self, m: int):
        return sum(self.second[m, : m + 1], mpz(0))
