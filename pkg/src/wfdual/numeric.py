"""Arithmetic modes and the small amount of dense linear algebra the package needs.

Two scalar regimes are supported:

* ``rational`` -- exact ``gmpy2.mpq`` arithmetic;
* ``float`` -- ``gmpy2.mpfr`` with a configurable significand (128 bits by
  default, overridable through the ``WFDUAL_PRECISION`` environment variable).
  A 53-bit float mode is mapped onto native numpy ``float64`` arrays.

Matrices are numpy arrays: ``dtype=object`` holding gmpy2 scalars, or
``float64`` in the native mode.
"""
from __future__ import annotations

import math
import os
from contextlib import nullcontext
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce

import gmpy2
import numpy as np
from gmpy2 import mpfr, mpq, mpz

PRECISION_ENV = "WFDUAL_PRECISION"
DEFAULT_BITS = 128
NATIVE_BITS = 53


class ModeError(ValueError):
    """A computation was requested in a mode that cannot represent it."""


class SingularSystemError(ArithmeticError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


def default_bits() -> int:
    return int(os.environ.get(PRECISION_ENV, DEFAULT_BITS))


def as_fraction(value) -> Fraction:
    """Exact conversion of user-facing scalars.

    Strings may be decimals (``"0.1"``) or ratios (``"1/10"``); floats are read
    through their shortest repr, so ``0.1`` means one tenth.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("boolean is not a scalar")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite scalar {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    if type(value) is type(mpq()):
        return Fraction(int(value.numerator), int(value.denominator))
    if type(value) is type(mpz()):
        return Fraction(int(value))
    raise TypeError(f"cannot read {value!r} as an exact scalar")


@dataclass(frozen=True)
class Mode:
    kind: str = "rational"
    bits: int | None = None

    def __post_init__(self):
        if self.kind not in ("rational", "float"):
            raise ValueError(f"unknown arithmetic mode {self.kind!r}")
        if self.kind == "rational":
            object.__setattr__(self, "bits", None)
        else:
            bits = default_bits() if self.bits is None else int(self.bits)
            if bits < 24:
                raise ValueError("float mode needs at least 24 significand bits")
            object.__setattr__(self, "bits", bits)

    @classmethod
    def rational(cls) -> "Mode":
        return cls("rational")

    @classmethod
    def floating(cls, bits: int | None = None) -> "Mode":
        return cls("float", bits)

    @classmethod
    def parse(cls, name: str, bits: int | None = None) -> "Mode":
        if name in ("rational", "exact"):
            return cls.rational()
        if name in ("float", "mpfr"):
            return cls.floating(bits)
        if name == "float64":
            return cls.floating(NATIVE_BITS)
        raise ValueError(f"unknown mode {name!r}")

    def __str__(self):
        return "rational" if self.exact else f"float{self.bits}"

    @property
    def exact(self) -> bool:
        return self.kind == "rational"

    @property
    def native(self) -> bool:
        return self.kind == "float" and self.bits == NATIVE_BITS

    @property
    def dtype(self):
        return np.float64 if self.native else object

    def with_bits(self, bits: int) -> "Mode":
        if self.exact:
            return self
        return Mode("float", bits)

    def context(self):
        """Context manager fixing the working precision of mpfr arithmetic."""
        if self.kind == "float" and not self.native:
            return gmpy2.context(gmpy2.get_context(), precision=self.bits)
        return nullcontext()

    # -- scalars ---------------------------------------------------------
    def __call__(self, value):
        if self.exact:
            if isinstance(value, Fraction):
                return mpq(value.numerator, value.denominator)
            if isinstance(value, str):
                return mpq(as_fraction(value))
            if type(value) is type(mpfr()):
                raise ModeError("refusing to convert a rounded float to rational mode")
            return mpq(value)
        if self.native:
            return float(value)
        if isinstance(value, Fraction):
            value = mpq(value.numerator, value.denominator)
        elif isinstance(value, str):
            return mpfr(value, self.bits)
        return mpfr(value, self.bits)

    def exp(self, x):
        if self.exact:
            raise ModeError("exp is not available in rational mode")
        if self.native:
            return math.exp(x)
        return gmpy2.exp(x)

    def expm1(self, x):
        if self.exact:
            raise ModeError("exp is not available in rational mode")
        if self.native:
            return math.expm1(x)
        return gmpy2.expm1(x)

    def power(self, x, exponent: Fraction):
        """``x ** exponent`` for a non-negative base; integer exponents stay exact."""
        if exponent.denominator == 1:
            return x ** int(exponent)
        if self.exact:
            raise ModeError(f"x**{exponent} is irrational in general; use float mode")
        if self.native:
            return float(x) ** float(exponent)
        return x ** self(exponent)

    @property
    def rel_tol(self):
        """Relative slack used for sign decisions on rounded quantities."""
        if self.exact:
            return 0
        return 2.0 ** -min(60, self.bits - 13)

    # -- arrays ----------------------------------------------------------
    def zeros(self, shape):
        if self.native:
            return np.zeros(shape)
        out = np.empty(shape, dtype=object)
        out.fill(self(0))
        return out

    def identity(self, size):
        out = self.zeros((size, size))
        for i in range(size):
            out[i, i] = self(1)
        return out

    def asarray(self, values):
        """Convert a nested sequence / array elementwise into this mode."""
        arr = np.asarray(values, dtype=object)
        if self.native:
            return np.vectorize(float, otypes=[np.float64])(arr) if arr.size else arr.astype(float)
        with self.context():
            flat = [self(v) for v in arr.ravel()]
        out = np.empty(arr.shape, dtype=object)
        out.ravel()[:] = flat
        return out


RATIONAL = Mode.rational()


def mode_of(arr) -> Mode:
    """Infer the mode of an array built by this package."""
    arr = np.asarray(arr)
    if arr.dtype != object:
        return Mode.floating(NATIVE_BITS)
    for v in arr.ravel():
        if type(v) is type(mpfr()):
            return Mode.floating(v.precision)
        if type(v) in (type(mpq()), type(mpz()), int, Fraction):
            continue
    return RATIONAL


def to_float64(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype == object:
        return np.vectorize(float, otypes=[np.float64])(arr) if arr.size else arr.astype(float)
    return arr.astype(np.float64)


def max_abs(arr):
    arr = np.asarray(arr)
    if arr.size == 0:
        return 0
    if arr.dtype != object:
        return float(np.max(np.abs(arr)))
    return max(abs(v) for v in arr.ravel())


def is_rational_array(arr) -> bool:
    arr = np.asarray(arr)
    return arr.dtype == object and all(type(v) in (type(mpq()), type(mpz())) for v in arr.ravel())


# -- exact products -------------------------------------------------------
def _lcm_of_denominators(values):
    return reduce(gmpy2.lcm, (mpq(v).denominator for v in values), mpz(1))


def matmul(a, b):
    """Matrix product; exact rational operands go through integer scaling.

    Each row of ``a`` and each column of ``b`` is brought to a common
    denominator so the inner products run on big integers without gcds.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if not (is_rational_array(a) and is_rational_array(b)):
        return a @ b
    vec = b.ndim == 1
    if vec:
        b = b.reshape(-1, 1)
    row_den = [_lcm_of_denominators(row) for row in a]
    col_den = [_lcm_of_denominators(col) for col in b.T]
    ai = np.empty(a.shape, dtype=object)
    for i, row in enumerate(a):
        d = row_den[i]
        ai[i] = [(mpq(v) * d).numerator for v in row]
    bi = np.empty(b.shape, dtype=object)
    for j, col in enumerate(b.T):
        d = col_den[j]
        bi[:, j] = [(mpq(v) * d).numerator for v in col]
    prod = ai @ bi
    out = np.empty(prod.shape, dtype=object)
    for i in range(prod.shape[0]):
        for j in range(prod.shape[1]):
            out[i, j] = mpq(prod[i, j], row_den[i] * col_den[j])
    return out[:, 0] if vec else out


def matrix_power(a, r: int):
    a = np.asarray(a)
    result = None
    base = a
    while r > 0:
        if r & 1:
            result = base if result is None else matmul(result, base)
        r >>= 1
        if r:
            base = matmul(base, base)
    if result is None:
        result = np.empty(a.shape, dtype=a.dtype)
        mode = mode_of(a)
        result[...] = mode.identity(a.shape[0]) if a.dtype == object else np.eye(a.shape[0])
    return result


# -- linear solves -----------------------------------------------------------
def is_lower_triangular(a) -> bool:
    a = np.asarray(a)
    n = a.shape[0]
    return all(a[i, j] == 0 for i in range(n) for j in range(i + 1, n))


def _forward_substitution(a, b):
    n = len(b)
    x = [None] * n
    for i in range(n):
        if a[i, i] == 0:
            raise SingularSystemError("zero pivot in triangular system")
        acc = b[i]
        for j in range(i):
            if a[i, j] != 0:
                acc -= a[i, j] * x[j]
        x[i] = acc / a[i, i]
    return x


def _solve_bareiss(a, b):
    """Fraction-free (Bareiss) elimination after clearing row denominators."""
    n = len(b)
    m = np.empty((n, n + 1), dtype=object)
    for i in range(n):
        row = [mpq(v) for v in a[i]] + [mpq(b[i])]
        d = _lcm_of_denominators(row)
        m[i] = [(v * d).numerator for v in row]
    prev = mpz(1)
    for k in range(n):
        nz = [r for r in range(k, n) if m[r, k] != 0]
        if not nz:
            raise SingularSystemError("matrix is singular", condition=math.inf)
        piv = nz[0]
        if piv != k:
            m[[k, piv]] = m[[piv, k]]
        if k + 1 < n:
            sub = m[k + 1:, k + 1:] * m[k, k] - np.outer(m[k + 1:, k], m[k, k + 1:])
            m[k + 1:, k + 1:] = sub // prev
            m[k + 1:, k] = mpz(0)
        prev = m[k, k]
    x = [None] * n
    for i in range(n - 1, -1, -1):
        acc = mpq(m[i, n])
        for j in range(i + 1, n):
            if m[i, j] != 0:
                acc -= m[i, j] * x[j]
        x[i] = acc / m[i, i]
    return x


def _solve_pivoting(a, b):
    n = len(b)
    m = np.empty((n, n + 1), dtype=object)
    m[:, :n] = a
    m[:, n] = b
    for k in range(n):
        piv = max(range(k, n), key=lambda r: abs(m[r, k]))
        if m[piv, k] == 0:
            raise SingularSystemError("matrix is singular to working precision", condition=math.inf)
        if piv != k:
            m[[k, piv]] = m[[piv, k]]
        if k + 1 < n:
            factors = m[k + 1:, k] / m[k, k]
            m[k + 1:, k:] -= np.outer(factors, m[k, k:])
    x = [None] * n
    for i in range(n - 1, -1, -1):
        acc = m[i, n]
        if i + 1 < n:
            acc -= np.dot(m[i, i + 1:n], np.array(x[i + 1:], dtype=object))
        x[i] = acc / m[i, i]
    return x


def solve(a, b, mode: Mode | None = None):
    """Solve ``a x = b`` exactly (rational) or by partial pivoting (float)."""
    a = np.asarray(a)
    b = np.asarray(b)
    mode = mode or mode_of(a)
    n = a.shape[0]
    if n == 0:
        return mode.zeros(0)
    if mode.native:
        a = to_float64(a)
        try:
            x = np.linalg.solve(a, to_float64(b))
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(str(exc), condition=math.inf) from exc
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > 1e15:
            raise SingularSystemError("matrix is numerically singular", condition=cond)
        return x
    with mode.context():
        a = mode.asarray(a)
        b = mode.asarray(b)
        if is_lower_triangular(a):
            x = _forward_substitution(a, b)
        elif mode.exact:
            x = _solve_bareiss(a, b)
        else:
            x = _solve_pivoting(a, b)
    out = np.empty(n, dtype=object)
    out[:] = x
    return out


def determinant(a):
    """Exact determinant of a rational matrix (Bareiss)."""
    a = np.asarray(a)
    n = a.shape[0]
    if n == 0:
        return mpq(1)
    dens = [_lcm_of_denominators(row) for row in a]
    m = np.empty((n, n), dtype=object)
    for i in range(n):
        m[i] = [(mpq(v) * dens[i]).numerator for v in a[i]]
    sign = 1
    prev = mpz(1)
    for k in range(n - 1):
        nz = [r for r in range(k, n) if m[r, k] != 0]
        if not nz:
            return mpq(0)
        if nz[0] != k:
            m[[k, nz[0]]] = m[[nz[0], k]]
            sign = -sign
        m[k + 1:, k + 1:] = (m[k + 1:, k + 1:] * m[k, k] - np.outer(m[k + 1:, k], m[k, k + 1:])) // prev
        m[k + 1:, k] = mpz(0)
        prev = m[k, k]
    scale = reduce(lambda x, y: x * y, dens, mpz(1))
    return mpq(sign * m[n - 1, n - 1], scale)


# -- text formats ------------------------------------------------------------
def format_scalar(x) -> str:
    """Exact ``p/q`` for rationals; shortest round-trip decimal for floats."""
    if type(x) in (type(mpq()), type(mpz()), int, Fraction):
        return str(mpq(x))
    if type(x) is type(mpfr()):
        prec = x.precision
        if not gmpy2.is_finite(x):
            return str(x)
        lo, hi = 1, int(prec * 0.30103) + 3
        while lo < hi:
            mid = (lo + hi) // 2
            if mpfr(format(x, f".{mid}g"), prec) == x:
                hi = mid
            else:
                lo = mid + 1
        return format(x, f".{lo}g")
    return repr(float(x))


def parse_scalar(text: str, mode: Mode):
    text = text.strip()
    if mode.exact:
        return mpq(as_fraction(text))
    with mode.context():
        return mode(text)


def matrix_to_rows(arr) -> list[list[str]]:
    arr = np.asarray(arr)
    if arr.ndim == 1:
        return [[format_scalar(v) for v in arr]]
    return [[format_scalar(v) for v in row] for row in arr]


def write_csv(path, arr) -> None:
    with open(path, "w", newline="") as fh:
        for row in matrix_to_rows(arr):
            fh.write(",".join(row) + "\n")


def read_csv(path, mode: Mode) -> np.ndarray:
    with open(path) as fh:
        rows = [line.strip().split(",") for line in fh if line.strip()]
    out = np.empty((len(rows), len(rows[0])), dtype=object)
    for i, row in enumerate(rows):
        out[i] = [parse_scalar(v, mode) for v in row]
    return to_float64(out) if mode.native else out
