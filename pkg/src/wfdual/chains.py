"""Forward Wright-Fisher matrices and their backward (ancestral) duals.

The forward chain on ``{0..n}`` resamples binomially with success probability
``p(k/n)``.  When ``q = 1 - p`` is completely monotone the backward matrix::

    P[i, j] = C(n, j) * sum_l (-1)^(j-l) C(j, l) q(1 - l/n)^i

is non-negative, has row sums ``q(0)^i`` and satisfies ``Pi Phi = Phi P^T``
with the kernel ``Phi[m, k] = C(n-m, k) / C(n, k)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from gmpy2 import mpq

from .bias import BiasMechanism, default_mode, mechanism_to_config
from .kernels import (
    DualityKernel,
    _generalized_rows,
    alternating_endpoint_differences,
    binom,
    endpoint_differences,
    endpoint_magnitudes,
    falling,
    stirling_second,
)
from .numeric import (
    RATIONAL,
    Mode,
    format_scalar,
    matmul,
    matrix_power,
    matrix_to_rows,
    max_abs,
    mode_of,
    to_float64,
    write_csv,
)

FORWARD = "forward"
BACKWARD = "backward"


class InadmissibleError(ValueError):
    """The mechanism has no non-negative dual at the requested resolution."""


class CMViolation(InadmissibleError):
    def __init__(self, i: int, j: int, value, tol=0):
        super().__init__(f"dual entry P[{i},{j}] = {format_scalar(value)} is negative (tol {tol})")
        self.i, self.j, self.value, self.tol = i, j, value, tol


@dataclass(frozen=True)
class TransitionMatrix:
    n: int
    entries: np.ndarray = field(repr=False)
    direction: str
    mode: Mode
    deficit: np.ndarray | None = field(default=None, repr=False)
    provenance: dict = field(default_factory=dict)
    clamped: tuple = ()

    def __post_init__(self):
        if self.entries.shape != (self.n + 1, self.n + 1):
            raise ValueError(f"expected a {(self.n + 1,) * 2} matrix, got {self.entries.shape}")
        self.entries.setflags(write=False)

    @property
    def stochastic(self) -> bool:
        return self.deficit is None or all(d == 0 for d in self.deficit)

    @property
    def size(self) -> int:
        return self.n + 1

    def row_sums(self):
        if self.entries.dtype != object:
            return self.entries.sum(axis=1)
        with self.mode.context():
            return np.array([sum(row, self.mode(0)) for row in self.entries], dtype=object)

    def power(self, r: int) -> np.ndarray:
        if self.entries.dtype != object:
            return np.linalg.matrix_power(self.entries, r)
        with self.mode.context():
            return matrix_power(self.entries, r)

    def as_float64(self) -> np.ndarray:
        return to_float64(self.entries)

    def to_csv(self, path) -> None:
        write_csv(path, self.entries)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "direction": self.direction, "mode": str(self.mode),
                           "entries": matrix_to_rows(self.entries),
                           "deficit": None if self.deficit is None else matrix_to_rows(self.deficit)[0]})

    def manifest(self, residuals: dict | None = None) -> dict:
        return {
            "n": self.n,
            "direction": self.direction,
            "mode": str(self.mode),
            "stochasticity": "stochastic" if self.stochastic else "sub-stochastic",
            "deficit": None if self.deficit is None else matrix_to_rows(self.deficit)[0],
            "provenance": self.provenance,
            "clamped_entries": [[i, j, format_scalar(v)] for i, j, v in self.clamped],
            "residuals": residuals or {},
        }


def _grid(n, mode):
    return [mode(Fraction(m, n)) for m in range(n + 1)]


def _provenance(mech, method=None):
    out = {"mechanism": mechanism_to_config(mech)} if isinstance(mech, BiasMechanism) else {"source": str(mech)}
    if method:
        out["method"] = method
    return out


def forward_matrix(mech: BiasMechanism, n: int, mode: Mode | None = None) -> TransitionMatrix:
    """``Pi[k, k'] = C(n, k') p(k/n)^k' q(k/n)^(n-k')``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    mode = mode or default_mode(mech)
    out = mode.zeros((n + 1, n + 1))
    with mode.context():
        coef = [mode(int(binom(n, j))) for j in range(n + 1)]
        for k, x in enumerate(_grid(n, mode)):
            p, q = mech.p(x, mode), mech.q(x, mode)
            if p < 0 or q < 0:
                raise ArithmeticError(f"p({k}/{n}) = {p} outside [0, 1]")
            pp = [mode(1)]
            qq = [mode(1)]
            for _ in range(n):
                pp.append(pp[-1] * p)
                qq.append(qq[-1] * q)
            for j in range(n + 1):
                out[k, j] = coef[j] * pp[j] * qq[n - j]
    return TransitionMatrix(n, out, FORWARD, mode, None, _provenance(mech))


def dual_entries(mech: BiasMechanism, n: int, mode: Mode | None = None, method: str = "triangle",
                 magnitudes: bool = False):
    """Signed backward-matrix formula, without any sign check.

    ``method`` selects the difference triangle or the raw alternating sum;
    both give identical exact results.  With ``magnitudes=True`` also returns
    the entrywise scale ``C(n,j) sum_l C(j,l) |q(1-l/n)^i|``.
    """
    if method not in ("triangle", "alternating"):
        raise ValueError(f"unknown method {method!r}")
    mode = mode or default_mode(mech)
    size = n + 1
    out = mode.zeros((size, size))
    mags = mode.zeros((size, size)) if magnitudes else None
    with mode.context():
        qs = [mech.q(x, mode) for x in _grid(n, mode)]
        coef = [mode(int(binom(n, j))) for j in range(size)]
        vals = [mode(1)] * size
        for i in range(size):
            if i:
                vals = [v * q for v, q in zip(vals, qs)]
            if method == "triangle":
                diffs = [d if j % 2 == 0 else -d for j, d in enumerate(endpoint_differences(vals))]
            else:
                diffs = alternating_endpoint_differences(vals)
            for j in range(size):
                out[i, j] = coef[j] * diffs[j]
            if magnitudes:
                for j, m in enumerate(endpoint_magnitudes(vals)):
                    mags[i, j] = coef[j] * m
    if mode.native:
        out = to_float64(out)
        mags = to_float64(mags) if magnitudes else None
    return (out, mags) if magnitudes else out


def _deficit(mech, n, mode):
    with mode.context():
        q0 = mech.q(mode(0), mode)
        if q0 == 1:
            return None
        return np.array([1 - q0 ** i for i in range(n + 1)], dtype=object if not mode.native else float)


def dual_matrix(mech: BiasMechanism, n: int, mode: Mode | None = None, tol=None,
                method: str = "triangle") -> TransitionMatrix:
    """Backward matrix; raises :class:`CMViolation` on a negative entry.

    In float modes entries in ``[-tol, 0)`` are rounding noise: they are set to
    zero and listed in ``clamped``.  The default ``tol`` is the mode's relative
    precision times the entry's absolute-sum scale.
    """
    mode = mode or default_mode(mech)
    signed, mags = dual_entries(mech, n, mode, method, magnitudes=True)
    entries = signed.copy()
    clamped = []
    for i in range(n + 1):
        for j in range(n + 1):
            v = entries[i, j]
            if v >= 0:
                continue
            t = 0 if mode.exact else (tol if tol is not None else mode.rel_tol * mags[i, j])
            if v < -t:
                raise CMViolation(i, j, v, t)
            clamped.append((i, j, v))
            entries[i, j] = mode(0) if not mode.native else 0.0
    return TransitionMatrix(n, entries, BACKWARD, mode, _deficit(mech, n, mode),
                            _provenance(mech, method), tuple(clamped))


def dual_matrix_neutral_closed_form(n: int, mode: Mode = RATIONAL) -> TransitionMatrix:
    """``P[i, j] = (n)_j n^-i S(i, j)`` for ``j <= i``."""
    out = RATIONAL.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(i + 1):
            out[i, j] = mpq(falling(n, j) * stirling_second(i, j), n ** i)
    return TransitionMatrix(n, _convert(out, mode), BACKWARD, mode, None,
                            {"mechanism": {"kind": "neutral"}, "method": "stirling"})


def dual_matrix_mutation_closed_form(mu1, mu2, n: int, mode: Mode = RATIONAL) -> TransitionMatrix:
    """Generalized-Stirling form of the mutation dual: lower triangular, rows sum to ``(1-mu1)^i``."""
    mu1q, mu2q = mpq(Fraction(mu1)), mpq(Fraction(mu2))
    kappa = 1 - mu1q - mu2q
    if kappa < 0:
        raise InadmissibleError(f"kappa = {kappa} < 0: q is increasing, not completely monotone")
    rows = _generalized_rows(n, n * mu2q, kappa)
    out = RATIONAL.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(i + 1):
            out[i, j] = falling(n, j) * mpq(rows[i][j]) / mpq(n) ** i
    deficit = None
    if mu1q != 0:
        deficit = _convert(np.array([1 - (1 - mu1q) ** i for i in range(n + 1)], dtype=object), mode)
    prov = {"mechanism": {"kind": "mutation", "mu1": str(mu1q), "mu2": str(mu2q)}, "method": "stirling"}
    return TransitionMatrix(n, _convert(out, mode), BACKWARD, mode, deficit, prov)


def _convert(arr, mode):
    if mode.exact:
        return arr
    if mode.native:
        return to_float64(arr)
    return mode.asarray(arr)


@dataclass(frozen=True)
class DualityResidual:
    n: int
    variant: str
    max_abs: object

    @property
    def exact_zero(self) -> bool:
        return self.max_abs == 0


def duality_defect(forward, backward, kernel: DualityKernel):
    """The matrix ``Pi Phi - Phi P^T``."""
    fw = forward.entries if isinstance(forward, TransitionMatrix) else np.asarray(forward)
    bw = backward.entries if isinstance(backward, TransitionMatrix) else np.asarray(backward)
    if not (fw.shape == bw.shape == kernel.matrix.shape):
        raise ValueError(f"dimension mismatch: {fw.shape}, {bw.shape}, {kernel.matrix.shape}")
    mode = mode_of(fw)
    if mode.native:
        phi = to_float64(kernel.matrix)
        return fw @ phi - phi @ bw.T
    phi = kernel.in_mode(mode).matrix
    with mode.context():
        return matmul(fw, phi) - matmul(phi, bw.T.copy())


def verify_duality(forward, backward, kernel: DualityKernel) -> DualityResidual:
    """Max-entry residual of ``Pi Phi - Phi P^T``; zero in exact arithmetic when duality holds."""
    return DualityResidual(kernel.n, kernel.variant, max_abs(duality_defect(forward, backward, kernel)))


def biased_reproduction_weights(mech: BiasMechanism, n: int, mode: Mode | None = None) -> list:
    """``pi_m = p(m/n) - p((m-1)/n)``, ``m = 1..n``; sums to ``p(1) - p(0)``."""
    mode = mode or default_mode(mech)
    with mode.context():
        ps = [mech.p(x, mode) for x in _grid(n, mode)]
        w = [ps[m] - ps[m - 1] for m in range(1, n + 1)]
    slack = 0 if mode.exact else 2.0 ** -40
    for m, v in enumerate(w, start=1):
        if v < -slack:
            raise ArithmeticError(f"negative reproduction weight at m={m}: p is not monotone")
    return w
