"""Limit laws and spectral structure of the forward and backward chains.

Covers stationary laws (power iteration checked against a direct solve),
hitting probabilities with coffin-state killing, the kernel bridge
``rho = Phi pi``, the Bernstein-form generating function of ``N_inf``, eigen
decompositions with eigenvector transport to the dual, the Galton-Watson
fixed point of the absorbing regime, and moment diagnostics for the
asymptotic-normality statements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
from gmpy2 import mpfr, mpq
from scipy.sparse.csgraph import connected_components

from .bias import BiasMechanism, Mutation, Quadratic, evaluate, slope_at_zero
from .chains import TransitionMatrix, forward_matrix
from .kernels import DualityKernel, binom, build_kernel
from .numeric import (
    RATIONAL,
    Mode,
    SingularSystemError,
    default_bits,
    determinant,
    is_lower_triangular,
    max_abs,
    mode_of,
    solve,
    to_float64,
)


class ReducibleChainError(ValueError):
    """The chain has more than one communicating class; use :func:`absorption`."""


class ConvergenceError(ArithmeticError):
    pass


def _entries(M):
    return M.entries if isinstance(M, TransitionMatrix) else np.asarray(M)


def _vec(v):
    if isinstance(v, (StationaryDistribution, AbsorptionVector)):
        return v.values
    return np.asarray(v, dtype=object) if not isinstance(v, np.ndarray) else v


# -- stationary laws ------------------------------------------------------------------
@dataclass(frozen=True)
class StationaryDistribution:
    n: int
    values: np.ndarray = field(repr=False)
    residual: object
    method: str
    iterations: int = 0
    crosscheck: object = None

    @property
    def probabilities(self):
        return self.values

    def mean(self):
        return sum((k * v for k, v in enumerate(self.values)), self.values[0] * 0)

    def variance(self):
        mu = self.mean()
        return sum(((k - mu) ** 2 * v for k, v in enumerate(self.values)), self.values[0] * 0)


def is_irreducible(M) -> bool:
    a = to_float64(_entries(M)) != 0
    count, _ = connected_components(a.astype(np.int8), directed=True, connection="strong")
    return count == 1


def _solve_stationary(a, mode: Mode):
    size = a.shape[0]
    with mode.context():
        sys_ = (mode.identity(size) - a).T.copy() if a.dtype == object else (np.eye(size) - a).T.copy()
        sys_[-1, :] = mode(1) if a.dtype == object else 1.0
        rhs = mode.zeros(size)
        rhs[-1] = mode(1)
        return solve(sys_, rhs, mode)


def _power_iteration(a, tol, max_iter):
    size = a.shape[0]
    if a.dtype != object:
        pi = np.full(size, 1.0 / size)
        for it in range(1, max_iter + 1):
            nxt = pi @ a
            nxt /= nxt.sum()
            if np.abs(nxt - pi).sum() < tol:
                return nxt, it
            pi = nxt
        raise ConvergenceError(f"power iteration did not reach {tol} in {max_iter} steps")
    mode = mode_of(a)
    with mode.context():
        pi = np.array([mode(Fraction(1, size))] * size, dtype=object)
        for it in range(1, max_iter + 1):
            nxt = pi.dot(a)
            nxt = nxt / sum(nxt)
            if sum(abs(x - y) for x, y in zip(nxt, pi)) < tol:
                return nxt, it
            pi = nxt
    raise ConvergenceError(f"power iteration did not reach {tol} in {max_iter} steps")


def stationary(M, method: str = "auto", tol: float = 1e-14, max_iter: int = 10 ** 6) -> StationaryDistribution:
    """Invariant law of an irreducible chain.

    ``method="power"`` iterates ``pi <- pi M`` until successive iterates are
    within ``tol`` in L1 and cross-checks against the direct solve;
    ``"solve"`` solves ``pi (I - M) = 0, sum(pi) = 1``.  ``"auto"`` solves in
    rational mode and iterates otherwise.  Exact matrices passed to the power
    method are iterated in float64.
    """
    a = _entries(M)
    n = a.shape[0] - 1
    if not is_irreducible(a):
        raise ReducibleChainError("chain is reducible (absorbing states present); use absorption()")
    mode = mode_of(a)
    if method == "auto":
        method = "solve" if mode.exact else "power"
    if method == "solve":
        pi = _solve_stationary(a, mode)
        iterations, cross = 0, None
    elif method == "power":
        work = to_float64(a) if mode.exact else a
        pi, iterations = _power_iteration(work, tol, max_iter)
        direct = _solve_stationary(work, mode_of(work))
        cross = max_abs(np.asarray(pi, dtype=object) - np.asarray(direct, dtype=object)) if work.dtype == object \
            else float(np.max(np.abs(pi - direct)))
        a = work
    else:
        raise ValueError(f"unknown method {method!r}")
    res = _left_residual(pi, a)
    return StationaryDistribution(n, pi, res, method, iterations, cross)


def _left_residual(pi, a):
    if a.dtype != object:
        return float(np.max(np.abs(pi @ a - pi)))
    mode = mode_of(a)
    with mode.context():
        return max_abs(np.asarray(pi, dtype=object).dot(a) - pi)


# -- absorption -----------------------------------------------------------------------
@dataclass(frozen=True)
class AbsorptionVector:
    n: int
    values: np.ndarray = field(repr=False)
    boundary: tuple = (0,)
    residual: object = 0
    method: str = "solve"


def absorbing_states(M) -> list:
    a = _entries(M)
    out = []
    for k in range(a.shape[0]):
        if a[k, k] == 1 and all(a[k, j] == 0 for j in range(a.shape[0]) if j != k):
            out.append(k)
    return out


def absorption(M, target=(0,)) -> AbsorptionVector:
    """Probability of reaching ``target`` before any other absorbing state.

    Row deficits of sub-stochastic matrices are mass sent to the coffin state,
    which counts as never reaching ``target``.
    """
    a = _entries(M)
    size = a.shape[0]
    target = tuple(sorted(set(target)))
    absorbing = absorbing_states(a)
    for t in target:
        if t not in absorbing:
            raise ValueError(f"state {t} is not absorbing")
    mode = mode_of(a)
    transient = [k for k in range(size) if k not in absorbing]
    out = mode.zeros(size)
    with mode.context():
        one = mode(1)
        for t in target:
            out[t] = one
        if transient:
            idx = np.array(transient)
            sub = a[np.ix_(idx, idx)]
            eye = mode.identity(len(idx))
            lhs = eye - sub
            rhs = mode.zeros(len(idx))
            for t in target:
                rhs = rhs + a[idx, t]
            x = solve(lhs, rhs, mode)
            for pos, k in enumerate(transient):
                out[k] = x[pos]
        if a.dtype != object:
            out = out.astype(np.float64)
            resid = float(np.max(np.abs((a @ out - out)[transient]))) if transient else 0.0
        else:
            full = a.dot(out) - out
            resid = max_abs(full[transient]) if transient else (0 if mode.exact else mode(0))
    n = size - 1
    return AbsorptionVector(n, out, target, resid)


# -- the kernel bridge -------------------------------------------------------------------
def _kernel_for(vec, kernel: DualityKernel):
    mode = mode_of(vec)
    if mode.native:
        return to_float64(kernel.matrix), to_float64(kernel.inverse), mode
    return kernel.in_mode(mode).matrix, kernel.in_mode(mode).inverse, mode


def duality_bridge(pi, kernel: DualityKernel) -> AbsorptionVector:
    """``rho = Phi pi``: the hitting vector of the dual from an invariant law."""
    v = _vec(pi)
    if len(v) != kernel.n + 1:
        raise ValueError("dimension mismatch")
    phi, _, mode = _kernel_for(v, kernel)
    with mode.context():
        rho = phi.dot(v)
    if mode.native:
        rho = rho.astype(np.float64)
    return AbsorptionVector(kernel.n, rho, (0,), 0, "bridge")


def inverse_bridge(rho, kernel: DualityKernel) -> StationaryDistribution:
    """``pi = Phi^-1 rho``."""
    v = _vec(rho)
    if len(v) != kernel.n + 1:
        raise ValueError("dimension mismatch")
    _, inv, mode = _kernel_for(v, kernel)
    with mode.context():
        pi = inv.dot(v)
    if mode.native:
        pi = pi.astype(np.float64)
    return StationaryDistribution(kernel.n, pi, None, "bridge")


def alternating_bridge(rho) -> np.ndarray:
    """``pi(i) = C(n,i) sum_j (-1)^(i-j) C(i,j) rho(n-j)``."""
    v = _vec(rho)
    n = len(v) - 1
    mode = mode_of(v)
    out = mode.zeros(n + 1)
    with mode.context():
        for i in range(n + 1):
            acc = v[0] * 0
            for j in range(i + 1):
                term = binom(i, j) * v[n - j]
                acc = acc + term if (i - j) % 2 == 0 else acc - term
            out[i] = binom(n, i) * acc
    return out


def pgf_from_absorption(rho, u):
    """``E u^N = sum_k C(n,k) rho(k) u^(n-k) (1-u)^k`` (Bernstein form)."""
    v = _vec(rho)
    n = len(v) - 1
    mode = mode_of(v)
    with mode.context():
        u = mode(Fraction(u)) if isinstance(u, (int, Fraction, str)) else u
        return sum((binom(n, k) * v[k] * u ** (n - k) * (1 - u) ** k for k in range(n + 1)), v[0] * 0)


def pgf_derivative(rho, u):
    """Derivative in ``u`` of :func:`pgf_from_absorption`; at ``u = 1`` it is the mean."""
    v = _vec(rho)
    n = len(v) - 1
    mode = mode_of(v)
    with mode.context():
        u = mode(Fraction(u)) if isinstance(u, (int, Fraction, str)) else u
        w = 1 - u
        total = v[0] * 0
        for k in range(n + 1):
            a, b = n - k, k
            d = 0
            if a:
                d = d + a * u ** (a - 1) * w ** b
            if b:
                d = d - b * u ** a * w ** (b - 1)
            total = total + binom(n, k) * v[k] * d
        return total


def factorial_moments_from_law(law) -> list:
    """``C(n,k)^-1 E C(n - N, k)`` for ``k = 0..n``."""
    v = _vec(law)
    n = len(v) - 1
    mode = mode_of(v)
    with mode.context():
        return [sum((binom(n - i, k) * v[i] for i in range(n + 1)), v[0] * 0) / binom(n, k)
                for k in range(n + 1)]


# -- spectral machinery -----------------------------------------------------------------
@dataclass
class SpectralResult:
    eigenvalues: list
    right: object = field(repr=False)
    left: object = field(repr=False)
    backend: str = "mpmath"
    bits: int = 53
    condition: float = 1.0

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self, r: int):
        """``sum_k lambda_k^r r_k l_k'`` with ``L = R^-1`` (so ``l_k' r_k = 1``)."""
        if self.backend == "numpy":
            lam = np.asarray(self.eigenvalues, dtype=complex) ** r
            return (self.right * lam) @ self.left
        with mpmath.workprec(self.bits):
            d = mpmath.diag([lam ** r for lam in self.eigenvalues])
            return self.right * d * self.left

    def eigen_residual(self, matrix) -> float:
        """``max |A R - R Lambda|``."""
        if self.backend == "numpy":
            a = to_float64(matrix)
            return float(np.max(np.abs(a @ self.right - self.right * np.asarray(self.eigenvalues))))
        with mpmath.workprec(self.bits):
            a = _to_mpmath(matrix)
            diff = a * self.right - self.right * mpmath.diag(self.eigenvalues)
            return _max_entry(diff)


def _max_entry(m) -> float:
    return float(max(abs(m[i, j]) for i in range(m.rows) for j in range(m.cols)))


def _to_mpmath(arr):
    arr = np.asarray(arr)
    out = mpmath.matrix(arr.shape[0], arr.shape[1])
    for i in range(arr.shape[0]):
        for j in range(arr.shape[1]):
            out[i, j] = _mpf(arr[i, j])
    return out


def _mpf(v):
    if type(v) is type(mpq()):
        return mpmath.mpf(int(v.numerator)) / int(v.denominator)
    if type(v) is type(mpfr()):
        return mpmath.mpf(v.as_integer_ratio()[0]) / v.as_integer_ratio()[1]
    return mpmath.mpmathify(v)


def matrix_max_diff(a, b) -> float:
    """Largest entrywise gap between two matrices of any supported type."""
    if isinstance(a, mpmath.matrix) or isinstance(b, mpmath.matrix):
        # exact operands are converted well above the precision being measured
        with mpmath.workprec(max(mpmath.mp.prec, 512)):
            a = a if isinstance(a, mpmath.matrix) else _to_mpmath(a)
            b = b if isinstance(b, mpmath.matrix) else _to_mpmath(b)
            return _max_entry(a - b)
    return float(np.max(np.abs(np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex))))


def spectral(M, bits: int | None = None) -> SpectralResult:
    """Eigen decomposition sorted by decreasing modulus.

    Float64 matrices use LAPACK; everything else runs in mpmath at ``bits``
    (default: the mode's precision, or the package default for exact input).
    The left eigenvectors are the rows of ``R^-1``, which keeps them
    biorthogonal even for repeated eigenvalues.
    """
    a = _entries(M)
    mode = mode_of(a)
    if bits is None:
        bits = 53 if mode.native else (mode.bits or default_bits())
    if bits == 53:
        w, r = np.linalg.eig(to_float64(a))
        order = sorted(range(len(w)), key=lambda k: (-abs(w[k]), -w[k].real))
        w = w[order]
        r = r[:, order]
        cond = float(np.linalg.cond(r))
        if not np.isfinite(cond) or cond > 1e14:
            raise ArithmeticError("eigenvector matrix is numerically singular (defective matrix?)")
        lam = [complex(x) if abs(x.imag) > 0 else float(x.real) for x in w]
        return SpectralResult(lam, r, np.linalg.inv(r), "numpy", 53, cond)
    with mpmath.workprec(bits):
        am = _to_mpmath(a)
        try:
            w, r = mpmath.eig(am)
        except Exception as exc:  # mpmath raises plain exceptions on non-convergence
            raise ArithmeticError(f"eigenvalue iteration failed: {exc}") from exc
        order = sorted(range(len(w)), key=lambda k: (-abs(w[k]), -mpmath.re(w[k])))
        w = [w[k] for k in order]
        rr = mpmath.matrix(r.rows, r.cols)
        for new, old in enumerate(order):
            for i in range(r.rows):
                rr[i, new] = r[i, old]
        tiny = mpmath.mpf(2) ** (-bits // 2)
        w = [mpmath.re(x) if abs(mpmath.im(x)) < tiny else x for x in w]
        left = rr ** -1
        cond = float(mpmath.mnorm(rr, 1) * mpmath.mnorm(left, 1))
    return SpectralResult(w, rr, left, "mpmath", bits, cond)


def dual_spectrum_transport(eig: SpectralResult, kernel) -> SpectralResult:
    """Eigenvectors of ``P^T = Phi^-1 Pi Phi`` from those of ``Pi``: ``R~ = Phi^-1 R``, ``L~ = L Phi``.

    ``kernel`` needs ``matrix`` and ``inverse`` attributes.
    """
    if eig.backend == "numpy":
        phi, inv = to_float64(kernel.matrix), to_float64(kernel.inverse)
        if phi.shape[0] != eig.size:
            raise ValueError("dimension mismatch")
        return SpectralResult(list(eig.eigenvalues), inv @ eig.right, eig.left @ phi, "numpy", 53,
                              eig.condition)
    with mpmath.workprec(eig.bits):
        phi, inv = _to_mpmath(kernel.matrix), _to_mpmath(kernel.inverse)
        if phi.rows != eig.size:
            raise ValueError("dimension mismatch")
        return SpectralResult(list(eig.eigenvalues), inv * eig.right, eig.left * phi, "mpmath",
                              eig.bits, eig.condition)


def is_triangular(M) -> bool:
    a = _entries(M)
    return is_lower_triangular(a) or is_lower_triangular(a.T)


def triangular_eigenvalues(M) -> list:
    a = _entries(M)
    if not is_triangular(a):
        raise ValueError("matrix is not triangular")
    return [a[i, i] for i in range(a.shape[0])]


def charpoly_at(M, z) -> mpq:
    """Exact ``det(z I - M)`` for a rational matrix."""
    a = _entries(M)
    zq = mpq(Fraction(z)) if not isinstance(z, type(mpq())) else z
    size = a.shape[0]
    m = RATIONAL.identity(size) * zq - a
    return determinant(m)


# -- Galton-Watson regime -----------------------------------------------------------------
def gw_fixed_point(lam, tol: float = 1e-17, max_iter: int = 10 ** 6, damping: float = 1.0,
                   mode: Mode | None = None):
    """Smallest root of ``x = exp(-lam (1 - x))`` as ``(rho, subcritical)``.

    The map is increasing and convex, so iterating from ``x = 0`` climbs
    monotonically to the smallest root; two Newton steps polish the result
    (Newton from the left of a root of a concave function does not overshoot).
    For ``lam <= 1`` returns ``(1, True)``.
    """
    mode = mode or Mode.floating(53)
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    with mode.context():
        lam = mode(lam if isinstance(lam, float) else Fraction(lam))
        if lam <= 1:
            return mode(1), True
        x = mode(0)
        for _ in range(max_iter):
            nxt = (1 - damping) * x + damping * mode.exp(-lam * (1 - x))
            if abs(nxt - x) < tol:
                x = nxt
                break
            x = nxt
        else:
            raise ConvergenceError("fixed-point iteration did not converge")
        for _ in range(2):
            e = mode.exp(-lam * (1 - x))
            step = (x - e) / (1 - lam * e)
            if step >= 0:
                break
            x = x - step
    return x, False


def gw_correction(lam, rho, m: int, n: int | None = None):
    """Limit of ``n (rho^m - rho_inf(m))``:
    ``rho^m ((1-rho)/(1+lam rho) m^2 + lam (1-rho) rho / (1 - (lam rho)^2) m)``.

    ``n`` is accepted for symmetry with the finite-n quantity and not used.
    """
    lam, rho = float(lam), float(rho)
    if abs(1 - lam * rho) < 1e-15:
        raise ZeroDivisionError("lam * rho = 1: the correction is singular")
    return rho ** m * ((1 - rho) / (1 + lam * rho) * m * m + lam * (1 - rho) * rho / (1 - (lam * rho) ** 2) * m)


# -- moment diagnostics ---------------------------------------------------------------------
@dataclass(frozen=True)
class MutationForward:
    mu1: Fraction
    mu2: Fraction
    n: int


@dataclass(frozen=True)
class AncestralAinfty:
    """Limit law of the block count when the forward chain absorbs at 0 and n."""
    mechanism: BiasMechanism
    n: int

    @classmethod
    def from_slope(cls, lam, n):
        """Quadratic mechanism with ``p'(0) = lam`` (``1 < lam <= 2``)."""
        return cls(Quadratic(Fraction(lam) - 1), n)


def guard_bits(n: int, base: int = 64) -> int:
    """Precision that survives the ``~3^n`` amplification of ``Phi^-1``."""
    return base + 32 + math.ceil(n * math.log2(3))


def ancestral_limit_law(mech: BiasMechanism, n: int, bits: int | None = None):
    """(law of A_inf, rho_inf) from forward absorption and the inverse bridge."""
    bits = bits or guard_bits(n)
    mode = Mode.floating(bits)
    fw = forward_matrix(mech, n, mode)
    rho = absorption(fw, (0,))
    law = inverse_bridge(rho, build_kernel(n, check=False))
    return law, rho, bits


def _mutation_row(model: MutationForward, mode: Mode) -> dict:
    mu1, mu2, n = Fraction(model.mu1), Fraction(model.mu2), model.n
    fw = forward_matrix(Mutation(mu1, mu2), n, mode)
    pi = stationary(fw, method="solve")
    with mode.context():
        mean, var = pi.mean(), pi.variance()
    s = mu1 + mu2
    finite_target = Fraction(n * n) * mu1 * mu2 / (s * s * (2 * n * s + 1))
    asym = Fraction(n) * mu1 * mu2 / (2 * s ** 3)
    return {
        "n": n,
        "mean": float(mean),
        "mean_target": float(n * mu1 / s),
        "variance": float(var),
        "variance_finite_target": float(finite_target),
        "variance_asymptotic": float(asym),
        "ratio_asymptotic": float(var) / float(asym),
        "ratio_finite_target": float(var) / float(finite_target),
    }


def _ainfty_row(model: AncestralAinfty, bits=None) -> dict:
    n = model.n
    lam = float(slope_at_zero(model.mechanism))
    law, rho_vec, used = ancestral_limit_law(model.mechanism, n, bits)
    rho, _ = gw_fixed_point(lam)
    mode = Mode.floating(used)
    with mode.context():
        mean, var = law.mean(), law.variance()
        total = sum(law.values, mode(0))
        lowest = min(law.values)
        r1, r2 = rho_vec.values[1], rho_vec.values[2]
        mean_fm = n * (1 - r1)
        var_fm = n * (n - 1) * r2 + n * r1 - (n * r1) ** 2
    var_target = rho * (1 - rho) / (1 + lam * rho)
    return {
        "n": n,
        "lambda": lam,
        "rho": rho,
        "bits": used,
        "mean": float(mean),
        "mean_over_n": float(mean) / n,
        "mean_target_over_n": 1 - rho,
        "mean_ratio": float(mean) / n / (1 - rho),
        "variance": float(var),
        "variance_over_n": float(var) / n,
        "variance_target_over_n": var_target,
        "variance_ratio": float(var) / n / var_target,
        "law_total": float(total),
        "law_min": float(lowest),
        "moment_identity_gap": max(abs(float(mean - mean_fm)), abs(float(var - var_fm))),
    }


def clt_diagnostics(model, ladder=None, mode: Mode | None = None) -> list:
    """Exact finite-n mean and variance against the asymptotic formulas, one row per n."""
    if isinstance(model, MutationForward):
        ladder = ladder or [model.n]
        mode = mode or Mode.floating(max(default_bits(), 128))
        return [_mutation_row(MutationForward(model.mu1, model.mu2, n), mode) for n in ladder]
    if isinstance(model, AncestralAinfty):
        ladder = ladder or [model.n]
        return [_ainfty_row(AncestralAinfty(model.mechanism, n)) for n in ladder]
    raise TypeError(f"unsupported model {model!r}")


def gw_correction_table(mech: BiasMechanism, ladder, ms=(1, 2, 3), mode: Mode | None = None) -> list:
    """Rows ``(n, m, n (rho^m - rho_inf(m)), correction, ratio)`` for the absorbing regime."""
    lam = float(slope_at_zero(mech))
    rho, sub = gw_fixed_point(lam)
    if sub:
        raise ValueError("the Galton-Watson regime needs p'(0) > 1")
    mode = mode or Mode.floating()
    rows = []
    for n in ladder:
        ab = absorption(forward_matrix(mech, n, mode), (0,))
        for m in ms:
            finite = n * (rho ** m - float(ab.values[m]))
            target = gw_correction(lam, rho, m, n)
            rows.append({"n": n, "m": m, "scaled_gap": finite, "correction": target,
                         "ratio": finite / target})
    return rows


def limit_regime(mech: BiasMechanism) -> str:
    """``"stationary"`` (interior boundary values), ``"absorbing"`` or ``"mixed"``."""
    p0, p1 = evaluate(mech, 0), evaluate(mech, 1)
    if p0 > 0 and p1 < 1:
        return "stationary"
    if p0 == 0 and p1 == 1:
        return "absorbing"
    return "mixed"

