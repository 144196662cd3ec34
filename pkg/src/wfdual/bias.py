"""Bias mechanisms ``p(x)`` with ``q(x) = 1 - p(x)``, their algebra and admissibility.

A mechanism is an immutable expression tree.  Leaves are the catalogue
mechanisms (neutral, selection, dominance, quadratic, mutation, power); inner
nodes are the reciprocal, mutational, joint and compound combinators.  Every
node evaluates ``p`` and ``q`` directly (``q`` is never formed as ``1 - p``
when a product form is available) so that exact and rounded evaluations stay
accurate near the boundaries.

Admissibility of ``p`` means complete monotonicity of ``q`` on ``(0, 1)``.
Three layers decide it:

* structural rules (:func:`symbolic_admissibility`);
* a Taylor certificate: ``q`` is completely monotone iff every Taylor
  coefficient of ``y -> q(1 - y)`` at ``0`` is non-negative, so one negative
  coefficient is a proof of inadmissibility;
* a finite-resolution check of the endpoint backward differences
  (:func:`grid_cm_check`), necessary for admissibility at every ``n``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Callable, ClassVar

from gmpy2 import mpq

from .kernels import endpoint_differences, endpoint_magnitudes
from .numeric import RATIONAL, Mode, as_fraction

GRID = 256
SERIES_ORDER = 64


class MechanismDomainError(ValueError):
    """Parameters outside the domain of a mechanism, or a non-monotone ``p``."""


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class Verdict(enum.Enum):
    ADMISSIBLE = "admissible"
    NOT_ADMISSIBLE = "not-admissible"
    UNKNOWN = "unknown"


def _frac(value, name) -> Fraction:
    try:
        return as_fraction(value)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise MechanismDomainError(f"parameter {name}={value!r} is not a real scalar") from exc


# -- truncated power series ------------------------------------------------------
class TruncatedSeries:
    """Exact power series in ``y`` truncated at a fixed order.

    Supports the field operations the mechanism formulas use, so a mechanism
    can be evaluated at ``x = 1 - y`` to obtain its Taylor coefficients.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs, order: int = SERIES_ORDER):
        c = [mpq(v) for v in coeffs][:order]
        self.c = c + [mpq(0)] * (order - len(c))

    @property
    def order(self) -> int:
        return len(self.c)

    def _lift(self, other):
        if isinstance(other, TruncatedSeries):
            return other
        return TruncatedSeries([other], self.order)

    def __add__(self, other):
        other = self._lift(other)
        return TruncatedSeries([a + b for a, b in zip(self.c, other.c)], self.order)

    __radd__ = __add__

    def __neg__(self):
        return TruncatedSeries([-a for a in self.c], self.order)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            other = mpq(other)
            return TruncatedSeries([a * other for a in self.c], self.order)
        n = self.order
        out = [mpq(0)] * n
        for i, a in enumerate(self.c):
            if a == 0:
                continue
            for j in range(n - i):
                out[i + j] += a * other.c[j]
        return TruncatedSeries(out, n)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        b0 = other.c[0]
        if b0 == 0:
            raise ZeroDivisionError("series divisor vanishes at the origin")
        n = self.order
        out = [mpq(0)] * n
        for k in range(n):
            acc = self.c[k]
            for i in range(1, k + 1):
                if other.c[i] != 0:
                    acc -= other.c[i] * out[k - i]
            out[k] = acc / b0
        return TruncatedSeries(out, n)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k):
        if int(k) != k or k < 0:
            raise ValueError("series powers must be non-negative integers")
        k = int(k)
        result = TruncatedSeries([1], self.order)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result


# -- probability generating functions ----------------------------------------------
@dataclass(frozen=True)
class Pgf:
    """Absolutely monotone ``phi`` on ``[0, 1]`` with ``phi([0,1]) ⊂ [0,1]``."""

    kind: ClassVar[str] = ""
    rational: ClassVar[bool] = True

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _frac(getattr(self, f.name), f.name))
        self._check()

    def _check(self):
        pass

    def phi(self, y, mode: Mode):
        raise NotImplementedError

    def complement(self, y, mode: Mode):
        """``1 - phi(1 - y)``, arranged to avoid cancellation."""
        return 1 - self.phi(1 - y, mode)

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class PoissonPgf(Pgf):
    theta: Fraction
    kind: ClassVar[str] = "poisson"
    rational: ClassVar[bool] = False

    def _check(self):
        if self.theta <= 0:
            raise MechanismDomainError("poisson pgf needs theta > 0")

    def phi(self, y, mode):
        return mode.exp(-mode(self.theta) * (1 - y))

    def complement(self, y, mode):
        return -mode.expm1(-mode(self.theta) * y)


@dataclass(frozen=True)
class ShiftedPoissonPgf(Pgf):
    theta: Fraction
    kind: ClassVar[str] = "shifted_poisson"
    rational: ClassVar[bool] = False

    def _check(self):
        if self.theta <= 0:
            raise MechanismDomainError("shifted poisson pgf needs theta > 0")

    def phi(self, y, mode):
        t = mode(self.theta)
        return mode.expm1(t * y) / mode.expm1(t)

    def complement(self, y, mode):
        t = mode(self.theta)
        return mode.expm1(-t * y) / mode.expm1(-t)


@dataclass(frozen=True)
class GeometricPgf(Pgf):
    pi: Fraction
    kind: ClassVar[str] = "geometric"

    def _check(self):
        if not 0 < self.pi < 1:
            raise MechanismDomainError("geometric pgf needs pi in (0, 1)")

    def phi(self, y, mode):
        pi = mode(self.pi)
        return (1 - pi) / (1 - pi * y)

    def complement(self, y, mode):
        pi = mode(self.pi)
        return pi * y / (1 - pi + pi * y)


@dataclass(frozen=True)
class ShiftedGeometricPgf(Pgf):
    pi: Fraction
    kind: ClassVar[str] = "shifted_geometric"

    def _check(self):
        if not 0 < self.pi < 1:
            raise MechanismDomainError("shifted geometric pgf needs pi in (0, 1)")

    def phi(self, y, mode):
        pi = mode(self.pi)
        return y * (1 - pi) / (1 - pi * y)

    def complement(self, y, mode):
        pi = mode(self.pi)
        return y / (1 - pi + pi * y)


@dataclass(frozen=True)
class AffinePgf(Pgf):
    mu1: Fraction
    mu2: Fraction
    kind: ClassVar[str] = "affine"

    def _check(self):
        _check_mutation_rates(self.mu1, self.mu2)

    @property
    def kappa(self) -> Fraction:
        return 1 - self.mu1 - self.mu2

    def phi(self, y, mode):
        return mode(self.mu2) + mode(self.kappa) * y

    def complement(self, y, mode):
        return mode(self.mu1) + mode(self.kappa) * y


def _check_mutation_rates(mu1, mu2):
    if not (0 <= mu1 <= 1 and 0 <= mu2 <= 1):
        raise MechanismDomainError("mutation rates must lie in [0, 1]")
    if mu1 + mu2 > 1:
        raise MechanismDomainError("mutation rates need mu1 <= 1 - mu2")


# -- mechanisms ----------------------------------------------------------------
@dataclass(frozen=True)
class BiasMechanism:
    kind: ClassVar[str] = ""

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not isinstance(val, (BiasMechanism, Pgf)):
                object.__setattr__(self, f.name, _frac(val, f.name))
        self._check()
        _check_monotone(self)

    def _check(self):
        pass

    def p(self, x, mode: Mode):
        raise NotImplementedError

    def q(self, x, mode: Mode):
        raise NotImplementedError

    @property
    def rational(self) -> bool:
        """True when ``p`` is a rational function with rational coefficients."""
        return True

    def children(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), BiasMechanism))

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __str__(self):
        return json.dumps(mechanism_to_config(self), separators=(",", ":"))


@dataclass(frozen=True)
class Neutral(BiasMechanism):
    kind: ClassVar[str] = "neutral"

    def p(self, x, mode):
        return x

    def q(self, x, mode):
        return 1 - x


@dataclass(frozen=True)
class Selection(BiasMechanism):
    s: Fraction
    kind: ClassVar[str] = "selection"

    def _check(self):
        if self.s <= -1:
            raise MechanismDomainError("selection needs s > -1")

    def p(self, x, mode):
        s = mode(self.s)
        return (1 + s) * x / (1 + s * x)

    def q(self, x, mode):
        s = mode(self.s)
        return (1 - x) / (1 + s * x)


@dataclass(frozen=True)
class Dominance(BiasMechanism):
    s: Fraction
    h: Fraction
    kind: ClassVar[str] = "dominance"

    def _check(self):
        if self.s <= -1 or self.s * self.h <= -1:
            raise MechanismDomainError("dominance needs s > -1 and s*h > -1")

    def _den(self, x, s, h):
        return 1 + s * x * x + 2 * s * h * x * (1 - x)

    def p(self, x, mode):
        s, h = mode(self.s), mode(self.h)
        return ((1 + s) * x * x + (1 + s * h) * x * (1 - x)) / self._den(x, s, h)

    def q(self, x, mode):
        s, h = mode(self.s), mode(self.h)
        return (1 - x) * (1 + s * h * x) / self._den(x, s, h)


@dataclass(frozen=True)
class Quadratic(BiasMechanism):
    c: Fraction
    kind: ClassVar[str] = "quadratic"

    def _check(self):
        if not -1 <= self.c <= 1:
            raise MechanismDomainError("quadratic needs c in [-1, 1]")

    def p(self, x, mode):
        c = mode(self.c)
        return x * (1 + c - c * x)

    def q(self, x, mode):
        c = mode(self.c)
        return (1 - x) * (1 - c * x)


@dataclass(frozen=True)
class Mutation(BiasMechanism):
    mu1: Fraction
    mu2: Fraction
    kind: ClassVar[str] = "mutation"

    def _check(self):
        _check_mutation_rates(self.mu1, self.mu2)

    @property
    def kappa(self) -> Fraction:
        return 1 - self.mu1 - self.mu2

    def p(self, x, mode):
        return mode(self.mu1) + mode(self.kappa) * x

    def q(self, x, mode):
        return mode(1 - self.mu1) - mode(self.kappa) * x


@dataclass(frozen=True)
class Power(BiasMechanism):
    gamma: Fraction
    kind: ClassVar[str] = "power"

    def _check(self):
        if self.gamma <= 0:
            raise MechanismDomainError("power needs gamma > 0")

    @property
    def rational(self):
        return self.gamma.denominator == 1

    def p(self, x, mode):
        return mode.power(x, self.gamma)

    def q(self, x, mode):
        return 1 - mode.power(x, self.gamma)


@dataclass(frozen=True)
class Reciprocal(BiasMechanism):
    inner: BiasMechanism
    kind: ClassVar[str] = "reciprocal"

    @property
    def rational(self):
        return self.inner.rational

    def p(self, x, mode):
        return self.inner.q(1 - x, mode)

    def q(self, x, mode):
        return self.inner.p(1 - x, mode)


@dataclass(frozen=True)
class MutationalCompose(BiasMechanism):
    mu1: Fraction
    mu2: Fraction
    inner: BiasMechanism
    kind: ClassVar[str] = "mutational_compose"

    def _check(self):
        _check_mutation_rates(self.mu1, self.mu2)

    @property
    def rational(self):
        return self.inner.rational

    def p(self, x, mode):
        pi, qi = self.inner.p(x, mode), self.inner.q(x, mode)
        return mode(1 - self.mu2) * pi + mode(self.mu1) * qi

    def q(self, x, mode):
        pi, qi = self.inner.p(x, mode), self.inner.q(x, mode)
        return mode(self.mu2) * pi + mode(1 - self.mu1) * qi


@dataclass(frozen=True)
class Joint(BiasMechanism):
    left: BiasMechanism
    right: BiasMechanism
    kind: ClassVar[str] = "joint"

    @property
    def rational(self):
        return self.left.rational and self.right.rational

    def p(self, x, mode):
        a, b = self.left.p(x, mode), self.right.p(x, mode)
        return a + b - a * b

    def q(self, x, mode):
        return self.left.q(x, mode) * self.right.q(x, mode)


@dataclass(frozen=True)
class Compound(BiasMechanism):
    pgf: Pgf
    inner: BiasMechanism
    kind: ClassVar[str] = "compound"

    def _check(self):
        if not isinstance(self.pgf, Pgf):
            raise MechanismDomainError("compound needs a pgf")

    @property
    def rational(self):
        return self.pgf.rational and self.inner.rational

    def p(self, x, mode):
        return self.pgf.complement(self.inner.p(x, mode), mode)

    def q(self, x, mode):
        return self.pgf.phi(self.inner.q(x, mode), mode)


def default_mode(mech: BiasMechanism) -> Mode:
    """Exact arithmetic when the mechanism allows it, high-precision floats otherwise."""
    return RATIONAL if mech.rational else Mode.floating()


def _check_monotone(mech: BiasMechanism) -> None:
    mode = RATIONAL if mech.rational else Mode.floating(64)
    slack = 0 if mode.exact else 2.0 ** -48
    with mode.context():
        vals = [mech.p(mode(Fraction(k, GRID)), mode) for k in range(GRID + 1)]
    if vals[0] < -slack or vals[-1] > 1 + slack:
        raise MechanismDomainError(f"{mech.kind}: p must map [0,1] into [0,1]")
    for k in range(GRID):
        if vals[k + 1] < vals[k] - slack:
            raise MechanismDomainError(
                f"{mech.kind}: p decreases between {k}/{GRID} and {k + 1}/{GRID}")


def evaluate(mech: BiasMechanism, x, mode: Mode | None = None):
    """``p(x)``; exact in rational mode for rational ``x`` and parameters."""
    mode = mode or default_mode(mech)
    with mode.context():
        xv = x if _is_mode_scalar(x, mode) else mode(as_fraction(x))
        if xv < 0 or xv > 1:
            raise ValueError(f"x={x} outside [0, 1]")
        return mech.p(xv, mode)


def evaluate_q(mech: BiasMechanism, x, mode: Mode | None = None):
    mode = mode or default_mode(mech)
    with mode.context():
        xv = x if _is_mode_scalar(x, mode) else mode(as_fraction(x))
        if xv < 0 or xv > 1:
            raise ValueError(f"x={x} outside [0, 1]")
        return mech.q(xv, mode)


def _is_mode_scalar(x, mode: Mode) -> bool:
    if mode.exact:
        return type(x) is type(mpq())
    if mode.native:
        return isinstance(x, float)
    return type(x).__name__ == "mpfr"


def slope_at_zero(mech: BiasMechanism):
    """``p'(0)``: exact for rational mechanisms, a 256-bit one-sided difference otherwise."""
    if mech.rational:
        return mech.p(TruncatedSeries([0, 1], 2), RATIONAL).c[1]
    mode = Mode.floating(256)
    with mode.context():
        h = mode(Fraction(1, 2 ** 100))
        return (mech.p(h, mode) - mech.p(mode(0), mode)) / h


# -- algebra ---------------------------------------------------------------------
def reciprocal(mech: BiasMechanism) -> BiasMechanism:
    """``x -> 1 - p(1 - x)``, rewritten inside the catalogue where possible."""
    if isinstance(mech, Neutral):
        return mech
    if isinstance(mech, Selection):
        return Selection(-mech.s / (1 + mech.s))
    if isinstance(mech, Dominance):
        return Dominance(-mech.s / (1 + mech.s), 1 - mech.h)
    if isinstance(mech, Quadratic):
        return Quadratic(-mech.c)
    if isinstance(mech, Mutation):
        return Mutation(mech.mu2, mech.mu1)
    if isinstance(mech, Reciprocal):
        return mech.inner
    return Reciprocal(mech)


def joint(left: BiasMechanism, right: BiasMechanism) -> BiasMechanism:
    """Probabilistic product ``p_l + p_r - p_l p_r`` (so ``q = q_l q_r``)."""
    for a, b in ((left, right), (right, left)):
        if isinstance(b, Neutral):
            if isinstance(a, Neutral):
                return Quadratic(1)
            if isinstance(a, Mutation) and a.mu1 == 0:
                return Quadratic(1 - a.mu2)
    return Joint(left, right)


def compound(pgf: Pgf, mech: BiasMechanism) -> BiasMechanism:
    """``x -> 1 - phi(1 - p(x))`` (so ``q = phi(q)``)."""
    if isinstance(pgf, AffinePgf):
        return MutationalCompose(pgf.mu1, pgf.mu2, mech)
    if isinstance(pgf, ShiftedGeometricPgf):
        s = pgf.pi / (1 - pgf.pi)
        if isinstance(mech, Neutral):
            return Selection(s)
        if isinstance(mech, Selection):
            # selection of selection is again selection
            return Selection(s + mech.s + s * mech.s)
    return Compound(pgf, mech)


# -- admissibility -----------------------------------------------------------------
def series_coefficients(mech: BiasMechanism, order: int = SERIES_ORDER) -> list:
    """Taylor coefficients at ``y = 0`` of ``y -> q(1 - y)`` (rational mechanisms)."""
    if not mech.rational:
        raise ValueError("series certificate needs a rational mechanism")
    x = TruncatedSeries([1, -1], order)
    return mech.q(x, RATIONAL).c


def series_certificate(mech: BiasMechanism, order: int = SERIES_ORDER) -> tuple:
    """(verdict, first negative order) from the truncated Taylor expansion.

    A negative coefficient proves ``q`` is not completely monotone.  A clean
    truncated expansion proves nothing, hence UNKNOWN.
    """
    for k, c in enumerate(series_coefficients(mech, order)):
        if c < 0:
            return Verdict.NOT_ADMISSIBLE, k
    return Verdict.UNKNOWN, None


def _rule(mech: BiasMechanism) -> Verdict:
    A, N, U = Verdict.ADMISSIBLE, Verdict.NOT_ADMISSIBLE, Verdict.UNKNOWN
    if isinstance(mech, (Neutral, Mutation)):
        return A
    if isinstance(mech, Selection):
        return A if mech.s >= 0 else N
    if isinstance(mech, Quadratic):
        return A if mech.c >= 0 else N
    if isinstance(mech, Power):
        return A if mech.gamma <= 1 else N
    if isinstance(mech, Dominance):
        if mech.s == 0:
            return A
        if mech.s > 0 and mech.h == Fraction(1, 2):
            # mixture of neutral and selection(s) in q
            return A
        return U
    if isinstance(mech, Joint):
        if _rule(mech.left) is A and _rule(mech.right) is A:
            return A
        return U
    if isinstance(mech, (Compound, MutationalCompose)):
        return A if _rule(mech.inner) is A else U
    return U


def symbolic_admissibility(mech: BiasMechanism, certificate: bool = True) -> Verdict:
    """Structural verdict, refined by the Taylor certificate for rational mechanisms."""
    verdict = _rule(mech)
    if verdict is Verdict.UNKNOWN and certificate and mech.rational:
        verdict, _ = series_certificate(mech)
    return verdict


def parameter_admissibility(kind: str, **params) -> Verdict:
    """Verdict straight from catalogue parameters, also outside the construction domain.

    Mutation rates with ``mu1 + mu2 > 1`` make ``q`` increasing, hence not
    completely monotone, although no mechanism can be built from them.
    """
    params = {k: as_fraction(v) for k, v in params.items()}
    if kind == "mutation" and params["mu1"] + params["mu2"] > 1:
        return Verdict.NOT_ADMISSIBLE
    return symbolic_admissibility(_KINDS[kind](**params))


@dataclass(frozen=True)
class CMCheck:
    passed: bool
    n: int
    order: int | None = None
    value: object = None
    tol: object = 0
    differences: tuple = field(default=(), repr=False)

    def __bool__(self):
        return self.passed


def grid_cm_check(mech: BiasMechanism | Callable, n: int, mode: Mode | None = None,
                  tol=None, power: int = 1) -> CMCheck:
    """Check ``(-1)^j nabla^j q(m/n)^power |_{m=n} >= -tol`` for ``j = 0..n``.

    Passing is necessary for complete monotonicity, not sufficient: only the
    resolution ``1/n`` is probed.  ``mech`` may also be a plain callable ``q``.
    In float modes the default slack scales with ``sum_l C(j,l) |v(n-l)|``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(mech, BiasMechanism):
        mode = mode or default_mode(mech)
        qfun = lambda x: mech.q(x, mode)  # noqa: E731
    else:
        mode = mode or RATIONAL
        qfun = mech
    with mode.context():
        vals = [qfun(mode(Fraction(m, n))) ** power for m in range(n + 1)]
        nabla = endpoint_differences(vals)
        diffs = [d if j % 2 == 0 else -d for j, d in enumerate(nabla)]
        if tol is not None:
            tols = [tol] * (n + 1)
        elif mode.exact:
            tols = [0] * (n + 1)
        else:
            tols = [mode.rel_tol * m for m in endpoint_magnitudes(vals)]
    for j, (d, t) in enumerate(zip(diffs, tols)):
        if d < -t:
            return CMCheck(False, n, j, d, t, tuple(diffs))
    return CMCheck(True, n, None, None, max(tols), tuple(diffs))


# -- configuration grammar ----------------------------------------------------------
_KINDS = {cls.kind: cls for cls in (Neutral, Selection, Dominance, Quadratic, Mutation, Power,
                                    Reciprocal, MutationalCompose, Joint, Compound)}
_PGFS = {cls.kind: cls for cls in (PoissonPgf, ShiftedPoissonPgf, GeometricPgf,
                                   ShiftedGeometricPgf, AffinePgf)}
_ALIASES = {"mutational": "mutational_compose", "shifted-poisson": "shifted_poisson",
            "shifted-geometric": "shifted_geometric"}


def _scalar_from_config(value, path):
    if isinstance(value, bool) or not isinstance(value, (str, int, float)):
        raise ConfigError(f"expected a scalar string, got {value!r}", path)
    try:
        return as_fraction(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot read scalar {value!r}", path) from exc


def _build(table, cfg, path, child):
    if not isinstance(cfg, dict):
        raise ConfigError("expected an object", path)
    kind = cfg.get("kind")
    kind = _ALIASES.get(kind, kind)
    if kind not in table:
        raise ConfigError(f"unknown kind {cfg.get('kind')!r}; choose from {sorted(table)}", f"{path}.kind")
    cls = table[kind]
    expected = [f.name for f in fields(cls)]
    extra = set(cfg) - set(expected) - {"kind"}
    if extra:
        raise ConfigError(f"unexpected keys {sorted(extra)}", path)
    args = {}
    for name in expected:
        sub = f"{path}.{name}"
        if name not in cfg:
            raise ConfigError("missing field", sub)
        if name in ("inner", "left", "right"):
            args[name] = child(cfg[name], sub)
        elif name == "pgf":
            args[name] = pgf_from_config(cfg[name], sub)
        else:
            args[name] = _scalar_from_config(cfg[name], sub)
    try:
        return cls(**args)
    except MechanismDomainError as exc:
        raise MechanismDomainError(f"{path}: {exc}") from exc


def mechanism_from_config(cfg: dict, path: str = "$") -> BiasMechanism:
    """Parse ``{"kind": "selection", "s": "1/2"}``-style literals (nested for combinators)."""
    return _build(_KINDS, cfg, path, mechanism_from_config)


def pgf_from_config(cfg: dict, path: str = "$") -> Pgf:
    return _build(_PGFS, cfg, path, None)


def _scalar_to_config(x: Fraction) -> str:
    return str(x)


def mechanism_to_config(obj) -> dict:
    """Inverse of :func:`mechanism_from_config`; rational parameters round-trip exactly."""
    out = {"kind": obj.kind}
    for f in fields(obj):
        val = getattr(obj, f.name)
        if isinstance(val, (BiasMechanism, Pgf)):
            out[f.name] = mechanism_to_config(val)
        else:
            out[f.name] = _scalar_to_config(val)
    return out
