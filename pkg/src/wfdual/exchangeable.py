"""Exchangeable (Cannings) reproduction laws and their ancestral count process.

Three laws on ``n`` individuals are covered: Dirichlet-multinomial with
parameter ``theta``, Wright-Fisher (uniform multinomial) and Moran (a uniform
permutation of ``(2, 0, 1, ..., 1)``).  For each one the merger probabilities
of ``b`` sampled lineages into ``a`` parents are available in closed form, and
the block-count transition matrix is assembled from them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np
from gmpy2 import mpq, mpz

from .bias import ConfigError
from .chains import BACKWARD, FORWARD, TransitionMatrix
from .kernels import binom, falling, rising
from .numeric import RATIONAL, as_fraction


@dataclass(frozen=True)
class DirichletMultinomial:
    theta: Fraction
    n: int
    kind = "dirichlet"

    def __post_init__(self):
        object.__setattr__(self, "theta", as_fraction(self.theta))
        if self.theta <= 0:
            raise ValueError("dirichlet law needs theta > 0")
        _check_n(self.n)


@dataclass(frozen=True)
class WrightFisher:
    n: int
    kind = "wright-fisher"

    def __post_init__(self):
        _check_n(self.n)


@dataclass(frozen=True)
class Moran:
    n: int
    kind = "moran"

    def __post_init__(self):
        _check_n(self.n)
        if self.n < 2:
            raise ValueError("moran law needs n >= 2")


ReproductionLaw = DirichletMultinomial | WrightFisher | Moran


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError("population size must be a positive integer")


def law_from_config(cfg: dict, n: int, path: str = "$") -> ReproductionLaw:
    """``{"kind": "dirichlet", "theta": "2"}``, ``{"kind": "moran"}``, ``{"kind": "wright-fisher"}``."""
    if not isinstance(cfg, dict):
        raise ConfigError("expected an object", path)
    kind = cfg.get("kind")
    try:
        if kind == "dirichlet":
            if "theta" not in cfg:
                raise ConfigError("missing field", f"{path}.theta")
            return DirichletMultinomial(as_fraction(cfg["theta"]), n)
        if kind in ("wright-fisher", "wf", "wright_fisher"):
            return WrightFisher(n)
        if kind == "moran":
            return Moran(n)
    except (ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), path) from exc
    raise ConfigError(f"unknown law kind {kind!r}", f"{path}.kind")


def law_to_config(law) -> dict:
    if isinstance(law, DirichletMultinomial):
        return {"kind": "dirichlet", "theta": str(law.theta)}
    return {"kind": law.kind}


# -- one-step forward law ----------------------------------------------------------
def dirichlet_forward_entry(n: int, theta, k: int, kk: int) -> mpq:
    """``C(n, k') [k theta]_k' [(n-k) theta]_(n-k') / [n theta]_n``."""
    theta = mpq(as_fraction(theta))
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not (0 <= k <= n and 0 <= kk <= n):
        return mpq(0)
    num = binom(n, kk) * rising(k * theta, kk) * rising((n - k) * theta, n - kk)
    return num / rising(n * theta, n)


def forward_row(law, k: int) -> list:
    """Law of ``nu_1 + ... + nu_k``: the descendants of ``k`` of the ``n`` parents."""
    n = law.n
    if isinstance(law, DirichletMultinomial):
        return [dirichlet_forward_entry(n, law.theta, k, kk) for kk in range(n + 1)]
    if isinstance(law, WrightFisher):
        x = mpq(k, n)
        return [binom(n, kk) * x ** kk * (1 - x) ** (n - kk) for kk in range(n + 1)]
    row = [mpq(0)] * (n + 1)
    move = mpq(k * (n - k), n * (n - 1))
    row[k] = 1 - 2 * move
    if 0 < k < n:
        row[k - 1] += move
        row[k + 1] += move
    return row


def forward_law_matrix(law) -> TransitionMatrix:
    n = law.n
    out = np.empty((n + 1, n + 1), dtype=object)
    for k in range(n + 1):
        out[k] = forward_row(law, k)
    return TransitionMatrix(n, out, FORWARD, RATIONAL, None, {"law": law_to_config(law)})


# -- merger probabilities -----------------------------------------------------------
def _validate_pattern(pattern, n):
    pattern = tuple(int(b) for b in pattern)
    if any(b < 1 for b in pattern):
        raise ValueError("cluster sizes must be positive")
    if sum(pattern) > n:
        raise ValueError(f"sample size {sum(pattern)} exceeds n={n}")
    return pattern


def _moran_factorial_moment(n: int, pattern: tuple) -> mpq:
    """``E prod_l (nu_l)_{b_l}`` for the first ``a`` Moran offspring counts.

    Enumerates the coordinates of the ``2`` and the ``0``; coordinates beyond
    the first ``a`` are lumped since they do not enter the product.
    """
    a = len(pattern)
    if any(b > 2 for b in pattern):
        return mpq(0)
    outside = n - a
    slots = list(range(a)) + ([None] if outside else [])
    weight = {s: (1 if s is not None else outside) for s in slots}
    total = mpz(0)
    for two, zero in product(slots, repeat=2):
        if two is not None and two == zero:
            continue
        w = weight[two] * (weight[zero] - (1 if two is None and zero is None else 0))
        if w <= 0:
            continue
        val = 1
        for idx, b in enumerate(pattern):
            nu = 2 if idx == two else 0 if idx == zero else 1
            val *= falling(nu, b)
            if not val:
                break
        total += w * val
    return mpq(total, n * (n - 1))


@lru_cache(maxsize=None)
def _merger_sorted(law, pattern: tuple) -> mpq:
    n = law.n
    a, b = len(pattern), sum(pattern)
    if isinstance(law, WrightFisher):
        return mpq(falling(n, a), mpz(n) ** b)
    if isinstance(law, DirichletMultinomial):
        theta = mpq(law.theta)
        prod = mpq(1)
        for bl in pattern:
            prod *= rising(theta, bl)
        return falling(n, a) * prod / rising(n * theta, b)
    return falling(n, a) * _moran_factorial_moment(n, pattern) / falling(n, b)


def merger_probability(law, pattern) -> mpq:
    """Probability that ``b = sum(pattern)`` sampled children have ``a = len(pattern)``
    distinct parents, the ``l``-th of which receives ``pattern[l]`` of them.

    Equals ``(n)_a / (n)_b * E prod_l (nu_l)_{b_l}``; invariant under reordering.
    """
    pattern = _validate_pattern(pattern, law.n)
    return _merger_sorted(law, tuple(sorted(pattern, reverse=True)))


def compositions(b: int, a: int):
    """Ordered tuples of ``a`` positive integers summing to ``b``."""
    if a == 0:
        if b == 0:
            yield ()
        return
    if a == 1:
        if b >= 1:
            yield (b,)
        return
    for first in range(1, b - a + 2):
        for rest in compositions(b - first, a - 1):
            yield (first,) + rest


def ancestral_count_entry(law, b: int, a: int) -> mpq:
    """``b!/a! * sum over compositions (b_1..b_a) of P(b_a) / (b_1! ... b_a!)``."""
    if b == 0:
        return mpq(1 if a == 0 else 0)
    if a == 0 or a > b or b > law.n:
        return mpq(0)
    total = mpq(0)
    for comp in compositions(b, a):
        w = 1
        for bl in comp:
            w *= math.factorial(bl)
        total += merger_probability(law, comp) / w
    return total * math.factorial(b) / math.factorial(a)


def ancestral_count_matrix(law, n: int | None = None, m_max: int | None = None) -> TransitionMatrix:
    """Block-count transition matrix of ``b -> a`` ancestors on ``{0..m_max}``.

    The returned :class:`TransitionMatrix` has ``n = m_max``; the population
    size is recorded in ``provenance``.
    """
    n = law.n if n is None else n
    if n != law.n:
        raise ValueError("population size disagrees with the law")
    m_max = n if m_max is None else m_max
    if m_max > n:
        raise ValueError("m_max cannot exceed n")
    out = RATIONAL.zeros((m_max + 1, m_max + 1))
    for b in range(m_max + 1):
        for a in range(b + 1):
            out[b, a] = ancestral_count_entry(law, b, a)
    return TransitionMatrix(m_max, out, BACKWARD, RATIONAL, None,
                            {"law": law_to_config(law), "population": n, "method": "compositions"})


def ancestral_count_inclusion_exclusion(law, n: int, b: int, a: int) -> mpq:
    """``C(n,a)/C(n,b) sum_m (-1)^(a-m) C(a,m) E C(nu_1 + ... + nu_m, b)``."""
    if n != law.n:
        raise ValueError("population size disagrees with the law")
    if b == 0:
        return mpq(1 if a == 0 else 0)
    total = mpq(0)
    for m in range(a + 1):
        row = forward_row(law, m)
        moment = sum((w * binom(s, b) for s, w in enumerate(row) if w), mpq(0))
        term = binom(a, m) * moment
        total += term if (a - m) % 2 == 0 else -term
    return total * mpq(binom(n, a), binom(n, b))


# -- sampling -----------------------------------------------------------------------
def sample_reproduction(law, rng: np.random.Generator) -> np.ndarray:
    """One offspring vector ``nu`` with ``sum(nu) == n``."""
    n = law.n
    if isinstance(law, WrightFisher):
        return rng.multinomial(n, np.full(n, 1.0 / n))
    if isinstance(law, Moran):
        two = int(rng.integers(n))
        zero = int(rng.integers(n - 1))
        if zero >= two:
            zero += 1
        nu = np.ones(n, dtype=np.int64)
        nu[two], nu[zero] = 2, 0
        return nu
    theta = float(law.theta)
    nu = np.zeros(n, dtype=np.int64)
    left = n
    for m in range(n - 1):
        if left == 0:
            break
        # nu_m given the earlier coordinates is beta-binomial
        w = rng.beta(theta, theta * (n - m - 1))
        nu[m] = rng.binomial(left, w)
        left -= nu[m]
    nu[n - 1] = left
    return nu
