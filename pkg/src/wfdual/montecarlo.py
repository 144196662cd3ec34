"""Seeded simulation of the forward chain and of its ancestral dual.

Every replicate draws from its own counter-based stream, keyed by
``(seed, side, replicate index)``, so chunking or reordering replicates never
changes a result.  Backward runs on sub-stochastic matrices may be killed;
the coffin state is coded ``-1``.
"""
from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bias import BiasMechanism, default_mode, mechanism_to_config
from .chains import TransitionMatrix, biased_reproduction_weights, dual_matrix, forward_matrix
from .kernels import binom, build_kernel
from .numeric import Mode, matmul, to_float64

COFFIN = -1
FORWARD_SIDE, BACKWARD_SIDE = 0, 1
INVERSION_MAX_N = 64


def replicate_rng(seed: int, side: int, index: int) -> np.random.Generator:
    """Independent Philox stream for one replicate."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(side, index))))


@dataclass(frozen=True)
class SimConfig:
    n: int
    horizon: int
    replicates: int
    seed: int
    start_forward: int | None = None
    start_backward: int | None = None
    sampler: str = "binomial"
    streams: int = 1
    record_paths: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.streams < 1:
            raise ValueError("need at least one stream")
        for s in (self.start_forward, self.start_backward):
            if s is not None and not 0 <= s <= self.n:
                raise ValueError(f"start state {s} outside 0..{self.n}")
        if self.sampler not in ("binomial", "multinomial"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    def chunks(self):
        """Contiguous replicate ranges, one per stream."""
        edges = np.linspace(0, self.replicates, self.streams + 1).astype(int)
        return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


@dataclass
class SimTrace:
    side: str
    n: int
    horizon: int
    start: int
    seed: int
    streams: int
    terminal: np.ndarray = field(repr=False)
    paths: np.ndarray | None = field(default=None, repr=False)
    coffin_hits: int = 0
    zero_hits: int = 0
    conservation_checked: int = 0

    def counts(self) -> np.ndarray:
        """Terminal-state histogram over ``0..n`` (coffin excluded)."""
        live = self.terminal[self.terminal >= 0]
        return np.bincount(live, minlength=self.n + 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "terminal", "coffin"])
            for r, s in enumerate(self.terminal):
                w.writerow([r, int(s), int(s == COFFIN)])

    def summary(self) -> dict:
        return {
            "side": self.side, "n": self.n, "horizon": self.horizon, "start": self.start,
            "seed": self.seed, "streams": self.streams, "replicates": int(len(self.terminal)),
            "coffin_hits": self.coffin_hits, "zero_hits": self.zero_hits,
        }


def _cdf_rows(rows) -> list:
    return [np.cumsum(r).tolist() for r in rows]


def _merge(side, cfg, start, parts, record):
    terminal = np.concatenate([p[0] for p in parts])
    paths = np.concatenate([p[1] for p in parts]) if record else None
    checked = sum(p[2] for p in parts)
    return SimTrace(side, cfg.n, cfg.horizon, start, cfg.seed, cfg.streams, terminal, paths,
                    int(np.sum(terminal == COFFIN)), int(np.sum(terminal == 0)), checked)


def simulate_forward(mech: BiasMechanism, config: SimConfig) -> SimTrace:
    """Forward trajectories of ``N_r`` from ``config.start_forward``.

    ``sampler="binomial"`` draws ``Bin(n, p(k/n))`` (by inversion of the exact
    row for ``n <= 64``); ``"multinomial"`` draws the offspring vector with
    cell weights ``p(0), pi_1, ..., pi_n, 1 - p(1)`` and counts the
    descendants of the first ``k`` parents plus the ``p(0)`` cell.
    """
    cfg = config
    n, start = cfg.n, cfg.start_forward
    if start is None:
        raise ValueError("forward simulation needs start_forward")
    mode = default_mode(mech) if n <= INVERSION_MAX_N else Mode.floating(53)
    if cfg.sampler == "binomial":
        if n <= INVERSION_MAX_N:
            cdf = _cdf_rows(to_float64(forward_matrix(mech, n, mode).entries))
        else:
            with mode.context():
                probs = [float(mech.p(mode(k) / n, mode)) for k in range(n + 1)]
        weights = None
    else:
        with mode.context():
            p0 = mech.p(mode(0), mode)
            q1 = mech.q(mode(1), mode)
        w = [p0] + biased_reproduction_weights(mech, n, mode) + [q1]
        weights = np.array([float(v) for v in w])
        weights /= weights.sum()

    def step(rng, state, u):
        if cfg.sampler == "binomial":
            if n <= INVERSION_MAX_N:
                return min(bisect_right(cdf[state], u), n)
            return int(rng.binomial(n, probs[state]))
        nu = rng.multinomial(n, weights)
        if nu.sum() != n:
            raise AssertionError("offspring vector does not sum to n")
        return int(nu[0] + nu[1:state + 1].sum())

    def run(chunk):
        term = np.empty(len(chunk), dtype=np.int64)
        paths = np.empty((len(chunk), cfg.horizon + 1), dtype=np.int64) if cfg.record_paths else None
        checked = 0
        for pos, r in enumerate(chunk):
            rng = replicate_rng(cfg.seed, FORWARD_SIDE, r)
            us = rng.random(cfg.horizon) if cfg.sampler == "binomial" else [None] * cfg.horizon
            state = start
            if paths is not None:
                paths[pos, 0] = state
            for t in range(cfg.horizon):
                state = step(rng, state, us[t])
                if paths is not None:
                    paths[pos, t + 1] = state
            checked += cfg.horizon if cfg.sampler == "multinomial" else 0
            term[pos] = state
        return term, paths, checked

    return _merge("forward", cfg, start, [run(c) for c in cfg.chunks()], cfg.record_paths)


def simulate_backward(dual: TransitionMatrix, config: SimConfig) -> SimTrace:
    """Trajectories of ``A_r`` from ``config.start_backward``; row deficits lead to the coffin."""
    cfg = config
    n, start = cfg.n, cfg.start_backward
    if start is None:
        raise ValueError("backward simulation needs start_backward")
    if dual.n != n:
        raise ValueError("dual matrix size disagrees with the configuration")
    rows = to_float64(dual.entries)
    cdf = _cdf_rows(rows)
    if dual.deficit is None:
        alive = [math.inf] * (n + 1)
    else:
        alive = [1.0 - float(d) if d != 0 else math.inf for d in dual.deficit]

    def step(state, u):
        if u >= alive[state]:
            return COFFIN
        nxt = bisect_right(cdf[state], u)
        if nxt > n:
            # rounding at the top of the cdf: fall back to the last state with mass
            nxt = max(j for j in range(n + 1) if rows[state, j] > 0)
        return nxt

    def run(chunk):
        term = np.empty(len(chunk), dtype=np.int64)
        paths = np.empty((len(chunk), cfg.horizon + 1), dtype=np.int64) if cfg.record_paths else None
        for pos, r in enumerate(chunk):
            rng = replicate_rng(cfg.seed, BACKWARD_SIDE, r)
            us = rng.random(cfg.horizon)
            state = start
            if paths is not None:
                paths[pos, :] = COFFIN
                paths[pos, 0] = state
            for t in range(cfg.horizon):
                state = step(state, us[t])
                if paths is not None:
                    paths[pos, t + 1] = state
                if state == COFFIN:
                    break
            term[pos] = state
        return term, paths, 0

    return _merge("backward", cfg, start, [run(c) for c in cfg.chunks()], cfg.record_paths)


# -- estimators ---------------------------------------------------------------------------
def _phi_values(n, first, second_states, forward: bool):
    """Kernel ``C(n-m, k)/C(n, k)`` along simulated states (0 at the coffin)."""
    table = {}
    out = np.empty(len(second_states))
    for pos, s in enumerate(second_states):
        s = int(s)
        if s not in table:
            if s == COFFIN:
                table[s] = 0.0
            elif forward:
                table[s] = float(binom(n - s, first) / binom(n, first))
            else:
                table[s] = float(binom(n - first, s) / binom(n, s))
        out[pos] = table[s]
    return out


@dataclass(frozen=True)
class DualityReport:
    n: int
    m: int
    k: int
    r: int
    replicates: int
    seed: int
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    exact_lhs: float | None = None
    exact_rhs: float | None = None
    coffin_hits: int = 0

    @property
    def agrees(self) -> bool:
        return self.z < 3

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def exact_duality_sides(mech: BiasMechanism, n: int, m: int, k: int, r: int, mode: Mode | None = None):
    """``(Pi^r Phi)[m, k]`` and ``(Phi (P^T)^r)[m, k]`` computed exactly (or at ``mode`` precision)."""
    mode = mode or default_mode(mech)
    fw = forward_matrix(mech, n, mode)
    bw = dual_matrix(mech, n, mode)
    phi = build_kernel(n).in_mode(mode).matrix
    with mode.context():
        left = matmul(fw.power(r), phi)[m, k]
        right = matmul(phi, bw.power(r).T.copy())[m, k]
    return left, right


def duality_estimator(mech: BiasMechanism, n: int, m: int, k: int, r: int, replicates: int,
                      seed: int, sampler: str = "binomial", streams: int = 1,
                      exact: bool | None = None) -> DualityReport:
    """Monte Carlo estimates of both sides of the duality identity at horizon ``r``.

    Forward side: mean of ``C(n - N_r, k) / C(n, k)`` from ``N_0 = m``.
    Backward side: mean of ``C(n - m, A_r) / C(n, A_r)`` from ``A_0 = k``, with
    killed replicates contributing 0.
    """
    cfg = SimConfig(n, r, replicates, seed, start_forward=m, start_backward=k,
                    sampler=sampler, streams=streams)
    dual = dual_matrix(mech, n, default_mode(mech) if n <= INVERSION_MAX_N else Mode.floating())
    fw = simulate_forward(mech, cfg)
    bw = simulate_backward(dual, cfg)
    lv = _phi_values(n, k, fw.terminal, forward=True)
    rv = _phi_values(n, m, bw.terminal, forward=False)
    lhs, rhs = float(lv.mean()), float(rv.mean())
    lse = float(lv.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    rse = float(rv.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    se = math.hypot(lse, rse)
    gap = abs(lhs - rhs)
    z = gap / se if se > 0 else (0.0 if gap == 0 else math.inf)
    el = er = None
    if exact if exact is not None else n <= INVERSION_MAX_N:
        a, b = exact_duality_sides(mech, n, m, k, r)
        el, er = float(a), float(b)
    return DualityReport(n, m, k, r, replicates, seed, lhs, lse, rhs, rse, z, el, er, bw.coffin_hits)


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    pvalue: float
    pooled_bins: int


def chi_square_test(counts, probs, min_expected: float = 5.0) -> ChiSquareResult:
    """Pearson test of observed counts against exact probabilities.

    Cells with expected count below ``min_expected`` are pooled into one cell;
    mass observed where the exact probability is zero gives ``p = 0``.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray([float(p) for p in probs])
    total = counts.sum()
    if np.any(counts[probs == 0] > 0):
        return ChiSquareResult(math.inf, 0, 0.0, 0)
    keep = probs > 0
    counts, probs = counts[keep], probs[keep] / probs[keep].sum()
    expected = total * probs
    small = expected < min_expected
    obs = list(counts[~small])
    exp = list(expected[~small])
    if small.any():
        obs.append(counts[small].sum())
        exp.append(expected[small].sum())
    if len(obs) < 2:
        return ChiSquareResult(0.0, 0, 1.0, int(small.sum()))
    stat, p = stats.chisquare(obs, exp)
    return ChiSquareResult(float(stat), len(obs) - 1, float(p), int(small.sum()))


def one_step_chisquare(mech: BiasMechanism, n: int, k: int, draws: int, seed: int,
                       sampler: str = "binomial") -> ChiSquareResult:
    """Empirical one-step law from ``k`` against the exact forward row."""
    cfg = SimConfig(n, 1, draws, seed, start_forward=k, sampler=sampler)
    trace = simulate_forward(mech, cfg)
    row = forward_matrix(mech, n).entries[k]
    return chi_square_test(trace.counts(), row)


def dual_one_step_chisquare(dual: TransitionMatrix, k: int, draws: int, seed: int) -> ChiSquareResult:
    """Same test for one step of the dual, the coffin counted as an extra cell."""
    cfg = SimConfig(dual.n, 1, draws, seed, start_backward=k)
    trace = simulate_backward(dual, cfg)
    row = list(dual.entries[k])
    counts = list(trace.counts())
    if dual.deficit is not None:
        row.append(dual.deficit[k])
        counts.append(trace.coffin_hits)
    return chi_square_test(counts, row)


def total_variation(counts, probs) -> float:
    counts = np.asarray(counts, dtype=float)
    emp = counts / counts.sum()
    return 0.5 * float(np.abs(emp - np.asarray([float(p) for p in probs])).sum())


def tv_bound(states: int, replicates: int) -> float:
    """Tolerance ``4 sqrt(S / R)`` for the empirical-vs-exact total variation."""
    return 4 * math.sqrt(states / replicates)


def trace_summary(trace: SimTrace, mech: BiasMechanism | None = None) -> dict:
    out = trace.summary()
    if mech is not None:
        out["mechanism"] = mechanism_to_config(mech)
    return out
