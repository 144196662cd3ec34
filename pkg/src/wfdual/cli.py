"""Command line front end: ``wfdual {check,dual,limits,simulate,coalescent,rerun}``.

Each run reads one JSON configuration and writes its artifacts, plus a
``manifest.json`` that echoes the resolved configuration, into ``--out``.

Exit codes: 0 success, 1 admissibility failure, 2 construction or parse
failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AncestralAinfty,
    ConvergenceError,
    ReducibleChainError,
    absorbing_states,
    absorption,
    ancestral_limit_law,
    clt_diagnostics,
    duality_bridge,
    guard_bits,
    gw_correction_table,
    gw_fixed_point,
    inverse_bridge,
    limit_regime,
    stationary,
)
from .bias import (
    ConfigError,
    MechanismDomainError,
    Mutation,
    Neutral,
    Quadratic,
    Verdict,
    default_mode,
    grid_cm_check,
    mechanism_from_config,
    mechanism_to_config,
    slope_at_zero,
    symbolic_admissibility,
)
from .chains import (
    InadmissibleError,
    dual_matrix,
    dual_matrix_mutation_closed_form,
    dual_matrix_neutral_closed_form,
    forward_matrix,
    verify_duality,
)
from .exchangeable import (
    ancestral_count_inclusion_exclusion,
    ancestral_count_matrix,
    compositions,
    forward_law_matrix,
    law_from_config,
    law_to_config,
    merger_probability,
)
from .kernels import build_kernel
from .montecarlo import (
    SimConfig,
    dual_one_step_chisquare,
    duality_estimator,
    one_step_chisquare,
    simulate_backward,
    simulate_forward,
)
from .numeric import Mode, SingularSystemError, format_scalar, max_abs, write_csv

log = logging.getLogger("wfdual")

EXIT_OK, EXIT_INADMISSIBLE, EXIT_CONSTRUCTION, EXIT_NUMERICAL = 0, 1, 2, 3


class Run:
    """Collects artifacts and residuals for the manifest."""

    def __init__(self, command: str, config: dict, out: Path | None):
        self.command = command
        self.config = config
        self.out = out
        self.outputs: list[str] = []
        self.residuals: dict = {}
        self.seeds: list = []
        self.started = time.perf_counter()
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        p = self.path(name)
        if p is not None:
            p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonify) + "\n")

    def write_matrix(self, name: str, arr) -> None:
        p = self.path(name)
        if p is not None:
            write_csv(p, arr)

    def write_table(self, name: str, rows: list[dict]) -> None:
        p = self.path(name)
        if p is None or not rows:
            return
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: _cell(v) for k, v in row.items()})

    def finish(self, status: int) -> dict:
        manifest = {
            "command": self.command,
            "config": self.config,
            "version": __version__,
            "seeds": self.seeds,
            "outputs": sorted(self.outputs),
            "residuals": self.residuals,
            "exit_code": status,
            "wall_clock_s": round(time.perf_counter() - self.started, 3),
        }
        if self.out is not None:
            (self.out / "manifest.json").write_text(
                json.dumps(manifest, indent=2, sort_keys=True, default=_jsonify) + "\n")
        return manifest


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    try:
        return format_scalar(v)
    except (TypeError, ValueError):
        return v


def _jsonify(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, Verdict):
        return v.value
    return format_scalar(v)


# -- configuration helpers --------------------------------------------------------------
def _require(cfg: dict, key: str, path: str = "$"):
    if key not in cfg:
        raise ConfigError("missing field", f"{path}.{key}")
    return cfg[key]


def _int_list(value, path):
    vals = value if isinstance(value, list) else [value]
    out = []
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"expected a positive integer, got {v!r}", f"{path}[{i}]")
        out.append(v)
    return out


def _as_int(cfg, key, default=None, minimum=0):
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError("missing field", f"$.{key}")
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"expected an integer >= {minimum}, got {val!r}", f"$.{key}")
    return val


def _resolve_mode(cfg: dict, mech=None) -> Mode:
    name = cfg.get("mode")
    if name is None:
        mode = default_mode(mech) if mech is not None else Mode.rational()
    else:
        try:
            mode = Mode.parse(name, cfg.get("bits"))
        except ValueError as exc:
            raise ConfigError(str(exc), "$.mode") from exc
    cfg["mode"] = "rational" if mode.exact else "float"
    if not mode.exact:
        cfg["bits"] = mode.bits
    else:
        cfg.pop("bits", None)
    return mode


# -- commands ------------------------------------------------------------------------
def cmd_check(cfg: dict, run: Run) -> int:
    mech = mechanism_from_config(_require(cfg, "mechanism"), "$.mechanism")
    ns = _int_list(_require(cfg, "n"), "$.n")
    mode = _resolve_mode(cfg, mech)
    verdict = symbolic_admissibility(mech)
    rows = []
    ok = verdict is not Verdict.NOT_ADMISSIBLE
    for n in ns:
        res = grid_cm_check(mech, n, mode)
        ok &= res.passed
        rows.append({"n": n, "symbolic": verdict.value, "grid": "pass" if res.passed else "fail",
                     "order": res.order, "value": None if res.value is None else format_scalar(res.value)})
    report = {"mechanism": mechanism_to_config(mech), "symbolic": verdict.value, "checks": rows,
              "admissible": ok}
    run.write_json("check.json", report)
    print(json.dumps(report, indent=2))
    return EXIT_OK if ok else EXIT_INADMISSIBLE


def cmd_dual(cfg: dict, run: Run) -> int:
    mech = mechanism_from_config(_require(cfg, "mechanism"), "$.mechanism")
    n = _as_int(cfg, "n", minimum=1)
    mode = _resolve_mode(cfg, mech)
    method = cfg.setdefault("method", "triangle")
    fw = forward_matrix(mech, n, mode)
    bw = dual_matrix(mech, n, mode, method=method)
    res = verify_duality(fw, bw, build_kernel(n))
    residuals = {"duality_phi2": format_scalar(res.max_abs), "clamped_entries": len(bw.clamped)}
    with mode.context():
        sums = bw.row_sums()
        q0 = mech.q(mode(0), mode)
        residuals["row_sum_law"] = format_scalar(max_abs(sums - np.array([q0 ** i for i in range(n + 1)],
                                                                           dtype=sums.dtype)))
    closed = None
    if isinstance(mech, Neutral):
        closed = dual_matrix_neutral_closed_form(n, mode)
    elif isinstance(mech, Mutation):
        closed = dual_matrix_mutation_closed_form(mech.mu1, mech.mu2, n, mode)
    if closed is not None:
        residuals["closed_form"] = format_scalar(max_abs(bw.entries - closed.entries))
    if isinstance(mech, Quadratic):
        residuals["zero_beyond_2i"] = all(bw.entries[i, j] == 0 for i in range(n + 1)
                                          for j in range(2 * i + 1, n + 1))
    if isinstance(mech, Neutral):
        residuals["duality_phi1"] = format_scalar(verify_duality(fw, bw, build_kernel(n, "phi1")).max_abs)
    run.write_matrix("forward.csv", fw.entries)
    run.write_matrix("dual.csv", bw.entries)
    run.write_json("dual.json", bw.manifest(residuals))
    run.residuals.update(residuals)
    print(json.dumps(residuals, indent=2, default=_jsonify))
    return EXIT_OK


def _limits_stationary(mech, n, mode, run):
    # the inverse kernel amplifies rounding by ~3^n, so float work runs at guard precision
    wmode = mode if mode.exact else Mode.floating(max(mode.bits, guard_bits(n)))
    kernel = build_kernel(n, check=n <= 64)
    pi = stationary(forward_matrix(mech, n, wmode), method="solve")
    rho = absorption(dual_matrix(mech, n, wmode), (0,))
    bridged = inverse_bridge(rho, kernel)
    with wmode.context():
        row = {"n": n, "mean": pi.mean(), "variance": pi.variance(), "rho_1": rho.values[1],
               "bridge_residual": max_abs(pi.values - bridged.values),
               "round_trip_residual": max_abs(duality_bridge(bridged, kernel).values - rho.values)}
    if isinstance(mech, Mutation):
        row["mean_target"] = n * mech.mu1 / (mech.mu1 + mech.mu2)
        row["rho_1_target"] = mech.mu2 / (mech.mu1 + mech.mu2)
    run.write_matrix(f"stationary_n{n}.csv", pi.values)
    run.write_matrix(f"rho_n{n}.csv", rho.values)
    return row


def _limits_absorbing(mech, n, mode, run):
    if mode.exact:
        rho = absorption(forward_matrix(mech, n, mode), (0,))
        law = inverse_bridge(rho, build_kernel(n, check=n <= 64))
        wmode = mode
    else:
        law, rho, bits = ancestral_limit_law(mech, n, max(mode.bits, guard_bits(n)))
        wmode = Mode.floating(bits)
    with wmode.context():
        row = {"n": n, "rho_1": rho.values[1], "mean_A": law.mean(), "variance_A": law.variance(),
               "mrca_mass": law.values[1], "law_total": sum(law.values, wmode(0))}
    run.write_matrix(f"rho_n{n}.csv", rho.values)
    run.write_matrix(f"ancestral_law_n{n}.csv", law.values)
    return row


def cmd_limits(cfg: dict, run: Run) -> int:
    mech = mechanism_from_config(_require(cfg, "mechanism"), "$.mechanism")
    ladder = _int_list(_require(cfg, "n"), "$.n")
    mode = _resolve_mode(cfg, mech)
    regime = limit_regime(mech)
    rows = []
    if regime == "stationary":
        rows = [_limits_stationary(mech, n, mode, run) for n in ladder]
    elif regime == "absorbing":
        rows = [_limits_absorbing(mech, n, mode, run) for n in ladder]
        lam = slope_at_zero(mech)
        if float(lam) > 1:
            rho, _ = gw_fixed_point(float(lam))
            ms = cfg.setdefault("ms", [1, 2, 3])
            table = gw_correction_table(mech, ladder, ms, mode if not mode.exact else Mode.floating())
            run.write_table("gw_correction.csv", table)
            diag = clt_diagnostics(AncestralAinfty(mech, ladder[-1]), ladder)
            run.write_table("ainfty_moments.csv", diag)
            run.residuals["gw_rho"] = rho
    else:
        log.warning("mixed boundary (p(0)=0 xor p(1)=1): routing to absorption analysis")
        for n in ladder:
            fw = forward_matrix(mech, n, mode)
            states = absorbing_states(fw)
            ab = absorption(fw, states[:1])
            rows.append({"n": n, "target": states[0], "rho_1": ab.values[1], "rho_start_n": ab.values[n]})
            run.write_matrix(f"rho_n{n}.csv", ab.values)
    run.write_table("ladder.csv", rows)
    run.residuals["regime"] = regime
    brief = [{k: v if isinstance(v, (int, str)) else float(v) for k, v in row.items()} for row in rows]
    print(json.dumps({"regime": regime, "rows": brief}, indent=2))
    return EXIT_OK


def cmd_simulate(cfg: dict, run: Run) -> int:
    mech = mechanism_from_config(_require(cfg, "mechanism"), "$.mechanism")
    n = _as_int(cfg, "n", minimum=1)
    m = _as_int(cfg, "m")
    k = _as_int(cfg, "k")
    r = _as_int(cfg, "horizon", 1)
    reps = _as_int(cfg, "replicates", 10000, minimum=1)
    seed = _as_int(cfg, "seed", 0)
    sampler = cfg.setdefault("sampler", "binomial")
    streams = _as_int(cfg, "streams", 1, minimum=1)
    cfg.update({"horizon": r, "replicates": reps, "seed": seed, "streams": streams})
    run.seeds.append(seed)
    try:
        sim = SimConfig(n, r, reps, seed, m, k, sampler, streams)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = duality_estimator(mech, n, m, k, r, reps, seed, sampler, streams)
    fw = simulate_forward(mech, sim)
    bw = simulate_backward(dual_matrix(mech, n), sim)
    chi = one_step_chisquare(mech, n, m, reps, seed + 1, sampler)
    chi_dual = dual_one_step_chisquare(dual_matrix(mech, n), k, reps, seed + 2)
    out = {"duality": json.loads(report.to_json()), "forward_chi_square": chi.__dict__,
           "dual_chi_square": chi_dual.__dict__, "forward": fw.summary(), "backward": bw.summary()}
    if (p := run.path("trace_forward.csv")) is not None:
        fw.to_csv(p)
    if (p := run.path("trace_backward.csv")) is not None:
        bw.to_csv(p)
    run.write_json("simulation.json", out)
    run.residuals.update({"z": report.z, "chi_square_p": chi.pvalue, "dual_chi_square_p": chi_dual.pvalue})
    print(json.dumps(out, indent=2, default=_jsonify))
    return EXIT_OK


def cmd_coalescent(cfg: dict, run: Run) -> int:
    n = _as_int(cfg, "n", minimum=1)
    law = law_from_config(_require(cfg, "law"), n, "$.law")
    b_max = _as_int(cfg, "b_max", min(n, 8), minimum=0)
    if b_max > min(n, 20):
        raise ConfigError("b_max must not exceed min(n, 20)", "$.b_max")
    cfg["b_max"] = b_max
    comp = ancestral_count_matrix(law, n, b_max)
    incl = comp.entries.copy()
    for b in range(b_max + 1):
        for a in range(b_max + 1):
            incl[b, a] = ancestral_count_inclusion_exclusion(law, n, b, a)
    gap = max_abs(comp.entries - incl)
    mergers = []
    for b in range(1, b_max + 1):
        seen = set()
        for a in range(1, b + 1):
            for c in compositions(b, a):
                key = tuple(sorted(c, reverse=True))
                if key in seen:
                    continue
                seen.add(key)
                mergers.append({"b": b, "a": a, "pattern": "-".join(map(str, key)),
                                "probability": merger_probability(law, key)})
    run.write_matrix("ancestral_compositions.csv", comp.entries)
    run.write_matrix("ancestral_inclusion_exclusion.csv", incl)
    run.write_matrix("forward_law.csv", forward_law_matrix(law).entries)
    run.write_table("mergers.csv", mergers)
    run.residuals["formula_agreement"] = format_scalar(gap)
    print(json.dumps({"law": law_to_config(law), "n": n, "b_max": b_max, "agreement": format_scalar(gap)},
                     indent=2))
    return EXIT_OK


COMMANDS = {"check": cmd_check, "dual": cmd_dual, "limits": cmd_limits,
            "simulate": cmd_simulate, "coalescent": cmd_coalescent}


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wfdual", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--out", type=Path, help="run directory (created if needed)")
        p.add_argument("--mode", choices=["rational", "float", "float64"], help="override arithmetic mode")
        p.add_argument("--bits", type=int, help="float significand bits (default from WFDUAL_PRECISION)")
        if name == "simulate":
            p.add_argument("--seed", type=int, help="override the configured seed")
    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="run directory (default: <manifest dir>-rerun)")
    return ap


def execute(command: str, cfg: dict, out: Path | None) -> int:
    run = Run(command, cfg, out)
    try:
        status = COMMANDS[command](cfg, run)
    except (ConfigError, MechanismDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CONSTRUCTION
    except InadmissibleError as exc:
        print(f"error: not admissible: {exc}", file=sys.stderr)
        run.residuals["violation"] = str(exc)
        status = EXIT_CONSTRUCTION
    except (SingularSystemError, ConvergenceError, ReducibleChainError, ArithmeticError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERICAL
    run.finish(status)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "rerun":
            manifest = _load_config(args.manifest)
            command, cfg = manifest.get("command"), manifest.get("config")
            if command not in COMMANDS or not isinstance(cfg, dict):
                raise ConfigError("manifest lacks a command and configuration")
            out = args.out or args.manifest.parent.with_name(args.manifest.parent.name + "-rerun")
            return execute(command, cfg, out)
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCTION
    if args.mode:
        cfg["mode"] = args.mode
        cfg.pop("bits", None)
    if args.bits:
        cfg["bits"] = args.bits
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return execute(args.command, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
