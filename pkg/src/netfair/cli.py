"""Command-line front end.

Every subcommand resolves its whole configuration (scenario file, defaults and
flag overrides) before doing any work, so a bad scenario exits with code 2
without partial output.  Outputs are CSV files or JSON reports, each carrying
the artifact version, seed, a hash of the resolved configuration and the
configuration itself.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analytics import (
    SMALL_P,
    FrontrunQuery,
    NetworkParams,
    alpha_f,
    frontrun_lower_bound,
    frontrun_probability,
    linear_propagation_profile,
)
from .game import (
    MixedProfile,
    PayoffMatrix,
    best_response_regret,
    build_payoff_matrix,
    msne_enumerate,
    remove_dominated,
)
from .mining_sim import ScenarioSim, simulate, strategy_from_spec
from .ohie import frontrun_success_probability, load_state, total_block_ordering, undercut_decision

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

BITCOIN_INTERVAL = 600.0


class ConfigError(Exception):
    pass


def _hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _csv_text(command: str, config: dict, seed: int | None, units: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# netfair {__version__} {command}\n")
    buf.write(f"# seed: {seed}\n")
    buf.write(f"# config_sha256: {_hash(config)}\n")
    buf.write(f"# units: {units}\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True, default=str)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Fraction):
        return str(v)
    return v


def _report_text(command: str, config: dict, seed: int | None, body: dict) -> str:
    doc = {
        "artifact": "netfair",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_sha256": _hash(config),
        "config": config,
        **body,
    }
    return json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _load_scenario(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario {path} is not valid YAML: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a mapping")
    return doc


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def _check_keys(sec: dict, allowed: set[str], name: str):
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")


def _number(value, name: str) -> float:
    """Accept numbers or simple ratio strings such as ``1/600``."""
    try:
        if isinstance(value, str):
            return float(Fraction(value.strip()))
        return float(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def _sweep(spec, name: str) -> list[float]:
    """A list of values or a ``{start, stop, num, scale}`` range."""
    if isinstance(spec, list):
        vals = [_number(v, name) for v in spec]
    elif isinstance(spec, dict):
        _check_keys(spec, {"start", "stop", "num", "scale"}, name)
        try:
            start, stop, num = _number(spec["start"], name), _number(spec["stop"], name), int(spec["num"])
        except KeyError as exc:
            raise ConfigError(f"{name} range needs {exc}") from None
        scale = spec.get("scale", "linear")
        if num < 1:
            raise ConfigError(f"{name}: num must be >= 1")
        if scale == "linear":
            vals = np.linspace(start, stop, num).tolist()
        elif scale == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{name}: log range needs positive bounds")
            vals = np.geomspace(start, stop, num).tolist()
        else:
            raise ConfigError(f"{name}: unknown scale {scale!r}")
    else:
        raise ConfigError(f"{name} must be a list or a range mapping")
    if not vals:
        raise ConfigError(f"{name} is empty")
    if any(not math.isfinite(v) for v in vals):
        raise ConfigError(f"{name} has non-finite values")
    return vals


# ---------------------------------------------------------------- pf-sweep


def _resolve_pf(doc: dict, args) -> dict:
    sec = _section(doc, "pf_sweep")
    _check_keys(sec, {"M", "m", "d", "block_interval", "lam", "p", "multipliers"}, "pf_sweep")
    if "lam" in sec and "block_interval" in sec:
        raise ConfigError("give either lam or block_interval, not both")
    lam = _number(sec["lam"], "lam") if "lam" in sec else 1.0 / _number(sec.get("block_interval", BITCOIN_INTERVAL), "block_interval")
    cfg = {
        "M": _number(sec.get("M", 0.5), "M"),
        "m": _number(sec.get("m", 0.9), "m"),
        "d": _number(sec.get("d", 11.0), "d"),
        "base_lam": lam,
        "p": _number(sec.get("p", SMALL_P), "p"),
        "multipliers": _sweep(sec.get("multipliers", [0, 1, 10, 100, 566]), "multipliers"),
    }
    try:
        FrontrunQuery(cfg["M"], cfg["m"], cfg["d"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < cfg["p"] < 1:
        raise ConfigError("p must lie in (0, 1)")
    if cfg["base_lam"] <= 0 or any(x < 0 for x in cfg["multipliers"]):
        raise ConfigError("block rate and multipliers must be non-negative")
    return cfg


def cmd_pf_sweep(cfg: dict, seed):
    q = FrontrunQuery(cfg["M"], cfg["m"], cfg["d"])
    rows = []
    for mult in cfg["multipliers"]:
        lam = cfg["base_lam"] * mult
        if lam == 0.0:
            rows.append((mult, 0.0, 0.0, 0.0))
            continue
        params = NetworkParams.from_rate(lam, p=cfg["p"])
        rows.append((mult, lam, frontrun_probability(params, q), frontrun_lower_bound(params, q)))
    text = _csv_text(
        "pf-sweep", cfg, seed, "lam in blocks/s; d in s; probabilities unitless",
        ["multiplier", "lam", "p_f", "lower_bound"], rows,
    )
    return {"pf_sweep.csv": text}, EXIT_OK


# ------------------------------------------------------------- alpha-sweep


def _resolve_alpha(doc: dict, args) -> dict:
    sec = _section(doc, "alpha_sweep")
    _check_keys(sec, {"vary", "lam", "round_seconds", "delta_A", "delta_B", "p"}, "alpha_sweep")
    vary = sec.get("vary", "delta_B")
    if vary not in ("delta_B", "lam"):
        raise ConfigError("alpha_sweep.vary must be delta_B or lam")
    cfg = {
        "vary": vary,
        "round_seconds": _number(sec.get("round_seconds", 1.0), "round_seconds"),
        "p": _number(sec.get("p", SMALL_P), "p"),
        "delta_A": int(sec.get("delta_A", 2)),
        "epsilon": args.epsilon if args.epsilon is not None else 1e-12,
    }
    if vary == "delta_B":
        cfg["lam"] = _number(sec.get("lam", 0.1), "lam")
        cfg["delta_B"] = [int(v) for v in _sweep(sec.get("delta_B", list(range(2, 11))), "delta_B")]
        if cfg["lam"] <= 0:
            raise ConfigError("lam must be positive")
        points = cfg["delta_B"]
    else:
        cfg["lam"] = _sweep(sec.get("lam", {"start": 0.01, "stop": 1.0, "num": 10, "scale": "log"}), "lam")
        cfg["delta_B"] = int(sec.get("delta_B", 4))
        if any(v <= 0 for v in cfg["lam"]):
            raise ConfigError("lam values must be positive")
        points = [cfg["delta_B"]]
    if not 0 < cfg["epsilon"] < 1:
        raise ConfigError("epsilon must lie in (0, 1)")
    if not 0 < cfg["p"] < 1 or cfg["round_seconds"] <= 0:
        raise ConfigError("p must lie in (0, 1) and round_seconds must be positive")
    for db in points:
        if not 1 <= cfg["delta_A"] <= db:
            raise ConfigError(f"need 1 <= delta_A <= delta_B, got {cfg['delta_A']} and {db}")
    return cfg


def cmd_alpha_sweep(cfg: dict, seed):
    rows = []
    code = EXIT_OK
    if cfg["vary"] == "delta_B":
        params = NetworkParams.from_rate(cfg["lam"], p=cfg["p"], round_seconds=cfg["round_seconds"])
        points = [(db, params, db) for db in cfg["delta_B"]]
    else:
        points = [
            (lam, NetworkParams.from_rate(lam, p=cfg["p"], round_seconds=cfg["round_seconds"]), cfg["delta_B"])
            for lam in cfg["lam"]
        ]
    for x, params, db in points:
        res = alpha_f(params, linear_propagation_profile(cfg["delta_A"], db), epsilon=cfg["epsilon"])
        if not res.converged:
            code = EXIT_NUMERIC
            for note in res.notes:
                print(f"warning: {cfg['vary']}={x}: {note}", file=sys.stderr)
        rows.append((x, res.psi_A, res.psi_B, res.residual, res.alpha_f, res.rounds_evaluated, int(res.converged)))
    text = _csv_text(
        "alpha-sweep", cfg, seed, "lam in blocks/s; delays in rounds; psi and alpha unitless",
        [cfg["vary"], "psi_A", "psi_B", "residual", "alpha_f", "rounds", "converged"], rows,
    )
    return {"alpha_sweep.csv": text}, code


# ----------------------------------------------------------- sim / payoff

_SIM_FIELDS = {f.name for f in fields(ScenarioSim)}


def _resolve_sim(doc: dict, args) -> tuple[ScenarioSim, dict]:
    sec = dict(_section(doc, "sim"))
    extra = {k: sec.pop(k) for k in ("runs", "strategies", "jobs") if k in sec}
    _check_keys(sec, _SIM_FIELDS, "sim")
    if args.seed is not None:
        sec["seed"] = args.seed
    elif "seed" not in sec and doc.get("seed") is not None:
        sec["seed"] = doc["seed"]
    try:
        scen = ScenarioSim(**sec)
        cfg0 = scen.config()
        scen.distances()
        for s in extra.get("strategies", []):
            strategy_from_spec(s)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid sim section: {exc}") from None
    runs = args.runs if args.runs is not None else int(extra.get("runs", 1))
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    resolved = {
        "scenario": asdict(scen),
        "runs": runs,
        "sim_config": cfg0.to_dict(),
        "distance_matrix": scen.distances().tolist(),
    }
    if "strategies" in extra:
        resolved["strategies"] = list(extra["strategies"])
    jobs = args.jobs if args.jobs is not None else int(extra.get("jobs", 1))
    return scen, resolved | {"_jobs": jobs}


def cmd_sim(scen: ScenarioSim, cfg: dict, seed):
    D = scen.distances()
    rows = []
    outcomes = []
    for k in range(cfg["runs"]):
        outcome, _ = simulate(scen.config(seed=scen.seed + k), D)
        outcomes.append(outcome)
        rows.append((
            k, scen.seed + k, outcome.fast_share, outcome.slow_share, outcome.chain_utilization,
            outcome.fork_count, outcome.orphan_count, outcome.longest_height,
        ))
    text = _csv_text(
        "sim", cfg, seed, "shares and utilization in percent of total fees; counts in blocks",
        ["run", "seed", "fast_share", "slow_share", "chain_utilization", "forks", "orphans", "height"], rows,
    )
    arr = np.array([[o.fast_share, o.slow_share, o.chain_utilization] for o in outcomes])
    summary = {
        "runs": cfg["runs"],
        "mean": dict(zip(("fast_share", "slow_share", "chain_utilization"), arr.mean(axis=0).tolist())),
        "per_run": [o.to_dict() for o in outcomes],
    }
    return {"sim_runs.csv": text, "sim_report.json": _report_text("sim", cfg, seed, summary)}, EXIT_OK


def _pool_map(jobs: int):
    if jobs <= 1:
        return map, None
    import multiprocessing

    pool = multiprocessing.get_context("spawn").Pool(jobs)
    return pool.map, pool


def cmd_payoff(scen: ScenarioSim, cfg: dict, seed):
    labels = cfg.get("strategies", ["S1", "S2", "S3", "S4"])
    map_fn, pool = _pool_map(cfg["_jobs"])
    try:
        matrix = build_payoff_matrix(labels, scen.config(), scen.distances(), cfg["runs"], map_fn=map_fn)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    body = matrix.to_csv().splitlines()
    rows = [r.split(",") for r in body[1:]]
    text = _csv_text(
        "payoff", _public(cfg), seed, "payoffs in percent of total fees; stderr is the standard error of the mean",
        body[0].split(","), rows,
    )
    return {"payoff.csv": text}, EXIT_OK


def _public(cfg: dict) -> dict:
    # Parallelism does not change results, so it stays out of the hash.
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# ------------------------------------------------------------------ solve


def _resolve_solve(doc: dict, args) -> tuple[PayoffMatrix, dict]:
    sec = _section(doc, "solve")
    _check_keys(sec, {"matrix", "tolerance", "epsilon", "mode", "profiles"}, "solve")
    path = args.matrix or sec.get("matrix")
    if path is None:
        raise ConfigError("solve needs a matrix file")
    if args.matrix is None and args.scenario:
        path = str((Path(args.scenario).parent / path))
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from None
    try:
        matrix = PayoffMatrix.from_csv(text)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid matrix file: {exc}") from None
    cfg = {
        "matrix_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "tolerance": args.tolerance if args.tolerance is not None else _number(sec.get("tolerance", 0.0), "tolerance"),
        "epsilon": args.epsilon if args.epsilon is not None else _number(sec.get("epsilon", 1e-9), "epsilon"),
        "mode": sec.get("mode", "iterated"),
        "profiles": sec.get("profiles", {}),
    }
    if cfg["tolerance"] < 0 or cfg["epsilon"] < 0:
        raise ConfigError("tolerance and epsilon must be non-negative")
    if cfg["mode"] not in ("iterated", "single_pass"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    try:
        for name, prof in cfg["profiles"].items():
            MixedProfile.from_labels(matrix, prof["row"], prof["col"])
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"invalid profile: {exc}") from None
    return matrix, cfg


def cmd_solve(matrix: PayoffMatrix, cfg: dict, seed):
    red = remove_dominated(matrix, cfg["tolerance"], cfg["mode"])
    enum = msne_enumerate(red.matrix, cfg["epsilon"])
    body = {
        "removal_log": [asdict(r) for r in red.log],
        "surviving": {"row": list(red.matrix.row_strategies), "col": list(red.matrix.col_strategies)},
        "equilibria": [
            {
                "row_mix": dict(zip(red.matrix.row_strategies, eq.profile.row_mix)),
                "col_mix": dict(zip(red.matrix.col_strategies, eq.profile.col_mix)),
                "row_value": eq.row_value,
                "col_value": eq.col_value,
                "row_regret": eq.row_regret,
                "col_regret": eq.col_regret,
            }
            for eq in enum.equilibria
        ],
        "diagnostics": enum.diagnostics,
        "profiles": {},
    }
    for name, prof in cfg["profiles"].items():
        entry = {}
        rr, cr = best_response_regret(matrix, MixedProfile.from_labels(matrix, prof["row"], prof["col"]))
        entry["full_game"] = {"row_regret": rr, "col_regret": cr}
        inside = set(prof["row"]) <= set(red.matrix.row_strategies) and set(prof["col"]) <= set(red.matrix.col_strategies)
        if inside:
            rr, cr = best_response_regret(red.matrix, MixedProfile.from_labels(red.matrix, prof["row"], prof["col"]))
            entry["reduced_game"] = {"row_regret": rr, "col_regret": cr}
        else:
            entry["reduced_game"] = "profile uses a removed strategy"
        body["profiles"][name] = entry
    return {"solve_report.json": _report_text("solve", cfg, seed, body)}, EXIT_OK


# ------------------------------------------------------------------- ohie


def _resolve_ohie(doc: dict, args):
    sec = _section(doc, "ohie")
    _check_keys(sec, {"state", "target", "candidate_next_rank", "honest_reward", "petty_majority"}, "ohie")
    path = args.state or sec.get("state")
    if path is None:
        raise ConfigError("ohie needs a state file")
    if args.state is None and args.scenario:
        path = str(Path(args.scenario).parent / path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read state {path}: {exc}") from None
    try:
        loaded = load_state(text)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid state file: {exc}") from None
    state = loaded.state
    target = args.target or sec.get("target")
    if isinstance(target, str):
        target = [int(v) for v in target.split(",")]
    candidate = args.candidate_next_rank or sec.get("candidate_next_rank")
    if candidate is None:
        candidate = max(state.tip(c).next_rank for c in range(state.k))
    petty = sec.get("petty_majority", True) if args.petty_majority is None else args.petty_majority
    cfg = {
        "state_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "k": state.k,
        "target": target,
        "candidate_next_rank": int(candidate),
        "honest_reward": str(Fraction(str(args.honest_reward or sec.get("honest_reward", 0)))),
        "petty_majority": bool(petty),
    }
    try:
        targets = [state.find(*target)] if target else [b for b in total_block_ordering(state) if b.position > 0]
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"invalid target: {exc}") from None
    return (loaded, targets), cfg


def cmd_ohie(inputs, cfg: dict, seed):
    loaded, targets = inputs
    state = loaded.state
    body: dict = {"tbo": [[b.chain_id, b.rank, b.next_rank] for b in total_block_ordering(state)]}
    body["frontrun"] = []
    for t in targets:
        res = frontrun_success_probability(state, cfg["candidate_next_rank"], t)
        body["frontrun"].append({
            "target": [t.chain_id, t.rank, t.next_rank],
            "probability": res.probability,
            "per_chain": list(res.per_chain),
            "expected_reward": res.probability * t.fee_value,
            "notes": list(res.notes),
        })
    if loaded.flagged:
        d = undercut_decision(state, loaded.flagged, Fraction(cfg["honest_reward"]), cfg["petty_majority"])
        body["undercut"] = {
            "verdict": d.verdict,
            "success_probability": d.success_probability,
            "threshold_factor": d.threshold_factor,
            "stealable": d.stealable,
            "expected_undercut_reward": d.expected_undercut,
            "honest_reward": d.honest_reward,
            "stealth_next_rank": d.next_rank,
            "cases": [asdict(c) for c in d.cases],
        }
    return {"ohie_report.json": _report_text("ohie", cfg, seed, body)}, EXIT_OK


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netfair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"netfair {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="YAML scenario file")
    common.add_argument("--seed", type=int, help="base RNG seed (overrides the scenario)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--epsilon", type=float, help="series cutoff or equilibrium regret tolerance")
    common.add_argument("--tolerance", type=float, help="dominance tolerance for solve")
    common.add_argument("--runs", type=int, help="seeded runs per simulation or payoff cell")
    common.add_argument("--jobs", type=int, help="worker processes for payoff (results are order-stable)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pf-sweep", parents=[common], help="frontrunning probability vs throughput")
    sub.add_parser("alpha-sweep", parents=[common], help="publishing fairness vs delay or block rate")
    sub.add_parser("sim", parents=[common], help="run the mining simulator")
    sub.add_parser("payoff", parents=[common], help="build the fast-vs-slow payoff matrix")
    solve = sub.add_parser("solve", parents=[common], help="reduce and solve a payoff matrix")
    solve.add_argument("matrix", nargs="?", help="payoff matrix CSV")
    ohie = sub.add_parser("ohie", parents=[common], help="OHIE frontrunning and undercutting")
    ohie.add_argument("state", nargs="?", help="chain state file")
    ohie.add_argument("--target", help="target block as chain_id,rank")
    ohie.add_argument("--candidate-next-rank", type=int)
    ohie.add_argument("--honest-reward")
    ohie.add_argument("--petty-majority", action=argparse.BooleanOptionalAction, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc = _load_scenario(args.scenario)
        seed = args.seed if args.seed is not None else doc.get("seed")
        if args.command == "pf-sweep":
            cfg = _resolve_pf(doc, args)
            run = lambda: cmd_pf_sweep(cfg, seed)  # noqa: E731
        elif args.command == "alpha-sweep":
            cfg = _resolve_alpha(doc, args)
            run = lambda: cmd_alpha_sweep(cfg, seed)  # noqa: E731
        elif args.command in ("sim", "payoff"):
            scen, cfg = _resolve_sim(doc, args)
            seed = scen.seed
            if args.command == "sim":
                run = lambda: cmd_sim(scen, _public(cfg), seed)  # noqa: E731
            else:
                run = lambda: cmd_payoff(scen, cfg, seed)  # noqa: E731
        elif args.command == "solve":
            matrix, cfg = _resolve_solve(doc, args)
            run = lambda: cmd_solve(matrix, cfg, seed)  # noqa: E731
        else:
            inputs, cfg = _resolve_ohie(doc, args)
            run = lambda: cmd_ohie(inputs, cfg, seed)  # noqa: E731
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outputs, code = run()
    out = Path(args.out)
    for name, text in outputs.items():
        path = _write(out, name, text)
        print(f"wrote {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
