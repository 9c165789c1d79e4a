"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (visible with
``-s`` or in the captured output on failure) before asserting.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from conftest import FIXTURES, SCENARIOS, race_monte_carlo
from netfair.analytics import (
    FrontrunQuery,
    NetworkParams,
    alpha_f,
    frontrun_lower_bound,
    frontrun_probability,
    linear_propagation_profile,
)
from netfair.cli import main
from netfair.game import (
    TABLE1_CLAIMED_PROFILES,
    MixedProfile,
    PayoffMatrix,
    best_response_regret,
    msne_enumerate,
    remove_dominated,
)
from netfair.mining_sim import ScenarioSim, SimConfig, StrategyConfig, run_simulation, simulate
from netfair.ohie import frontrun_success_probability, load_state, undercut_decision


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


def test_criterion_1_frontrun_numbers(report, tmp_path):
    t0 = time.perf_counter()
    q = FrontrunQuery(0.5, 0.9, 11)
    btc = frontrun_probability(NetworkParams.from_rate(1 / 600), q)
    scaled = frontrun_probability(NetworkParams.from_rate(566 / 600), q)
    code = main(["pf-sweep", "--scenario", str(SCENARIOS / "bitcoin_pf.yaml"), "--out", str(tmp_path)])
    rows = [ln.split(",") for ln in (tmp_path / "pf_sweep.csv").read_text().splitlines() if not ln.startswith("#")][1:]
    cli = {float(r[0]): float(r[2]) for r in rows}
    ok = (
        code == 0
        and abs(btc - 0.01) <= 0.005
        and abs(scaled - 0.99) <= 0.005
        and cli[1.0] == btc
        and cli[566.0] == scaled
    )
    report(1, ok, f"p_f bitcoin={btc:.5f} (0.01±0.005), x566={scaled:.5f} (0.99±0.005), {time.perf_counter() - t0:.3f}s")
    assert ok


def test_criterion_2_bound_property(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 100_000
    Ms = rng.uniform(1e-3, 0.99, n)
    lams = 10 ** rng.uniform(-6, 1, n)
    ds = rng.uniform(1e-3, 600, n)
    violations = 0
    for M, lam, d in zip(Ms, lams, ds):
        params = NetworkParams.from_rate(float(lam))
        q = FrontrunQuery(float(M), 0.99, float(d))
        if not frontrun_lower_bound(params, q) < frontrun_probability(params, q):
            violations += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0
    report(2, ok, f"{violations} violations over {n} random (M, lam, d) triples, {elapsed:.2f}s")
    assert ok


ORACLE_CONFIGS = [
    # (lam per round, delta_A, delta_B)
    (0.2, 2, 4),
    (0.2, 1, 9),
    (0.2, 5, 5),
    (0.05, 1, 3),
    (0.5, 2, 6),
    (1.0, 1, 2),
    (1.0, 3, 7),
    (2.0, 2, 5),
    (0.1, 4, 12),
    (0.3, 1, 1),
    (3.0, 1, 4),
    (0.02, 2, 3),
]


def test_criterion_3_alpha_oracle(report):
    t0 = time.perf_counter()
    trials = 1_000_000
    worst = 0.0
    failures = []
    for k, (lam, da, db) in enumerate(ORACLE_CONFIGS):
        prof = linear_propagation_profile(da, db)
        res = alpha_f(NetworkParams.from_rate(lam), prof)
        wins_a, _, left = race_monte_carlo(lam, prof, trials, seed=1000 + k, max_rounds=20_000)
        est = wins_a / trials
        sigma = math.sqrt(est * (1 - est) / trials)
        z = abs(res.psi_A - est) / sigma
        worst = max(worst, z)
        if z > 3 or left:
            failures.append((lam, da, db, round(z, 2), left))
    ok = not failures
    report(3, ok, f"{len(ORACLE_CONFIGS)} configs x {trials} trials, max |z|={worst:.2f}, failures={failures}, {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_4_alpha_properties(report):
    eps = 1e-12
    problems = []
    for lam in (0.01, 0.2, 1.0, 5.0):
        for d in (1, 4, 9):
            a = alpha_f(NetworkParams.from_rate(lam), linear_propagation_profile(d, d)).alpha_f
            if abs(a - 1) > 1e-6:
                problems.append(("symmetry", lam, d, a))
    params = NetworkParams.from_rate(0.1)
    by_db = [alpha_f(params, linear_propagation_profile(2, db)).alpha_f for db in range(2, 16)]
    if not all(b > a for a, b in zip(by_db, by_db[1:])):
        problems.append(("delta_B sweep", by_db))
    prof = linear_propagation_profile(2, 4)
    lams = np.geomspace(1e-3, 10, 15)
    by_lam = [alpha_f(NetworkParams.from_rate(float(l)), prof).alpha_f for l in lams]
    if not all(b > a for a, b in zip(by_lam, by_lam[1:])):
        problems.append(("lambda sweep", by_lam))
    for lam in (0.001, 0.1, 2.0, 30.0):
        for da, db in ((1, 2), (2, 4), (1, 9), (3, 11)):
            r = alpha_f(NetworkParams.from_rate(lam), linear_propagation_profile(da, db), epsilon=eps)
            if abs(r.psi_A + r.psi_B + r.residual - 1) > 1e-9 or not r.residual < eps:
                problems.append(("balance", lam, da, db, r))
    ok = not problems
    report(4, ok, f"symmetry, delta_B monotone ({by_db[0]:.3f}->{by_db[-1]:.3f}), lambda monotone ({by_lam[0]:.3f}->{by_lam[-1]:.3f}), mass balance; problems={problems}")
    assert ok


def test_criterion_5_simulator(report):
    t0 = time.perf_counter()
    scen = ScenarioSim(n=5, n_fast=2, rounds=5000, fast_strategy="S4", slow_strategy="S1")
    a = simulate(scen.config(seed=3), scen.distances())
    b = simulate(scen.config(seed=3), scen.distances())
    deterministic = a[0] == b[0] and list(a[1].dump_records()) == list(b[1].dump_records())

    conserved = True
    for strat in (StrategyConfig.petty(), StrategyConfig.minor_undercut(0.1), StrategyConfig.major_undercut(1.5)):
        cfg = SimConfig(1, 5000, 0.2, (strat,), max_block_size=math.inf, seed=1)
        _, store = simulate(cfg, [[0]])
        tip = list(store)[-1]
        claimed = math.fsum(blk.reward for blk in store)
        conserved &= claimed + tip.leftover == tip.round

    # Unit delays, all petty, low rate: reward share tracks win share.
    n, runs = 4, 100
    D = np.ones((n, n), dtype=int) - np.eye(n, dtype=int)
    reward = np.zeros(n)
    wins = np.zeros(n)
    forks = blocks = 0
    for seed in range(runs):
        cfg = SimConfig(n, 20_000, 0.0025, (StrategyConfig.petty(),) * n, seed=seed)
        out, store = simulate(cfg, D)
        reward += out.per_node_reward
        wins += out.per_node_wins
        forks += out.fork_count
        blocks += len(store) - 1
    r_share = reward / reward.sum()
    w_share = wins / wins.sum()
    sigma = np.sqrt(w_share * (1 - w_share) / wins.sum())
    z = np.abs(r_share - w_share) / sigma
    fair = bool(np.all(z <= 3))
    ok = deterministic and conserved and fair
    report(
        5, ok,
        f"deterministic={deterministic}, conservation={conserved}, low-rate max |z|={z.max():.2f} "
        f"(fork rate {forks / blocks:.4f}), {time.perf_counter() - t0:.1f}s",
    )
    assert ok


def _paired(scen, fast, slow, seeds):
    out = []
    base = ScenarioSim(**{**scen.__dict__, "fast_strategy": fast, "slow_strategy": slow})
    D = base.distances()
    for s in seeds:
        out.append(run_simulation(base.config(seed=s), D))
    return out


def _sign_test(diffs):
    diffs = [d for d in diffs if d != 0]
    wins = sum(d > 0 for d in diffs)
    return wins, len(diffs), binomtest(wins, len(diffs), 0.5, alternative="greater").pvalue


@pytest.mark.slow
def test_criterion_6_directional_table(report):
    t0 = time.perf_counter()
    scen = ScenarioSim()
    seeds = range(50)
    petty = _paired(scen, "S4", "S4", seeds)
    lines = []
    ok = True

    w, m, p = _sign_test([o.fast_share - o.slow_share for o in petty])
    ok &= p < 0.01
    lines.append(f"(a) fast>slow {w}/{m} p={p:.2g}")

    for label in ("S1", "S2", "S3"):
        dev = _paired(scen, "S4", label, seeds)
        diffs = [d.slow_share - b.slow_share for d, b in zip(dev, petty)]
        w, m, p = _sign_test(diffs)
        ok &= p < 0.01
        lines.append(f"(b) slow {label} vs petty {w}/{m} p={p:.2g} mean {np.mean(diffs):+.2f}")

    for label in ("S1", "S2"):
        allmajor = _paired(scen, label, label, seeds)
        diffs = [b.chain_utilization - u.chain_utilization for u, b in zip(allmajor, petty)]
        w, m, p = _sign_test(diffs)
        ok &= p < 0.01
        lines.append(
            f"(c) all-{label} utilization {np.mean([u.chain_utilization for u in allmajor]):.2f}% "
            f"< petty {np.mean([b.chain_utilization for b in petty]):.2f}% {w}/{m} p={p:.2g}"
        )
    report(6, ok, "; ".join(lines) + f"; {time.perf_counter() - t0:.0f}s")
    assert ok


def test_criterion_7_table1_solver(report):
    t0 = time.perf_counter()
    m = PayoffMatrix.from_csv((FIXTURES / "table1.csv").read_text())
    red = remove_dominated(m, 1.0)
    removed = {(r.player, r.strategy) for r in red.log}
    has_removals = {("row", "S3"), ("row", "S4"), ("col", "S4")} <= removed
    eps = 1e-9
    eqs = msne_enumerate(red.matrix, eps).equilibria
    self_ok = bool(eqs) and all(max(best_response_regret(red.matrix, e.profile)) <= eps for e in eqs)
    regrets = {}
    for name, (row, col) in TABLE1_CLAIMED_PROFILES.items():
        regrets[name] = best_response_regret(m, MixedProfile.from_labels(m, row, col))
    ok = has_removals and self_ok
    eq_text = ", ".join(f"fast {e.profile.row_mix[0]:.4f} S1 / slow {e.profile.col_mix[0]:.4f} S2" for e in eqs)
    reg_text = ", ".join(f"{k} regret (fast {r[0]:.4f}, slow {r[1]:.4f})" for k, r in regrets.items())
    report(
        7, ok,
        f"removed {sorted(removed)}; equilibria [{eq_text}] self-check ok={self_ok}; {reg_text}; "
        f"{time.perf_counter() - t0:.3f}s",
    )
    assert ok


def test_criterion_8_ohie_fixture(report):
    initial = load_state((FIXTURES / "ohie_initial.txt").read_text()).state
    p_front = frontrun_success_probability(initial, 6, initial.find(1, 2)).probability
    loaded = load_state((FIXTURES / "ohie_undercut.txt").read_text())
    d = undercut_decision(loaded.state, loaded.flagged, 4, petty_majority=True)
    ok = p_front == p_front.__class__(2, 3) and d.success_probability == p_front.__class__(2, 3)
    ok &= d.threshold_factor == p_front.__class__(3, 2)
    report(8, ok, f"frontrun p={p_front}, undercut p={d.success_probability}, threshold factor={d.threshold_factor}")
    assert ok
