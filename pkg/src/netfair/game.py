"""Two-player (fast vs slow) bimatrix games built from simulator runs.

Includes tolerance-aware elimination of weakly dominated strategies, support
enumeration for mixed equilibria and a regret check used to audit any claimed
equilibrium.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .mining_sim import SimConfig, run_simulation, strategy_from_spec

ROW, COL = "row", "col"


@dataclass(frozen=True, eq=False)
class PayoffMatrix:
    """Row player (fast agents) vs column player (slow agents).

    Payoffs are percentages of total fees; ``stderr`` holds the per-cell
    standard error of (row, col) payoffs when the matrix came from simulation.
    """

    row_strategies: tuple[str, ...]
    col_strategies: tuple[str, ...]
    row_payoff: np.ndarray
    col_payoff: np.ndarray
    row_stderr: np.ndarray | None = None
    col_stderr: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "row_strategies", tuple(self.row_strategies))
        object.__setattr__(self, "col_strategies", tuple(self.col_strategies))
        shape = (len(self.row_strategies), len(self.col_strategies))
        for name in ("row_payoff", "col_payoff", "row_stderr", "col_stderr"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.array(value, dtype=float)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
            if value.shape != shape:
                raise ValueError(f"{name} has shape {value.shape}, expected {shape}")
        if not (np.all(np.isfinite(self.row_payoff)) and np.all(np.isfinite(self.col_payoff))):
            raise ValueError("payoffs must be finite")
        if np.any(self.row_payoff < 0) or np.any(self.col_payoff < 0):
            raise ValueError("payoffs must be non-negative")
        if len(set(self.row_strategies)) != shape[0] or len(set(self.col_strategies)) != shape[1]:
            raise ValueError("strategy labels must be unique per player")

    def __eq__(self, other):
        if not isinstance(other, PayoffMatrix):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (  # noqa: E731
            a is not None and b is not None and np.array_equal(a, b)
        )
        return (
            self.row_strategies == other.row_strategies
            and self.col_strategies == other.col_strategies
            and all(same(getattr(self, f), getattr(other, f)) for f in ("row_payoff", "col_payoff", "row_stderr", "col_stderr"))
        )

    __hash__ = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_payoff.shape

    def labels(self, player: str) -> tuple[str, ...]:
        return self.row_strategies if player == ROW else self.col_strategies

    def restrict(self, rows: Iterable[str] | None = None, cols: Iterable[str] | None = None) -> PayoffMatrix:
        """Sub-game keeping the named strategies, in the original order."""
        keep_r = set(self.row_strategies if rows is None else rows)
        keep_c = set(self.col_strategies if cols is None else cols)
        unknown = (keep_r - set(self.row_strategies)) | (keep_c - set(self.col_strategies))
        if unknown:
            raise KeyError(f"unknown strategies: {sorted(unknown)}")
        ri = [i for i, s in enumerate(self.row_strategies) if s in keep_r]
        ci = [j for j, s in enumerate(self.col_strategies) if s in keep_c]
        pick = lambda a: None if a is None else a[np.ix_(ri, ci)]  # noqa: E731
        return PayoffMatrix(
            tuple(self.row_strategies[i] for i in ri),
            tuple(self.col_strategies[j] for j in ci),
            pick(self.row_payoff),
            pick(self.col_payoff),
            pick(self.row_stderr),
            pick(self.col_stderr),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "row_payoff", "col_payoff", "row_stderr", "col_stderr"])
        for i, r in enumerate(self.row_strategies):
            for j, c in enumerate(self.col_strategies):
                rs = "" if self.row_stderr is None else repr(float(self.row_stderr[i, j]))
                cs = "" if self.col_stderr is None else repr(float(self.col_stderr[i, j]))
                w.writerow([r, c, repr(float(self.row_payoff[i, j])), repr(float(self.col_payoff[i, j])), rs, cs])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> PayoffMatrix:
        """Parse the cell-per-line CSV written by :meth:`to_csv`.

        Lines starting with ``#`` are ignored.  A single ``stderr`` column is
        accepted in place of the row/col pair; stderr columns may be blank.
        """
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        reader = csv.DictReader(lines)
        if reader.fieldnames is None:
            raise ValueError("empty payoff table")
        fields = [f.strip() for f in reader.fieldnames]
        missing = {"row", "col", "row_payoff", "col_payoff"} - set(fields)
        if missing:
            raise ValueError(f"payoff table is missing columns: {sorted(missing)}")
        cells: dict[tuple[str, str], tuple[float, float, float | None, float | None]] = {}
        rows: list[str] = []
        cols: list[str] = []
        for rec in reader:
            rec = {k.strip(): (v or "").strip() for k, v in rec.items() if k is not None}
            r, c = rec["row"], rec["col"]
            if (r, c) in cells:
                raise ValueError(f"duplicate cell ({r}, {c})")
            rs = rec.get("row_stderr", rec.get("stderr", ""))
            cs = rec.get("col_stderr", rec.get("stderr", ""))
            cells[(r, c)] = (
                float(rec["row_payoff"]),
                float(rec["col_payoff"]),
                float(rs) if rs else None,
                float(cs) if cs else None,
            )
            if r not in rows:
                rows.append(r)
            if c not in cols:
                cols.append(c)
        if len(cells) != len(rows) * len(cols):
            raise ValueError("payoff table is not rectangular")
        grid = np.array([[cells[(r, c)] for c in cols] for r in rows], dtype=object)
        rp = grid[:, :, 0].astype(float)
        cp = grid[:, :, 1].astype(float)
        has_se = all(v[2] is not None and v[3] is not None for v in cells.values())
        rse = grid[:, :, 2].astype(float) if has_se else None
        cse = grid[:, :, 3].astype(float) if has_se else None
        return cls(tuple(rows), tuple(cols), rp, cp, rse, cse)


@dataclass(frozen=True)
class MixedProfile:
    row_mix: tuple[float, ...]
    col_mix: tuple[float, ...]

    def __post_init__(self):
        for name in ("row_mix", "col_mix"):
            v = tuple(float(x) for x in getattr(self, name))
            object.__setattr__(self, name, v)
            if any(x < -1e-12 for x in v) or not math.isclose(sum(v), 1.0, abs_tol=1e-9):
                raise ValueError(f"{name} is not a probability vector: {v}")

    @classmethod
    def from_labels(cls, matrix: PayoffMatrix, row: dict[str, float], col: dict[str, float]) -> MixedProfile:
        unknown = (set(row) - set(matrix.row_strategies)) | (set(col) - set(matrix.col_strategies))
        if unknown:
            raise KeyError(f"unknown strategies: {sorted(unknown)}")
        return cls(
            tuple(row.get(s, 0.0) for s in matrix.row_strategies),
            tuple(col.get(s, 0.0) for s in matrix.col_strategies),
        )


def best_response_regret(matrix: PayoffMatrix, profile: MixedProfile) -> tuple[float, float]:
    """Largest gain either player can get from a pure deviation."""
    x = np.asarray(profile.row_mix)
    y = np.asarray(profile.col_mix)
    if x.shape != (matrix.shape[0],) or y.shape != (matrix.shape[1],):
        raise ValueError("profile dimensions do not match the matrix")
    A, B = matrix.row_payoff, matrix.col_payoff
    row_values = A @ y
    col_values = x @ B
    return float(row_values.max() - x @ row_values), float(col_values.max() - col_values @ y)


@dataclass(frozen=True)
class Removal:
    pass_index: int
    player: str
    strategy: str
    dominator: str
    # Opponent strategies where the dominator did worse, by at most the tolerance.
    forgiven: tuple[tuple[str, float, float], ...]


@dataclass(frozen=True)
class ReductionResult:
    matrix: PayoffMatrix
    log: tuple[Removal, ...]
    tolerance: float
    mode: str

    def removed(self, player: str) -> list[str]:
        return [r.strategy for r in self.log if r.player == player]


def _dominator(payoffs: np.ndarray, s: int, alive: Sequence[int], tol: float) -> int | None:
    for t in alive:
        if t == s:
            continue
        if np.all(payoffs[t] >= payoffs[s] - tol) and np.any(payoffs[t] > payoffs[s]):
            return t
    return None


def _dominance_pass(payoffs: np.ndarray, alive: list[int], tol: float) -> dict[int, int]:
    """Strategies dominated by some strategy that is itself undominated this pass.

    Dominance with a tolerance is not transitive, so two strategies can each
    dominate the other; requiring an undominated dominator keeps every player's
    set non-empty.
    """
    dominated = {s: _dominator(payoffs, s, alive, tol) for s in alive}
    survivors = [s for s in alive if dominated[s] is None]
    out = {}
    for s in alive:
        if dominated[s] is None:
            continue
        t = _dominator(payoffs, s, survivors, tol)
        if t is not None:
            out[s] = t
    return out


def remove_dominated(matrix: PayoffMatrix, tolerance: float = 0.0, mode: str = "iterated") -> ReductionResult:
    """Eliminate weakly dominated strategies, forgiving losses up to ``tolerance``.

    ``s'`` dominates ``s`` when it is never worse by more than ``tolerance``
    and strictly better against at least one opponent strategy.  Each pass
    handles the row player then the column player on the current sub-game.
    ``iterated`` repeats until nothing changes; ``single_pass`` judges both
    players once against the full matrix.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    if mode not in ("iterated", "single_pass"):
        raise ValueError(f"unknown mode {mode!r}")
    rows = list(range(matrix.shape[0]))
    cols = list(range(matrix.shape[1]))
    log: list[Removal] = []
    pass_index = 0
    while True:
        pass_index += 1
        changed = False
        full_rows, full_cols = list(range(matrix.shape[0])), list(range(matrix.shape[1]))
        for player in (ROW, COL):
            if player == ROW:
                own, table = rows, matrix.row_payoff
                index, opp = (list(rows), list(cols)) if mode == "iterated" else (full_rows, full_cols)
            else:
                own, table = cols, matrix.col_payoff.T
                index, opp = (list(cols), list(rows)) if mode == "iterated" else (full_cols, full_rows)
            payoffs = table[np.ix_(index, opp)]
            hits = _dominance_pass(payoffs, list(range(len(index))), tolerance)
            labels = matrix.labels(player)
            opp_labels = matrix.labels(COL if player == ROW else ROW)
            for s_local, t_local in sorted(hits.items()):
                s, t = index[s_local], index[t_local]
                forgiven = tuple(
                    (opp_labels[opp[k]], float(payoffs[t_local, k]), float(payoffs[s_local, k]))
                    for k in range(len(opp))
                    if payoffs[t_local, k] < payoffs[s_local, k]
                )
                log.append(Removal(pass_index, player, labels[s], labels[t], forgiven))
                own.remove(s)
                changed = True
        if mode == "single_pass" or not changed:
            break
    reduced = matrix.restrict(
        [matrix.row_strategies[i] for i in rows],
        [matrix.col_strategies[j] for j in cols],
    )
    return ReductionResult(reduced, tuple(log), tolerance, mode)


def replay_removals(matrix: PayoffMatrix, log: Iterable[Removal]) -> PayoffMatrix:
    rows = [s for s in matrix.row_strategies]
    cols = [s for s in matrix.col_strategies]
    for r in log:
        (rows if r.player == ROW else cols).remove(r.strategy)
    return matrix.restrict(rows, cols)


@dataclass(frozen=True)
class Equilibrium:
    profile: MixedProfile
    row_value: float
    col_value: float
    row_regret: float
    col_regret: float

    @property
    def regret(self) -> float:
        return max(self.row_regret, self.col_regret)


@dataclass
class EnumerationResult:
    equilibria: list[Equilibrium]
    diagnostics: list[str] = field(default_factory=list)


def _indifference(payoffs: np.ndarray, support: Sequence[int], opp_support: Sequence[int]):
    """Solve for the opponent mix over ``opp_support`` that equalizes ``support``.

    ``payoffs[i, j]`` is the payoff of own strategy i against opponent j.
    Returns (mix, value, rank_deficient) or None when the system is inconsistent.
    """
    k, m = len(support), len(opp_support)
    M = np.zeros((k + 1, m + 1))
    M[:k, :m] = payoffs[np.ix_(support, opp_support)]
    M[:k, m] = -1.0
    M[k, :m] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
    if not np.allclose(M @ sol, rhs, atol=1e-9):
        return None
    return sol[:m], sol[m], rank < m + 1


def msne_enumerate(matrix: PayoffMatrix, epsilon: float = 1e-9) -> EnumerationResult:
    """All equilibria found by enumerating support pairs.

    For every pair of supports the indifference conditions are solved for
    both players; solutions with a negative weight or a profitable deviation
    above ``epsilon`` are discarded.  Degenerate (rank-deficient) systems are
    noted in ``diagnostics``; their least-squares solution is still checked.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    A, B = matrix.row_payoff, matrix.col_payoff
    n_rows, n_cols = A.shape
    found: list[Equilibrium] = []
    seen: set[tuple] = set()
    result = EnumerationResult(found)
    for kr in range(1, n_rows + 1):
        for kc in range(1, n_cols + 1):
            for I in itertools.combinations(range(n_rows), kr):
                for J in itertools.combinations(range(n_cols), kc):
                    col_sol = _indifference(A, I, J)
                    row_sol = _indifference(B.T, J, I)
                    if col_sol is None or row_sol is None:
                        continue
                    y_s, _, deg_y = col_sol
                    x_s, _, deg_x = row_sol
                    if deg_x or deg_y:
                        result.diagnostics.append(
                            f"degenerate support rows={[matrix.row_strategies[i] for i in I]} "
                            f"cols={[matrix.col_strategies[j] for j in J]}"
                        )
                    if np.any(x_s < -1e-9) or np.any(y_s < -1e-9):
                        continue
                    x = np.zeros(n_rows)
                    y = np.zeros(n_cols)
                    x[list(I)] = np.clip(x_s, 0.0, None)
                    y[list(J)] = np.clip(y_s, 0.0, None)
                    x /= x.sum()
                    y /= y.sum()
                    profile = MixedProfile(tuple(x), tuple(y))
                    rr, cr = best_response_regret(matrix, profile)
                    if rr > epsilon or cr > epsilon:
                        continue
                    key = tuple(np.round(np.concatenate([x, y]), 9))
                    if key in seen:
                        continue
                    seen.add(key)
                    found.append(Equilibrium(profile, float(x @ A @ y), float(x @ B @ y), rr, cr))
    return result


def build_payoff_matrix(
    strategy_sets: Sequence[str],
    sim_template: SimConfig,
    D,
    runs: int,
    col_strategies: Sequence[str] | None = None,
    map_fn: Callable = map,
) -> PayoffMatrix:
    """Simulate every (fast strategy, slow strategy) cell ``runs`` times.

    Run ``k`` of every cell uses seed ``sim_template.seed + k`` so cells are
    paired on the lottery stream.  ``map_fn`` may be a pool's ``map``; results
    are consumed in input order either way.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rows = list(strategy_sets)
    cols = list(strategy_sets if col_strategies is None else col_strategies)
    jobs = []
    for r in rows:
        for c in cols:
            fast, slow = strategy_from_spec(r), strategy_from_spec(c)
            for k in range(runs):
                jobs.append(sim_template.with_strategies(fast, slow, seed=sim_template.seed + k))
    outcomes = list(map_fn(_run_cell, [(cfg, D) for cfg in jobs]))
    fast = np.array([o.fast_share for o in outcomes]).reshape(len(rows), len(cols), runs)
    slow = np.array([o.slow_share for o in outcomes]).reshape(len(rows), len(cols), runs)
    se = lambda a: a.std(axis=2, ddof=1) / math.sqrt(runs) if runs > 1 else np.zeros(a.shape[:2])  # noqa: E731
    return PayoffMatrix(tuple(rows), tuple(cols), fast.mean(axis=2), slow.mean(axis=2), se(fast), se(slow))


def _run_cell(args):
    cfg, D = args
    return run_simulation(cfg, D)


# Payoff matrix reported for fast (rows) vs slow (columns) agents, percent of total fees.
TABLE1_LABELS = ("S1", "S2", "S3", "S4")
TABLE1_ROW = [
    [75.22, 71.72, 74.29, 73.75],
    [75.22, 76.05, 72.17, 74.99],
    [63.30, 63.35, 66.90, 74.02],
    [63.41, 64.04, 56.66, 67.54],
]
TABLE1_COL = [
    [19.13, 23.12, 21.54, 22.17],
    [19.86, 19.56, 24.24, 21.74],
    [33.17, 33.84, 30.68, 23.60],
    [33.06, 33.29, 40.78, 30.26],
]


def table1_matrix() -> PayoffMatrix:
    return PayoffMatrix(TABLE1_LABELS, TABLE1_LABELS, np.array(TABLE1_ROW), np.array(TABLE1_COL))


# The two mixed profiles stated alongside the table.
TABLE1_CLAIMED_PROFILES = {
    "claimed_1": ({"S1": 0.74, "S2": 0.26}, {"S2": 0.32, "S3": 0.68}),
    "claimed_2": ({"S1": 0.06, "S2": 0.94}, {"S1": 1.0}),
}
