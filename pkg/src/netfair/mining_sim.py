"""Discrete-round mining simulator with petty and undercutting miners.

Each round every node independently wins the block lottery with probability
``lottery_rate``.  A winner looks at the blocks it can see, picks a parent
according to its strategy and claims the fees that accrued since that parent
(one fee unit per round, plus whatever the parent left over), capped at
``max_block_size``.  Rewards are read off every chain that reaches the maximal
height and averaged.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

_LOTTERY_CHUNK = 4096


class StrategyKind(str, Enum):
    PETTY = "petty"
    MINOR_UNDERCUT = "minor_undercut"
    MAJOR_UNDERCUT = "major_undercut"
    # Bitcoin's honest rule (first block heard wins); baseline only.
    FIRST_SEEN = "first_seen"


@dataclass(frozen=True)
class StrategyConfig:
    """How a miner picks a parent and how much fee it leaves unclaimed.

    ``threshold`` defaults to ``kappa`` for major undercutters and to
    ``10 * minor_d`` for minor undercutters.  Amounts are in rounds of fees.
    """

    kind: StrategyKind = StrategyKind.PETTY
    kappa: float = 1.0
    minor_d: float = 0.1
    threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if not self.kappa > self.minor_d > 0.0:
            raise ValueError(f"need kappa > minor_d > 0, got kappa={self.kappa}, minor_d={self.minor_d}")
        if self.threshold is None:
            default = {
                StrategyKind.MAJOR_UNDERCUT: self.kappa,
                StrategyKind.MINOR_UNDERCUT: 10.0 * self.minor_d,
            }.get(self.kind, 0.0)
            object.__setattr__(self, "threshold", default)
        if self.threshold < 0.0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")

    @classmethod
    def petty(cls) -> StrategyConfig:
        return cls(StrategyKind.PETTY)

    @classmethod
    def first_seen(cls) -> StrategyConfig:
        return cls(StrategyKind.FIRST_SEEN)

    @classmethod
    def major_undercut(cls, kappa: float, threshold: float | None = None, minor_d: float = 0.1) -> StrategyConfig:
        return cls(StrategyKind.MAJOR_UNDERCUT, kappa=kappa, minor_d=minor_d, threshold=threshold)

    @classmethod
    def minor_undercut(cls, minor_d: float = 0.1, threshold: float | None = None, kappa: float = 1.0) -> StrategyConfig:
        return cls(StrategyKind.MINOR_UNDERCUT, kappa=kappa, minor_d=minor_d, threshold=threshold)

    @property
    def undercuts(self) -> bool:
        return self.kind in (StrategyKind.MAJOR_UNDERCUT, StrategyKind.MINOR_UNDERCUT)

    @property
    def leftover(self) -> float:
        if self.kind is StrategyKind.MAJOR_UNDERCUT:
            return self.kappa
        if self.kind is StrategyKind.MINOR_UNDERCUT:
            return self.minor_d
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "kappa": self.kappa, "minor_d": self.minor_d, "threshold": self.threshold}


# Strategy labels used for the fast-vs-slow game.  Accrual comes in whole
# rounds, so a threshold of 1.0 could never fire; every undercutter here forks
# a tip it sees one round after it was mined.
TABLE_STRATEGIES: dict[str, StrategyConfig] = {
    "S1": StrategyConfig.major_undercut(1.5, threshold=1.5),
    "S2": StrategyConfig.major_undercut(1.0, threshold=1.5),
    "S3": StrategyConfig.minor_undercut(0.1, threshold=1.5),
    "S4": StrategyConfig.petty(),
}


def strategy_from_spec(spec: str | dict | StrategyConfig) -> StrategyConfig:
    """Accept a table label ("S1"), a kind name ("petty") or a mapping of fields."""
    if isinstance(spec, StrategyConfig):
        return spec
    if isinstance(spec, str):
        if spec in TABLE_STRATEGIES:
            return TABLE_STRATEGIES[spec]
        return StrategyConfig(StrategyKind(spec))
    return StrategyConfig(**spec)


@dataclass(frozen=True, slots=True)
class Block:
    id: int
    parent: int | None
    miner: int | None
    round: int
    height: int
    reward: float
    leftover: float

    def accrued(self, r: int) -> float:
        """Fees claimable by a child mined at round ``r`` before the size cap."""
        return r - self.round + self.leftover


GENESIS = Block(id=0, parent=None, miner=None, round=0, height=0, reward=0.0, leftover=0.0)


class BlockStore:
    """Append-only block tree rooted at genesis."""

    def __init__(self):
        self.blocks: list[Block] = [GENESIS]
        self.children: list[list[int]] = [[]]
        self.by_height: list[list[int]] = [[0]]
        self.fork_count = 0

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    def __getitem__(self, block_id: int) -> Block:
        return self.blocks[block_id]

    @property
    def max_height(self) -> int:
        return len(self.by_height) - 1

    def add(self, parent: Block, miner: int, round_: int, reward: float, leftover: float) -> Block:
        if round_ <= parent.round:
            raise ValueError("a block must be mined after its parent")
        block = Block(len(self.blocks), parent.id, miner, round_, parent.height + 1, reward, leftover)
        if self.children[parent.id]:
            self.fork_count += 1
        self.blocks.append(block)
        self.children.append([])
        self.children[parent.id].append(block.id)
        if block.height == len(self.by_height):
            self.by_height.append([])
        self.by_height[block.height].append(block.id)
        return block

    def chain(self, tip: Block) -> list[Block]:
        """Blocks from genesis to ``tip`` inclusive."""
        out = []
        b: Block | None = tip
        while b is not None:
            out.append(b)
            b = None if b.parent is None else self.blocks[b.parent]
        out.reverse()
        return out

    def dump_records(self) -> Iterator[str]:
        """One JSON object per block, in creation order."""
        for b in self.blocks:
            yield json.dumps(asdict(b), sort_keys=True)


def validate_distance_matrix(D) -> np.ndarray:
    D = np.asarray(D)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.issubdtype(D.dtype, np.integer):
        if not np.all(np.equal(np.mod(D, 1), 0)):
            raise ValueError("distance matrix entries must be whole rounds")
        D = D.astype(np.int64)
    if np.any(np.diag(D) != 0):
        raise ValueError("D[i][i] must be 0")
    off = ~np.eye(D.shape[0], dtype=bool)
    if np.any(D[off] < 1):
        raise ValueError("off-diagonal delays must be >= 1")
    return D


def two_tier_distance_matrix(
    n: int,
    fast_set: Iterable[int],
    slow_delay: int = 3,
    slow_clusters: Sequence[Iterable[int]] | None = None,
) -> np.ndarray:
    """Delays for a fast core and slow periphery.

    Anything sent by or to a fast node arrives after one round, as does traffic
    between slow nodes in the same cluster.  Slow nodes in different clusters
    see each other's blocks after ``slow_delay`` rounds.  By default every slow
    node is its own cluster.
    """
    fast = set(fast_set)
    if slow_delay < 1:
        raise ValueError("slow_delay must be >= 1")
    cluster = {}
    if slow_clusters is None:
        for i in range(n):
            if i not in fast:
                cluster[i] = i
    else:
        for c, members in enumerate(slow_clusters):
            for i in members:
                cluster[i] = c
    D = np.ones((n, n), dtype=np.int64)
    for src in range(n):
        for dst in range(n):
            if src == dst:
                D[src, dst] = 0
            elif src in fast or dst in fast:
                D[src, dst] = 1
            elif cluster.get(src) != cluster.get(dst):
                D[src, dst] = slow_delay
    return D


@dataclass(frozen=True)
class SimConfig:
    n: int
    rounds: int
    lottery_rate: float
    strategies: tuple[StrategyConfig, ...]
    fast_set: frozenset[int] = frozenset()
    max_block_size: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fast_set", frozenset(int(i) for i in self.fast_set))
        object.__setattr__(self, "strategies", tuple(strategy_from_spec(s) for s in self.strategies))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.lottery_rate <= 1.0:
            raise ValueError(f"lottery_rate must lie in (0, 1], got {self.lottery_rate}")
        if len(self.strategies) != self.n:
            raise ValueError(f"expected {self.n} strategies, got {len(self.strategies)}")
        if any(not 0 <= i < self.n for i in self.fast_set):
            raise ValueError("fast_set contains an unknown node")
        if len(self.fast_set) >= self.n and self.n > 1:
            raise ValueError("at least one node must be slow")
        if self.max_block_size is None:
            object.__setattr__(self, "max_block_size", 1.0 / self.lottery_rate)
        if not self.max_block_size > 0.0:
            raise ValueError("max_block_size must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def slow_set(self) -> frozenset[int]:
        return frozenset(range(self.n)) - self.fast_set

    def with_strategies(self, fast: StrategyConfig, slow: StrategyConfig, seed: int | None = None) -> SimConfig:
        strategies = tuple(fast if i in self.fast_set else slow for i in range(self.n))
        return SimConfig(
            n=self.n,
            rounds=self.rounds,
            lottery_rate=self.lottery_rate,
            strategies=strategies,
            fast_set=self.fast_set,
            max_block_size=self.max_block_size,
            seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rounds": self.rounds,
            "lottery_rate": self.lottery_rate,
            "fast_set": sorted(self.fast_set),
            "max_block_size": self.max_block_size,
            "seed": self.seed,
            "strategies": [s.to_dict() for s in self.strategies],
        }


def lottery_rate_for(lam: float, n: int, round_seconds: float = 1.0) -> float:
    """Per-node per-round win probability for a network-wide block rate ``lam``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if lam <= 0 or round_seconds <= 0:
        raise ValueError("lam and round_seconds must be positive")
    return lam * round_seconds / n


@dataclass(frozen=True)
class SimOutcome:
    per_node_reward: tuple[float, ...]
    per_node_blocks: tuple[float, ...]
    per_node_wins: tuple[int, ...]
    fast_share: float
    slow_share: float
    chain_utilization: float
    fork_count: int
    orphan_count: int
    longest_height: int
    n_chains: int
    rounds: int

    @property
    def group_share(self) -> dict[str, float]:
        return {"fast": self.fast_share, "slow": self.slow_share}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_node_reward"] = list(self.per_node_reward)
        d["per_node_blocks"] = list(self.per_node_blocks)
        d["per_node_wins"] = list(self.per_node_wins)
        return d


def is_visible(block: Block, node: int, round_: int, D: np.ndarray) -> bool:
    if block.miner is None:
        return True
    return round_ - block.round >= D[block.miner, node]


def visible_blocks(store: BlockStore, node: int, round_: int, D) -> list[Block]:
    D = np.asarray(D)
    return [b for b in store if is_visible(b, node, round_, D)]


def _pick(cands: Sequence[Block], key: Callable[[Block], float], rng: np.random.Generator | None, maximize=True):
    best = max(key(b) for b in cands) if maximize else min(key(b) for b in cands)
    ties = [b for b in cands if key(b) == best]
    if len(ties) == 1 or rng is None:
        return ties[0]
    return ties[int(rng.integers(len(ties)))]


def select_parent(
    visible: Iterable[Block],
    strategy: StrategyConfig,
    round_: int,
    rng: np.random.Generator | None = None,
    arrival: Callable[[Block], int] | None = None,
) -> tuple[Block, float]:
    """Choose a parent among ``visible`` blocks; returns ``(parent, leftover)``.

    Petty miners take the maximal-height block with the most claimable fees.
    Undercutters do the same unless every such tip offers less than their
    threshold, in which case the tips' parents become candidates too and the
    richest claim wins, which usually forks the tip out.  Undercutters leave
    their leftover on every block they mine, forking or not; the block creator
    caps it by what is claimable.
    ``arrival`` (first-seen miners only) gives the round a block reached the miner.
    """
    visible = list(visible)
    if not visible:
        raise ValueError("no visible blocks")
    top = max(b.height for b in visible)
    tips = [b for b in visible if b.height == top]
    claim = lambda b: b.accrued(round_)  # noqa: E731

    if strategy.kind is StrategyKind.FIRST_SEEN:
        if arrival is None:
            raise ValueError("first_seen needs block arrival times")
        return _pick(tips, arrival, rng, maximize=False), 0.0

    cands = tips
    if strategy.undercuts and top > 0 and all(claim(b) < strategy.threshold for b in tips):
        cands = tips + [b for b in visible if b.height == top - 1]
    return _pick(cands, claim, rng), strategy.leftover


def claim_amounts(parent: Block, round_: int, leftover: float, max_block_size: float) -> tuple[float, float]:
    """(reward, leftover) for a block on ``parent`` with the size cap applied."""
    total = min(parent.accrued(round_), max_block_size)
    left = min(leftover, total)
    return total - left, left


def maximal_chains(store: BlockStore) -> list[list[Block]]:
    """Every genesis-to-leaf chain whose leaf sits at the maximal height."""
    return [store.chain(store[i]) for i in store.by_height[store.max_height]]


def _candidates(store: BlockStore, node: int, round_: int, D: np.ndarray, depth: int) -> list[Block]:
    """Visible blocks in the top ``depth`` visible heights (all a strategy ever inspects)."""
    out: list[Block] = []
    found = 0
    for h in range(store.max_height, -1, -1):
        layer = [store[i] for i in store.by_height[h] if is_visible(store[i], node, round_, D)]
        if layer:
            out.extend(layer)
            found += 1
        elif found:
            # A gap below the visible top; deeper blocks cannot be fork targets.
            break
        if found >= depth:
            break
    return out


def simulate(cfg: SimConfig, D) -> tuple[SimOutcome, BlockStore]:
    """Run one simulation; returns the outcome and the full block tree."""
    D = validate_distance_matrix(D)
    if D.shape[0] != cfg.n:
        raise ValueError(f"distance matrix is {D.shape[0]}x{D.shape[0]}, config has n={cfg.n}")
    lottery_seq, tie_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    lottery = np.random.default_rng(lottery_seq)
    ties = np.random.default_rng(tie_seq)

    store = BlockStore()
    wins = [0] * cfg.n
    cap = cfg.max_block_size
    for start in range(1, cfg.rounds + 1, _LOTTERY_CHUNK):
        stop = min(start + _LOTTERY_CHUNK, cfg.rounds + 1)
        draws = lottery.random((stop - start, cfg.n))
        for offset, node in zip(*np.nonzero(draws < cfg.lottery_rate)):
            r = start + int(offset)
            node = int(node)
            strategy = cfg.strategies[node]
            depth = 2 if strategy.undercuts else 1
            visible = _candidates(store, node, r, D, depth)
            arrival = None
            if strategy.kind is StrategyKind.FIRST_SEEN:
                arrival = lambda b, node=node: b.round + (0 if b.miner is None else int(D[b.miner, node]))  # noqa: E731
            parent, nominal = select_parent(visible, strategy, r, ties, arrival)
            reward, left = claim_amounts(parent, r, nominal, cap)
            store.add(parent, node, r, reward, left)
            wins[node] += 1

    return summarize(store, cfg, wins), store


def run_simulation(cfg: SimConfig, D) -> SimOutcome:
    return simulate(cfg, D)[0]


def summarize(store: BlockStore, cfg: SimConfig, wins: Sequence[int]) -> SimOutcome:
    chains = maximal_chains(store)
    reward = np.zeros(cfg.n)
    blocks = np.zeros(cfg.n)
    on_chain: set[int] = set()
    for chain in chains:
        for b in chain[1:]:
            reward[b.miner] += b.reward
            blocks[b.miner] += 1
            on_chain.add(b.id)
    reward /= len(chains)
    blocks /= len(chains)
    total = float(cfg.rounds)
    fast = math.fsum(reward[i] for i in sorted(cfg.fast_set))
    slow = math.fsum(reward[i] for i in sorted(cfg.slow_set))
    return SimOutcome(
        per_node_reward=tuple(float(x) for x in reward),
        per_node_blocks=tuple(float(x) for x in blocks),
        per_node_wins=tuple(int(w) for w in wins),
        fast_share=100.0 * fast / total,
        slow_share=100.0 * slow / total,
        chain_utilization=100.0 * (fast + slow) / total,
        fork_count=store.fork_count,
        orphan_count=len(store) - 1 - len(on_chain),
        longest_height=store.max_height,
        n_chains=len(chains),
        rounds=cfg.rounds,
    )


def eta_fairness_violation(outcome: SimOutcome, compute_shares: Sequence[float]) -> float:
    """Smallest eta such that every node got at least ``(1 - eta)`` of its compute share of blocks."""
    shares = np.asarray(compute_shares, dtype=float)
    if shares.shape != (len(outcome.per_node_blocks),):
        raise ValueError("one compute share per node is required")
    if np.any(shares < 0) or not math.isclose(shares.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("compute shares must be non-negative and sum to 1")
    blocks = np.asarray(outcome.per_node_blocks)
    if blocks.sum() == 0:
        return 1.0
    block_share = blocks / blocks.sum()
    mask = shares > 0
    eta = np.max(1.0 - block_share[mask] / shares[mask])
    return float(min(max(eta, 0.0), 1.0))


@dataclass
class ScenarioSim:
    """Fast/slow network description that expands into a SimConfig and distance matrix."""

    n: int = 6
    n_fast: int = 3
    lam: float = 0.5
    round_seconds: float = 1.0
    rounds: int = 40000
    slow_delay: int = 2
    slow_clusters: list[list[int]] | None = None
    max_block_size: float | None = None
    fast_strategy: str | dict = "S4"
    slow_strategy: str | dict = "S4"
    seed: int = 0

    @property
    def fast_set(self) -> frozenset[int]:
        return frozenset(range(self.n_fast))

    def config(self, seed: int | None = None) -> SimConfig:
        fast = strategy_from_spec(self.fast_strategy)
        slow = strategy_from_spec(self.slow_strategy)
        return SimConfig(
            n=self.n,
            rounds=self.rounds,
            lottery_rate=lottery_rate_for(self.lam, self.n, self.round_seconds),
            strategies=tuple(fast if i < self.n_fast else slow for i in range(self.n)),
            fast_set=self.fast_set,
            max_block_size=self.max_block_size,
            seed=self.seed if seed is None else seed,
        )

    def distances(self) -> np.ndarray:
        return two_tier_distance_matrix(self.n, self.fast_set, self.slow_delay, self.slow_clusters)
