"""Rank arithmetic for OHIE-style parallel chains.

Blocks carry ``(rank, next_rank)``; the k chains are merged into one total
block ordering (TBO) by ascending rank with ties going to the lower chain id.
A block mined now lands on each chain with probability ``1/k``, which is all
the frontrunning and undercutting analysis below needs.  Probabilities are
exact :class:`fractions.Fraction` values.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OhieBlock:
    chain_id: int
    rank: int
    next_rank: int
    fee_value: Fraction = Fraction(0)
    position: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fee_value", Fraction(self.fee_value))
        if self.chain_id < 0:
            raise ValueError("chain_id must be >= 0")
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.next_rank <= self.rank:
            raise ValueError(f"next_rank {self.next_rank} must exceed rank {self.rank}")
        if self.fee_value < 0:
            raise ValueError("fee_value must be >= 0")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.chain_id, self.position, self.rank)

    @property
    def tbo_key(self) -> tuple[int, int]:
        return (self.rank, self.chain_id)

    def __str__(self) -> str:
        return f"chain {self.chain_id} ({self.rank},{self.next_rank})"


@dataclass(frozen=True)
class OhieChainState:
    k: int
    chains: tuple[tuple[OhieBlock, ...], ...]

    def __post_init__(self):
        chains = tuple(tuple(c) for c in self.chains)
        object.__setattr__(self, "chains", chains)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if len(chains) != self.k:
            raise ValueError(f"expected {self.k} chains, got {len(chains)}")
        for cid, chain in enumerate(chains):
            if not chain:
                raise ValueError(f"chain {cid} has no genesis block")
            if chain[0].rank != 0:
                raise ValueError(f"chain {cid} does not start at rank 0")
            for pos, b in enumerate(chain):
                if b.chain_id != cid or b.position != pos:
                    raise ValueError(f"block {b} is misplaced (chain {cid}, position {pos})")
            for prev, nxt in zip(chain, chain[1:]):
                if nxt.rank != prev.next_rank:
                    raise ValueError(f"chain {cid}: rank {nxt.rank} does not follow next_rank {prev.next_rank}")

    @classmethod
    def from_chains(cls, chains: Sequence[Sequence[tuple]]) -> OhieChainState:
        """Build from per-chain lists of ``(rank, next_rank[, fee_value])``."""
        built = []
        for cid, chain in enumerate(chains):
            built.append(tuple(OhieBlock(cid, t[0], t[1], t[2] if len(t) > 2 else 0, pos) for pos, t in enumerate(chain)))
        return cls(len(built), tuple(built))

    def tip(self, chain_id: int) -> OhieBlock:
        return self.chains[chain_id][-1]

    def blocks(self) -> Iterable[OhieBlock]:
        for chain in self.chains:
            yield from chain

    def find(self, chain_id: int, rank: int) -> OhieBlock:
        for b in self.chains[chain_id]:
            if b.rank == rank:
                return b
        raise KeyError(f"no block of rank {rank} on chain {chain_id}")

    def contains(self, block: OhieBlock) -> bool:
        c = block.chain_id
        return 0 <= c < self.k and block.position < len(self.chains[c]) and self.chains[c][block.position] == block

    def append(self, chain_id: int, next_rank: int, fee_value=0) -> OhieChainState:
        tip = self.tip(chain_id)
        b = OhieBlock(chain_id, tip.next_rank, next_rank, fee_value, tip.position + 1)
        chains = list(self.chains)
        chains[chain_id] = chains[chain_id] + (b,)
        return OhieChainState(self.k, tuple(chains))


@dataclass(frozen=True)
class LoadedState:
    state: OhieChainState
    flagged: tuple[OhieBlock, ...]


def load_state(text: str) -> LoadedState:
    """Parse ``chain_id, rank, next_rank, fee_value[, drop]`` lines.

    Blank lines and ``#`` comments are skipped.  Blocks must be listed in chain
    order; chain ids must cover ``0..k-1``.  A truthy fifth column marks the
    block as part of a drop set.
    """
    per_chain: dict[int, list[tuple]] = {}
    flags: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (4, 5):
            raise ValueError(f"line {lineno}: expected 4 or 5 fields, got {len(parts)}")
        try:
            cid, rank, nxt = int(parts[0]), int(parts[1]), int(parts[2])
            fee = Fraction(parts[3])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        per_chain.setdefault(cid, []).append((rank, nxt, fee))
        if len(parts) == 5 and parts[4].lower() in ("1", "true", "yes", "drop"):
            flags.append((cid, rank))
    if not per_chain:
        raise ValueError("state file has no blocks")
    k = max(per_chain) + 1
    if sorted(per_chain) != list(range(k)):
        raise ValueError(f"chain ids must cover 0..{k - 1}")
    state = OhieChainState.from_chains([per_chain[c] for c in range(k)])
    return LoadedState(state, tuple(state.find(c, r) for c, r in flags))


def total_block_ordering(state: OhieChainState) -> list[OhieBlock]:
    return sorted(state.blocks(), key=lambda b: b.tbo_key)


@dataclass(frozen=True)
class FrontrunResult:
    probability: Fraction
    per_chain: tuple[Fraction, ...]
    notes: tuple[str, ...] = ()


def frontrun_success_probability(
    state: OhieChainState, candidate_next_rank: int, target: OhieBlock
) -> FrontrunResult:
    """Chance that a block mined now lands ahead of ``target`` in the TBO.

    The new block lands at the tip of each chain with probability ``1/k``
    and takes that tip's ``next_rank`` as its rank.  Chains where
    ``candidate_next_rank`` would not exceed that rank contribute nothing.
    """
    if not state.contains(target):
        raise ValueError(f"target {target} is not in the state")
    share = Fraction(1, state.k)
    per_chain = []
    notes = []
    for cid in range(state.k):
        rank = state.tip(cid).next_rank
        if candidate_next_rank <= rank:
            msg = f"chain {cid}: next_rank {candidate_next_rank} <= landing rank {rank}; contributes 0"
            log.info(msg)
            notes.append(msg)
            per_chain.append(Fraction(0))
            continue
        after = state.append(cid, candidate_next_rank)
        order = total_block_ordering(after)
        new = after.tip(cid)
        precedes = order.index(new) < order.index(target)
        per_chain.append(share if precedes else Fraction(0))
    return FrontrunResult(sum(per_chain, Fraction(0)), tuple(per_chain), tuple(notes))


def expected_frontrun_reward(success_p, reward):
    if not 0 <= success_p <= 1:
        raise ValueError("success_p must lie in [0, 1]")
    if reward < 0:
        raise ValueError("reward must be >= 0")
    return success_p * reward


def stealth_next_rank(pointer_set: Iterable[OhieBlock]) -> int:
    """Largest ``next_rank`` among the blocks a deviating block points to.

    Choosing anything lower would leave the block with a smaller ``next_rank``
    than its own trailing pointer, which is detectable.
    """
    ranks = [b.next_rank for b in pointer_set]
    if not ranks:
        raise ValueError("pointer set is empty")
    return max(ranks)


@dataclass(frozen=True)
class UndercutCase:
    chain_id: int
    outcome: str  # extends | equal_fork | shorter_fork
    success: bool


@dataclass(frozen=True)
class UndercutDecision:
    verdict: str
    success_probability: Fraction
    stealable: Fraction
    expected_undercut: Fraction
    honest_reward: Fraction
    next_rank: int | None
    cases: tuple[UndercutCase, ...] = field(default_factory=tuple)

    @property
    def threshold_factor(self) -> Fraction | None:
        """Stealable-to-honest ratio the undercutter must beat."""
        if self.success_probability == 0:
            return None
        return 1 / self.success_probability


def undercut_decision(
    state: OhieChainState,
    drop_set: Iterable[OhieBlock],
    honest_reward,
    petty_majority: bool,
) -> UndercutDecision:
    """Compare forking out ``drop_set`` against mining honestly.

    On each landing chain the undercutter builds on the last kept block.  If
    nothing is dropped there it simply extends the chain and wins.  Otherwise
    it forks: against an equally long original branch petty agents prefer its
    lower ``next_rank`` (a win only with a petty majority), and against a
    longer one it is orphaned.
    """
    drops = list(drop_set)
    honest = Fraction(honest_reward)
    if honest < 0:
        raise ValueError("honest_reward must be >= 0")
    for b in drops:
        if not state.contains(b):
            raise ValueError(f"drop-set block {b} is not in the state")
        if b.position == 0:
            raise ValueError("genesis blocks cannot be dropped")
    if not drops:
        return UndercutDecision("honest", Fraction(0), Fraction(0), Fraction(0), honest, None)

    dropped = {b.key for b in drops}
    kept_tips = []
    cases = []
    for cid, chain in enumerate(state.chains):
        first_drop = next((b.position for b in chain if b.key in dropped), None)
        if first_drop is not None and any(b.key not in dropped for b in chain[first_drop:]):
            raise ValueError(f"chain {cid}: drop set must be a suffix of the chain")
        cut = len(chain) if first_drop is None else first_drop
        kept_tips.append(chain[cut - 1])
        removed = len(chain) - cut
        if removed == 0:
            cases.append(UndercutCase(cid, "extends", True))
        elif removed == 1:
            cases.append(UndercutCase(cid, "equal_fork", petty_majority))
        else:
            cases.append(UndercutCase(cid, "shorter_fork", False))

    p = Fraction(sum(c.success for c in cases), state.k)
    stealable = sum((b.fee_value for b in drops), Fraction(0))
    expected = p * stealable
    verdict = "undercut" if expected > honest else "honest"
    return UndercutDecision(verdict, p, stealable, expected, honest, stealth_next_rank(kept_tips), tuple(cases))
