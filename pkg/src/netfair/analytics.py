"""Closed-form fairness quantities for proof-of-work networks.

Covers the fail function, the probability that a fast fraction of the network
frontruns a slow fraction, and publishing fairness (alpha_f) for two blocks
mined in the same round by nodes with different propagation delays.

Every probability is a plain float.  Exponents are carried in log space so that
very large query counts (high hash rate, long windows) do not underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Per-query success probability used when only the block rate is known.  All
# reported quantities depend on lambda * t alone once p is this small.
SMALL_P = 1e-9

DEFAULT_EPSILON = 1e-12

# A per-round undecided probability this close to 1 cannot drive the series
# below epsilon in any reasonable number of rounds.
_STALL = 1.0 - 1e-15


@dataclass(frozen=True)
class NetworkParams:
    """Mining network parameters.

    ``lam`` is the block creation rate in blocks per second and must equal
    ``p * hash_rate_H``; pass it only to have the identity checked.
    """

    p: float
    hash_rate_H: float
    lam: float | None = None
    round_seconds: float = 1.0
    n_nodes: int = 1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not self.hash_rate_H > 0.0:
            raise ValueError(f"hash_rate_H must be positive, got {self.hash_rate_H}")
        if not self.round_seconds > 0.0:
            raise ValueError(f"round_seconds must be positive, got {self.round_seconds}")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        rate = self.p * self.hash_rate_H
        if self.lam is None:
            object.__setattr__(self, "lam", rate)
        elif not math.isclose(self.lam, rate, rel_tol=1e-12):
            raise ValueError(f"lam={self.lam} does not equal p*H={rate}")

    @classmethod
    def from_rate(
        cls,
        lam: float,
        p: float = SMALL_P,
        round_seconds: float = 1.0,
        n_nodes: int = 1,
    ) -> NetworkParams:
        """Build parameters from a block rate, synthesizing H = lam / p."""
        if not lam > 0.0:
            raise ValueError(f"block rate must be positive, got {lam}")
        return cls(p=p, hash_rate_H=lam / p, round_seconds=round_seconds, n_nodes=n_nodes)

    @property
    def log_fail_per_query(self) -> float:
        return math.log1p(-self.p)

    @property
    def lam_per_round(self) -> float:
        return self.lam * self.round_seconds


@dataclass(frozen=True)
class FrontrunQuery:
    """Top-``M`` fraction racing the bottom ``1 - m`` fraction with a head start ``d`` seconds."""

    M: float
    m: float
    d: float

    def __post_init__(self):
        if not 0.0 < self.M <= 1.0:
            raise ValueError(f"M must lie in (0, 1], got {self.M}")
        if not 0.0 <= self.m < 1.0:
            raise ValueError(f"m must lie in [0, 1), got {self.m}")
        if self.M > self.m:
            raise ValueError(f"percentile bands overlap: M={self.M} > m={self.m}")
        if not self.d >= 0.0:
            raise ValueError(f"d must be non-negative, got {self.d}")


def _log_fail(params: NetworkParams, phi: float, t: float) -> float:
    return phi * params.hash_rate_H * t * params.log_fail_per_query


def fail(params: NetworkParams, phi: float, t: float) -> float:
    """Probability that a ``phi`` fraction of the hash power mines nothing in ``t`` seconds."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    if not t >= 0.0:
        raise ValueError(f"t must be non-negative, got {t}")
    return math.exp(_log_fail(params, phi, t))


def succeed(params: NetworkParams, phi: float, t: float) -> float:
    """``1 - fail`` without cancellation for small exponents."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    if not t >= 0.0:
        raise ValueError(f"t must be non-negative, got {t}")
    return -math.expm1(_log_fail(params, phi, t))


def frontrun_probability(params: NetworkParams, q: FrontrunQuery) -> float:
    """Exact probability that the top-M fraction mines the transaction within its head start."""
    return succeed(params, q.M, q.d)


def frontrun_lower_bound(params: NetworkParams, q: FrontrunQuery) -> float:
    """Second-order lower bound ``x - x**2/2`` with ``x = M * lam * d``.

    Goes negative once x > 2; it is still a (loose) lower bound there.
    """
    x = q.M * params.lam * q.d
    return x - 0.5 * x * x


@dataclass(frozen=True)
class PropagationProfile:
    """Per-round fractions of the network holding block A or block B first.

    Index ``i`` is the number of rounds since both blocks were mined; values past
    the end of the stored sequences repeat the final (saturated) split.
    ``delta_A <= delta_B`` is the usual orientation but a swapped profile (B the
    faster block) is accepted as well.
    """

    delta_A: int
    delta_B: int
    phi_A: tuple[float, ...]
    phi_B: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "phi_A", tuple(float(v) for v in self.phi_A))
        object.__setattr__(self, "phi_B", tuple(float(v) for v in self.phi_B))
        if self.delta_A < 1 or self.delta_B < 1:
            raise ValueError("propagation delays must be >= 1 round")
        if len(self.phi_A) != len(self.phi_B):
            raise ValueError("phi_A and phi_B must have the same length")
        horizon = max(self.delta_A, self.delta_B)
        if len(self.phi_A) < horizon + 1:
            raise ValueError(f"profile must cover rounds 0..{horizon}")
        for name, seq in (("phi_A", self.phi_A), ("phi_B", self.phi_B)):
            if any(not 0.0 <= v <= 1.0 for v in seq):
                raise ValueError(f"{name} values must lie in [0, 1]")
            if any(b < a for a, b in zip(seq, seq[1:])):
                raise ValueError(f"{name} must be non-decreasing")
        if any(a + b > 1.0 + 1e-12 for a, b in zip(self.phi_A, self.phi_B)):
            raise ValueError("phi_A + phi_B exceeds 1")
        total = self.delta_A + self.delta_B
        final_A, final_B = self.delta_B / total, self.delta_A / total
        for a, b in zip(self.phi_A[horizon:], self.phi_B[horizon:]):
            if abs(a - final_A) > 1e-12 or abs(b - final_B) > 1e-12:
                raise ValueError("profile is not saturated at the final split by round max(delta)")

    @property
    def saturation_round(self) -> int:
        return len(self.phi_A) - 1

    def at(self, i: int) -> tuple[float, float]:
        j = min(i, self.saturation_round)
        return self.phi_A[j], self.phi_B[j]

    def swapped(self) -> PropagationProfile:
        return PropagationProfile(self.delta_B, self.delta_A, self.phi_B, self.phi_A)


def linear_propagation_profile(delta_A: int, delta_B: int) -> PropagationProfile:
    """Two blocks spreading linearly from opposite ends of the network.

    Block X reaches ``i / delta_X`` of the nodes after ``i`` rounds, and a node
    keeps whichever block reached it first.  The fronts meet at round
    ``delta_A * delta_B / (delta_A + delta_B)``, after which the split is frozen at

        phi_A = delta_B / (delta_A + delta_B),  phi_B = delta_A / (delta_A + delta_B)

    so per round ``phi_X[i] = min(i / delta_X, final_X)``.
    """
    if int(delta_A) != delta_A or int(delta_B) != delta_B:
        raise ValueError("delays must be whole rounds")
    delta_A, delta_B = int(delta_A), int(delta_B)
    if delta_A < 1:
        raise ValueError(f"delta_A must be >= 1, got {delta_A}")
    if delta_A > delta_B:
        raise ValueError(f"expected delta_A <= delta_B, got {delta_A} > {delta_B}")
    total = delta_A + delta_B
    final_A, final_B = delta_B / total, delta_A / total
    phi_A = tuple(min(i / delta_A, final_A) for i in range(delta_B + 1))
    phi_B = tuple(min(i / delta_B, final_B) for i in range(delta_B + 1))
    return PropagationProfile(delta_A, delta_B, phi_A, phi_B)


@dataclass(frozen=True)
class AlphaResult:
    psi_A: float
    psi_B: float
    residual: float
    alpha_f: float
    rounds_evaluated: int
    converged: bool = True
    notes: tuple[str, ...] = field(default_factory=tuple)


def _round_terms(params: NetworkParams, phi_a: float, phi_b: float):
    """(A alone mines, B alone mines, log of neither-or-both) for one round."""
    t = params.round_seconds
    la, lb = _log_fail(params, phi_a, t), _log_fail(params, phi_b, t)
    fa, fb = math.exp(la), math.exp(lb)
    sa, sb = -math.expm1(la), -math.expm1(lb)
    win_a, win_b = sa * fb, sb * fa
    decided = win_a + win_b
    if decided < 0.5:
        log_u = math.log1p(-decided)
    else:
        log_u = math.log(sa * sb + fa * fb)
    return win_a, win_b, log_u, decided


def alpha_f(
    params: NetworkParams,
    profile: PropagationProfile,
    epsilon: float = DEFAULT_EPSILON,
    max_rounds: int = 10**9,
) -> AlphaResult:
    """Publishing fairness of A over B.

    psi_A sums, over rounds i >= 1, the probability that the race is still tied
    after rounds 0..i-1 and only A's side mines in round i.  psi_B is the mirror
    image.  Summation stops once the tied mass drops below ``epsilon``; beyond
    the saturation round every round is identical, so the remaining geometric
    tail is added in closed form instead of term by term.

    ``alpha_f`` is ``psi_A / (1 - psi_A)``; the gap between ``1 - psi_A`` and
    ``psi_B`` is exactly ``residual``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")

    a_terms: list[float] = []
    b_terms: list[float] = []
    phi_a0, phi_b0 = profile.at(0)
    *_, log_U, _ = _round_terms(params, phi_a0, phi_b0)
    last = profile.saturation_round
    rounds = 0
    converged = True
    notes: list[str] = []

    i = 1
    while i <= last and math.exp(log_U) >= epsilon:
        win_a, win_b, log_u, _ = _round_terms(params, *profile.at(i))
        U = math.exp(log_U)
        a_terms.append(U * win_a)
        b_terms.append(U * win_b)
        log_U += log_u
        rounds = i
        i += 1

    U = math.exp(log_U)
    if U >= epsilon:
        # Saturated: every further round has the same win/tie probabilities.
        win_a, win_b, log_u, decided = _round_terms(params, *profile.at(last + 1))
        if log_u == 0.0:
            k = max_rounds - rounds
        else:
            k = math.ceil((math.log(epsilon) - log_U) / log_u)
            if U * math.exp(k * log_u) >= epsilon:
                k += 1
        if rounds + k > max_rounds or 1.0 - decided >= _STALL:
            k = max(max_rounds - rounds, 0)
            converged = False
            notes.append(
                f"per-round decision probability {decided:.3e} too small to reach epsilon; "
                f"stopped after {max_rounds} rounds"
            )
        # sum_{m<k} u**m == -expm1(k log u) / -expm1(log u)
        if decided > 0.0:
            geom = math.expm1(k * log_u) / math.expm1(log_u)
        else:
            geom = float(k)
        a_terms.append(U * win_a * geom)
        b_terms.append(U * win_b * geom)
        log_U += k * log_u
        rounds += k

    psi_A = math.fsum(a_terms)
    psi_B = math.fsum(b_terms)
    residual = math.exp(log_U)
    denom = 1.0 - psi_A
    alpha = psi_A / denom if denom > 0.0 else math.inf
    return AlphaResult(
        psi_A=psi_A,
        psi_B=psi_B,
        residual=residual,
        alpha_f=alpha,
        rounds_evaluated=rounds,
        converged=converged,
        notes=tuple(notes),
    )
