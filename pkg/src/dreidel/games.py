"""Rule sets: simplified Dreidel, full Dreidel and gambler's ruin.

Every Dreidel state is written from the point of view of the player about to
spin, so each transition swaps the roles of the two players.  A Dreidel game
ends as soon as either player holds no nuts, including when the re-ante
after a gimel empties a hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import mpmath
import numpy as np

from .arith import DEFAULT_PRECISION_BITS, format_bigfloat, to_bigfloat
from .chain import Branch, GameState
from .errors import EmptyDomainError, SimulationError

HALF = Fraction(1, 2)
QUARTER = Fraction(1, 4)

DEFAULT_SPIN_CAP = 10**8
SIM_BLOCK_SIZE = 1 << 16


def _dreidel_states(total: int) -> list[GameState]:
    if total < 2:
        raise EmptyDomainError(f"no non-absorbing states with a + p + b = {total}")
    return [GameState(a, p, total - a - p)
            for a in range(1, total)
            for p in range(0, total - a)]


class _DreidelRules:
    name = ""
    faces: tuple[str, ...] = ()

    def is_absorbing(self, state) -> bool:
        return state[0] == 0 or state[2] == 0

    def partition_key(self, state) -> int:
        return sum(state)

    def states(self, total: int) -> list[GameState]:
        return _dreidel_states(total)

    def state_record(self, state, key) -> dict:
        return {"game": self.name, "a": state[0], "p": state[1], "b": state[2]}

    def parse_record(self, record: dict):
        state = GameState(int(record["a"]), int(record["p"]), int(record["b"]))
        return state.total, state

    def _check(self, state) -> GameState:
        state = GameState(*state)
        if min(state) < 0:
            raise ValueError(f"negative nut count in {state}")
        if self.is_absorbing(state):
            raise ValueError(f"{state} is absorbing; no spin is taken")
        return state

    def _branch(self, prob: Fraction, succ: GameState) -> Branch:
        return Branch(prob, succ, self.is_absorbing(succ))


class SimplifiedDreidel(_DreidelRules):
    """Two outcomes with probability 1/2: gimel takes the pot, shin pays one."""

    name = "simplified"
    faces = ("gimel", "shin")

    def transitions(self, state) -> list[Branch]:
        a, p, b = self._check(state)
        return [
            self._branch(HALF, GameState(b - 1, 2, a + p - 1)),
            self._branch(HALF, GameState(b, p + 1, a - 1)),
        ]

    def step_arrays(self, face, a, p, b):
        gimel = face == 0
        na = np.where(gimel, b - 1, b)
        npot = np.where(gimel, 2, p + 1)
        nb = np.where(gimel, a + p - 1, a - 1)
        return na, npot, nb


class FullDreidel(_DreidelRules):
    """All four faces with probability 1/4; hay takes the floor half of the pot."""

    name = "full"
    faces = ("gimel", "hay", "nun", "shin")

    def transitions(self, state) -> list[Branch]:
        a, p, b = self._check(state)
        half = p // 2
        return [
            self._branch(QUARTER, GameState(b - 1, 2, a + p - 1)),
            self._branch(QUARTER, GameState(b, p - half, a + half)),
            self._branch(QUARTER, GameState(b, p, a)),
            self._branch(QUARTER, GameState(b, p + 1, a - 1)),
        ]

    def step_arrays(self, face, a, p, b):
        half = p // 2
        na = np.where(face == 0, b - 1, b)
        npot = np.select([face == 0, face == 1, face == 2], [2, p - half, p], p + 1)
        nb = np.select([face == 0, face == 1, face == 2], [a + p - 1, a + half, a], a - 1)
        return na, npot, nb


class GamblerState(NamedTuple):
    """Current chip balance ``a`` of a walk absorbed at ``M`` or ``-N``."""

    a: int
    M: int
    N: int


@dataclass(frozen=True)
class GamblerParams:
    M: int
    N: int
    a: int = 0

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be >= 1")
        if not -self.N <= self.a <= self.M:
            raise ValueError(f"starting chips {self.a} outside [-{self.N}, {self.M}]")

    @property
    def state(self) -> GamblerState:
        return GamblerState(self.a, self.M, self.N)


class GamblersRuin:
    """Symmetric +-1 walk; the block key is ``(M, N)``."""

    name = "gambler"
    faces = ("win", "lose")

    def is_absorbing(self, state) -> bool:
        a, M, N = state
        return a >= M or a <= -N

    def partition_key(self, state):
        return (state[1], state[2])

    def states(self, key) -> list[GamblerState]:
        M, N = key
        if M < 1 or N < 1:
            raise EmptyDomainError(f"no gambler states for M={M}, N={N}")
        return [GamblerState(a, M, N) for a in range(-N + 1, M)]

    def transitions(self, state) -> list[Branch]:
        a, M, N = state
        if not -N < a < M:
            raise ValueError(f"gambler state {a} is absorbing or out of range (-{N}, {M})")
        up = GamblerState(a + 1, M, N)
        down = GamblerState(a - 1, M, N)
        return [Branch(HALF, up, self.is_absorbing(up)),
                Branch(HALF, down, self.is_absorbing(down))]

    def state_record(self, state, key) -> dict:
        return {"game": self.name, "M": state.M, "N": state.N, "a": state.a}

    def parse_record(self, record: dict):
        state = GamblerState(int(record["a"]), int(record["M"]), int(record["N"]))
        return (state.M, state.N), state


SIMPLIFIED = SimplifiedDreidel()
FULL = FullDreidel()
GAMBLER = GamblersRuin()
RULES = {r.name: r for r in (SIMPLIFIED, FULL, GAMBLER)}


def get_rules(name: str):
    try:
        return RULES[name]
    except KeyError:
        raise ValueError(f"unknown game {name!r}; choose from {sorted(RULES)}") from None


def simplified_transitions(state) -> list[Branch]:
    return SIMPLIFIED.transitions(state)


def full_transitions(state) -> list[Branch]:
    return FULL.transitions(state)


def gambler_transitions(a: int, params: GamblerParams) -> list[Branch]:
    return GAMBLER.transitions(GamblerState(a, params.M, params.N))


def gambler_closed_form(params: GamblerParams) -> Fraction:
    """Expected duration ``(N + a)(M - a)`` of the symmetric walk."""
    return Fraction((params.N + params.a) * (params.M - params.a))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class SimResult:
    trials: int
    mean: mpmath.mpf
    stderr: mpmath.mpf
    histogram: dict[int, int] = field(default_factory=dict)
    seed: int = 0

    def within(self, target, n_stderr: float = 4.0) -> bool:
        return abs(self.mean - to_bigfloat(target)) <= n_stderr * self.stderr

    def to_json(self, digits: int = 15) -> str:
        return json.dumps({
            "trials": self.trials,
            "mean": format_bigfloat(self.mean, digits),
            "stderr": format_bigfloat(self.stderr, digits),
            "seed": self.seed,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        })


def block_generator(seed: int, block: int) -> np.random.Generator:
    """PCG64 stream for trials ``block*SIM_BLOCK_SIZE ... (block+1)*SIM_BLOCK_SIZE - 1``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _run_block(rules, start, n: int, rng: np.random.Generator, spin_cap: int) -> np.ndarray:
    lengths = np.zeros(n, dtype=np.int64)
    if isinstance(rules, GamblersRuin):
        pos = np.full(n, start.a, dtype=np.int64)
        active = np.arange(n)
        steps = 0
        while active.size:
            steps += 1
            if steps > spin_cap:
                raise SimulationError(f"trial exceeded spin cap {spin_cap}")
            move = rng.integers(0, 2, size=active.size) * 2 - 1
            pos[active] += move
            lengths[active] += 1
            done = (pos[active] >= start.M) | (pos[active] <= -start.N)
            active = active[~done]
        return lengths

    a = np.full(n, start[0], dtype=np.int64)
    p = np.full(n, start[1], dtype=np.int64)
    b = np.full(n, start[2], dtype=np.int64)
    active = np.arange(n)
    steps = 0
    nfaces = len(rules.faces)
    while active.size:
        steps += 1
        if steps > spin_cap:
            raise SimulationError(f"trial exceeded spin cap {spin_cap}")
        face = rng.integers(0, nfaces, size=active.size)
        na, npot, nb = rules.step_arrays(face, a[active], p[active], b[active])
        a[active], p[active], b[active] = na, npot, nb
        lengths[active] += 1
        done = (na == 0) | (nb == 0)
        active = active[~done]
    return lengths


def simulate(rules, start, trials: int, seed: int, spin_cap: int = DEFAULT_SPIN_CAP,
             precision_bits: int = DEFAULT_PRECISION_BITS) -> SimResult:
    """Play ``trials`` independent games from ``start`` and summarize the spin counts.

    Trial ``i`` belongs to block ``i // SIM_BLOCK_SIZE`` and draws only from
    that block's generator, so blocks can be run in any order or in parallel
    and still reproduce the serial result.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if isinstance(start, GamblerParams):
        start = start.state
    elif not isinstance(rules, GamblersRuin):
        start = GameState(*start)
    if rules.is_absorbing(start):
        raise ValueError(f"start state {start} is absorbing")

    counts = np.zeros(0, dtype=np.int64)
    for block, lo in enumerate(range(0, trials, SIM_BLOCK_SIZE)):
        n = min(SIM_BLOCK_SIZE, trials - lo)
        lengths = _run_block(rules, start, n, block_generator(seed, block), spin_cap)
        binc = np.bincount(lengths)
        if binc.size > counts.size:
            binc[: counts.size] += counts
            counts = binc
        else:
            counts[: binc.size] += binc

    histogram = {int(k): int(c) for k, c in enumerate(counts) if c}
    total = sum(k * c for k, c in histogram.items())
    total_sq = sum(k * k * c for k, c in histogram.items())
    mean = Fraction(total, trials)
    with mpmath.workprec(precision_bits):
        if trials > 1:
            var = (Fraction(total_sq) - trials * mean * mean) / (trials - 1)
            stderr = mpmath.sqrt(to_bigfloat(var, precision_bits) / trials)
        else:
            stderr = mpmath.mpf(0)
    return SimResult(trials, to_bigfloat(mean, precision_bits), stderr, histogram, seed)
