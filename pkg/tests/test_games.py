import json
from fractions import Fraction

import numpy as np
import pytest

from dreidel.chain import GameState, SpinCache, expected_spins
from dreidel.errors import SimulationError
from dreidel.games import (
    FULL, GAMBLER, SIM_BLOCK_SIZE, SIMPLIFIED, GamblerParams, GamblerState, _run_block, block_generator,
    full_transitions, gambler_closed_form, gambler_transitions, get_rules, simplified_transitions, simulate,
)
from dreidel.keyeq import T_exact

H, Q = Fraction(1, 2), Fraction(1, 4)


def law(branches):
    return [(b.probability, tuple(b.state), b.absorbing) for b in branches]


def test_simplified_examples():
    assert law(simplified_transitions((2, 2, 2))) == [(H, (1, 2, 3), False), (H, (2, 3, 1), False)]
    assert law(simplified_transitions((1, 1, 4))) == [(H, (3, 2, 1), False), (H, (4, 2, 0), True)]
    assert [b.absorbing for b in simplified_transitions((1, 4, 1))] == [True, True]
    with pytest.raises(ValueError):
        simplified_transitions((0, 2, 3))


def test_full_examples():
    assert law(full_transitions((1, 1, 1))) == [
        (Q, (0, 2, 1), True), (Q, (1, 1, 1), False), (Q, (1, 1, 1), False), (Q, (1, 2, 0), True)]
    assert law(full_transitions((1, 2, 1))) == [
        (Q, (0, 2, 2), True), (Q, (1, 1, 2), False), (Q, (1, 2, 1), False), (Q, (1, 3, 0), True)]
    assert tuple(full_transitions((3, 5, 2))[1].state) == (2, 3, 5)
    with pytest.raises(ValueError):
        full_transitions((2, 2, 0))


def test_hay_and_nun_invariants():
    for n in range(3, 20):
        for s in FULL.states(n):
            _, hay, nun, _ = FULL.transitions(s)
            if s.p >= 1:
                assert hay.state.p == -(-s.p // 2) >= 1
            assert FULL.transitions(nun.state)[2].state == s


def test_gambler_examples():
    assert all(b.absorbing for b in gambler_transitions(0, GamblerParams(1, 1)))
    assert law(gambler_transitions(1, GamblerParams(3, 2))) == [
        (H, (2, 3, 2), False), (H, (0, 3, 2), False)]
    with pytest.raises(ValueError):
        gambler_transitions(3, GamblerParams(3, 2))
    assert gambler_closed_form(GamblerParams(5, 5, 5)) == 0
    assert gambler_closed_form(GamblerParams(5, 5, 0)) == 25
    assert gambler_closed_form(GamblerParams(4, 2, 1)) == 9
    with pytest.raises(ValueError):
        GamblerParams(3, 2, 4)


def test_get_rules():
    assert get_rules("full") is FULL
    with pytest.raises(ValueError):
        get_rules("poker")


def test_T_below_product():
    for a in range(1, 61):
        for b in range(1, 61):
            assert T_exact(a, b) <= a * b, (a, b)


def test_T_exact_matches_chain_small():
    cache = SpinCache()
    for a in range(1, 8):
        for b in range(1, 8):
            assert T_exact(a, b) == expected_spins(SIMPLIFIED, GameState(a, 2, b), "exact", cache)


def test_simulation_reproducible():
    r1 = simulate(FULL, (2, 2, 2), 5000, seed=7)
    r2 = simulate(FULL, (2, 2, 2), 5000, seed=7)
    r3 = simulate(FULL, (2, 2, 2), 5000, seed=8)
    assert r1.histogram == r2.histogram and r1.mean == r2.mean
    assert r1.histogram != r3.histogram
    assert sum(r1.histogram.values()) == 5000
    assert r1.mean * 5000 == sum(k * c for k, c in r1.histogram.items())


def test_simulation_blocks_independent():
    trials = 2 * SIM_BLOCK_SIZE + 17
    res = simulate(SIMPLIFIED, (3, 2, 3), trials, seed=11)
    # Run blocks in reverse order and merge.
    lengths = []
    for block in reversed(range(3)):
        n = min(SIM_BLOCK_SIZE, trials - block * SIM_BLOCK_SIZE)
        lengths.append(_run_block(SIMPLIFIED, GameState(3, 2, 3), n, block_generator(11, block), 10**8))
    counts = np.bincount(np.concatenate(lengths))
    assert res.histogram == {k: int(c) for k, c in enumerate(counts) if c}


def test_simulation_gambler_and_json():
    res = simulate(GAMBLER, GamblerParams(3, 2, 0), 20000, seed=3)
    assert res.within(6)
    data = json.loads(res.to_json())
    assert data["trials"] == 20000 and set(data) >= {"mean", "stderr", "histogram", "seed"}


def test_simulation_errors():
    with pytest.raises(SimulationError):
        simulate(SIMPLIFIED, (5, 2, 5), 100, seed=1, spin_cap=1)
    with pytest.raises(ValueError):
        simulate(SIMPLIFIED, (0, 2, 5), 100, seed=1)
    with pytest.raises(ValueError):
        simulate(GAMBLER, GamblerState(3, 3, 2), 10, seed=1)
    with pytest.raises(ValueError):
        simulate(FULL, (1, 1, 1), 0, seed=1)
