import random

import pytest

from mbfreg.adversary import (
    Corruption,
    FaultLedger,
    Movement,
    STRATEGIES,
    ScriptAction,
    corrupt_server,
    corrupt_writer,
    make_strategy,
    max_faulty_in_window,
    scramble_server,
)
from mbfreg.client import WriterState
from mbfreg.params import Params
from mbfreg.server import ServerState
from mbfreg.timestamps import EMPTY, Pair


def brute_max_faulty(T, Delta, f):
    """Move f agents onto fresh servers every Delta ticks and count the
    servers hit by any window [t, t+T], over every alignment of t."""
    rounds = T // Delta + 4
    n = f * (rounds + 1)
    ledger = FaultLedger(n)
    mv = Movement("round-robin", n, f, random.Random(0))
    for i in range(rounds):
        ledger.record_move(i * Delta, mv.placement(i))
    ledger.close(rounds * Delta)
    best = 0
    for t in range(Delta, 2 * Delta):
        hit = sum(1 for s in range(n) if FaultLedger._hits(ledger.occupied[s], t, t + T))
        best = max(best, hit)
    return best


def test_max_faulty_matches_enumeration():
    for f in (1, 2, 3):
        for Delta in range(1, 21):
            for T in range(1, 21):
                assert max_faulty_in_window(T, Delta, f) == brute_max_faulty(T, Delta, f), (T, Delta, f)


def test_two_delta_window_in_k2_regime():
    for delta in range(1, 11):
        for Delta in range(delta, 2 * delta):
            for f in (1, 2, 3):
                assert max_faulty_in_window(2 * delta, Delta, f, delta) == 3 * f


def test_max_faulty_argument_checks():
    with pytest.raises(ValueError):
        max_faulty_in_window(-1, 4, 1)
    with pytest.raises(ValueError):
        max_faulty_in_window(3, 4, 1, delta=4)  # T below delta


def test_round_robin_placement():
    mv = Movement("round-robin", 5, 2, random.Random(1))
    assert [mv.placement(i) for i in range(3)] == [(0, 1), (2, 3), (4, 0)]


def test_random_movement_leaves_the_old_servers():
    mv = Movement("random", 7, 2, random.Random(3))
    prev = mv.placement(0)
    for i in range(1, 50):
        cur = mv.placement(i)
        assert len(set(cur)) == 2 and not set(cur) & set(prev)
        prev = cur


def test_scripted_movement_holds_last_placement():
    mv = Movement("script", 4, 1, random.Random(0), script=[(2,), (3,)])
    assert [mv.placement(i) for i in range(4)] == [(2,), (3,), (3,), (3,)]


def test_ledger_intervals():
    led = FaultLedger(3)
    led.record_move(0, [0])
    led.record_move(8, [1])
    led.record_recovery(12, 0)
    led.close(20)
    assert led.is_byzantine(0, 7) and not led.is_byzantine(0, 8)
    assert led.is_cured(0, 8) and led.is_cured(0, 11) and led.is_correct(0, 12)
    assert led.byzantine_at(9) == {1}
    assert led.correct_throughout(2, 0, 20) and not led.correct_throughout(0, 10, 20)


def test_script_action_round_trip():
    text = "8:0:ECHO:*:forged@2,x@3:r0"
    act = ScriptAction.parse(text)
    assert act.pairs == (Pair("forged", 2), Pair("x", 3)) and act.readers == ("r0",)
    assert str(act) == text


def test_corruption_literals():
    p = Params(5, 1, 1, 4, 8)
    s = ServerState(0, p)
    rng = random.Random(0)
    corrupt_server(s, "V", "a@1,b@3", rng, ["r0"])
    assert s.V == [Pair("a", 1), Pair("b", 3), EMPTY]
    corrupt_server(s, "W", "g@9:7", rng, ["r0"])
    assert s.W == {Pair("g", 9): 7}
    corrupt_server(s, "echo_vals", "2/a@1:1,3/a@1:0", rng, ["r0"])
    assert s.echo_vals == {Pair("a", 1): {2: 1, 3: 0}}
    w = WriterState("w", p)
    corrupt_writer(w, "csn", "17", rng)
    assert w.csn == 17
    assert str(Corruption.parse("20:all:all:random")) == "20:all:all:random"


def test_scramble_is_seeded():
    p = Params(5, 1, 1, 4, 8)
    a, b = ServerState(1, p), ServerState(1, p)
    scramble_server(a, random.Random("x"), ["r0"])
    scramble_server(b, random.Random("x"), ["r0"])
    assert a == b


@pytest.mark.parametrize("kind", STRATEGIES)
def test_every_strategy_builds(kind):
    st = make_strategy(kind, Params(5, 1, 1, 4, 8), random.Random(0), ["r0"])
    assert st.name == kind
