import random
from itertools import product

from mbfreg.messages import ECHO, READ_FW, REPLY, WRITE_FW
from mbfreg.params import Params
from mbfreg.server import (
    ServerState,
    check,
    concut,
    epoch_check,
    epoch_check_table,
    insert,
    select_three_pairs_max_sn,
)
from mbfreg.timestamps import EMPTY, Pair, is_legal_subsequence

_ = EMPTY
a1, b2, c3, c4, x0, x3, x4 = (Pair("a", 1), Pair("b", 2), Pair("c", 3), Pair("c", 4),
                              Pair("x", 0), Pair("x", 3), Pair("x", 4))

P = Params(n=5, f=1, k=1, delta=4, Delta=8)


def server(**kw):
    s = ServerState(0, P)
    for key, value in kw.items():
        setattr(s, key, value)
    return s


# check / insert


def test_check_examples():
    assert check([a1, b2, c4])
    assert not check([a1, Pair("b", 3), c4])
    assert check([_, _, Pair("c", 2)])
    assert not check([Pair("a", 2), Pair("b", 2), c3])
    assert not check([a1, _, c3])
    assert check([_, _, _])


def test_insert_examples():
    assert insert([a1, b2, c4], x3) == [b2, x3, c4]
    assert insert([a1, b2, c3], x4) == [b2, c3, x4]
    assert insert([a1, b2, c3], x0) == [a1, b2, c3]
    assert insert([_, _, _], Pair("x", 2)) == [_, _, Pair("x", 2)]


def test_insert_is_idempotent_for_known_values():
    assert insert([a1, b2, c3], b2) == [a1, b2, c3]


def test_insert_one_past_top_across_a_gap():
    # [b2, c4] has a hole below the top; the new write must still land
    assert insert([_, b2, c4], x0) == [_, c4, x0]
    assert insert([a1, b2, c4], x0) == [_, c4, x0]


def _slots():
    yield _
    for v, sn in product("ab", range(5)):
        yield Pair(v, sn)


def test_insert_never_breaks_check():
    slots = list(_slots())
    values = [Pair("z", sn) for sn in range(5)]
    n = 0
    for V in product(slots, repeat=3):
        for x in values:
            assert check(insert(list(V), x)), (V, x)
            n += 1
    assert n == 11 ** 3 * 5


# epochs


def test_epoch_check_examples():
    w = {Pair("v", 2): 1}
    epoch_check(w)
    assert w == {Pair("v", 2): 0}
    w = {Pair("v", 2): -1}
    epoch_check(w)
    assert w == {}
    w = {Pair("v", 2): 7}
    epoch_check(w)
    assert w == {}


def test_epoch_entry_removed_by_third_check():
    w = {Pair("v", 2): 1}
    for expected in (0, -1):
        epoch_check(w)
        assert w[Pair("v", 2)] == expected
    epoch_check(w)
    assert w == {}


def test_epoch_check_table_drops_empty_rows():
    t = {a1: {1: 1, 2: -1}, b2: {3: 5}}
    epoch_check_table(t)
    assert t == {a1: {1: 0}}


# conCut


def test_concut_examples():
    V = [Pair("va", 4), Pair("vb", 0), Pair("vc", 1)]
    W = {Pair("w0", 2): 1, Pair("w1", 3): 1}
    assert concut(V, W) == [Pair("vc", 1), Pair("w0", 2), Pair("w1", 3)]
    assert concut([_, _, _], {}) == []
    assert concut([_, _, Pair("a", 2)], {Pair("b", 3): 1}) == [Pair("a", 2), Pair("b", 3)]


def test_concut_skips_unorderable_w():
    W = {Pair("p", 0): 1, Pair("q", 2): 1, Pair("r", 4): 1}
    assert concut([_, _, _], W) == []


def test_concut_ignores_values_behind_the_top():
    assert concut([a1, b2, c3], {Pair("x", 1): 1}) == [a1, b2, c3]
    assert concut([a1, b2, c3], {x4: 1}) == [b2, c3, x4]


def test_concut_expiring_entries():
    W = {Pair("g", 4): -1, Pair("h", 0): -1}
    assert concut([a1, b2, c3], W) == [c3, Pair("g", 4), Pair("h", 0)]
    assert concut([a1, b2, c3], W, keep_expiring=False) == [a1, b2, c3]


def test_echo_drops_planted_leftovers_only_with_long_periods():
    W = {Pair("g", 4): 0}  # phase 1 ages it to -1 before echoing
    long_period = ServerState(0, P, V=[a1, b2, c3], W=dict(W))
    short_period = ServerState(0, Params(n=7, f=1, k=2, delta=4, Delta=4), V=[a1, b2, c3], W=dict(W))
    assert list(long_period.maintenance_phase1(0)[0].payload[1]) == [a1, b2, c3]
    assert list(short_period.maintenance_phase1(0)[0].payload[1]) == [b2, c3, Pair("g", 4)]


def test_concut_output_is_legal():
    rng = random.Random(5)
    for _i in range(2000):
        V = [rng.choice(list(_slots())) for _j in range(3)]
        if not check(V):
            continue
        W = {Pair("w", rng.randrange(5)): 1 for _j in range(rng.randrange(3))}
        out = concut(V, W)
        assert len(out) <= 3
        assert is_legal_subsequence([p.sn for p in out])


# select


def _echoes(support):
    return {pair: {o: 1 for o in origins} for pair, origins in support.items()}


def test_select_three_examples():
    got = select_three_pairs_max_sn(_echoes({a1: {1, 2, 3}, b2: {1, 2, 3, 4}}), 3)
    assert got == [a1, b2]
    assert select_three_pairs_max_sn(_echoes({a1: {1, 2}, b2: {4}}), 3) == []


def test_select_three_ignores_stale_echoes():
    table = _echoes({a1: {1, 2, 3}})
    table[b2] = {1: 0, 2: 0, 3: 0}  # from the previous round
    assert select_three_pairs_max_sn(table, 3) == [a1]


# maintenance


def test_phase1_resets_bad_v_and_oversized_w():
    s = server(V=[Pair("a", 3), Pair("b", 1), Pair("c", 0)],
               W={Pair(f"g{i}", i): 1 for i in range(5)})
    out = s.maintenance_phase1(0)
    assert s.V == [_, _, _]
    assert s.W == {}
    assert [o.kind for o in out] == [ECHO]


def test_phase1_echo_carries_concut_and_pending_reads():
    s = server(V=[a1, b2, c3], pending_read={"r0"})
    (out,) = s.maintenance_phase1(0)
    origin, vw, pr = out.payload
    assert origin == 0 and list(vw) == [a1, b2, c3] and pr == {"r0"}


def test_phase2_rebuilds_from_echo_quorum():
    s = server(V=[_, _, Pair("junk", 2)])
    for j in (1, 2, 3):
        s.handle_echo(j, [a1, b2, c3], ())
    assert s.maintenance_phase2(4) == []  # nobody reading
    assert s.V == [a1, b2, c3]


def test_phase2_falls_back_to_fw():
    s = server(FW={x4})
    s.maintenance_phase2(4)
    assert s.V == [_, _, x4]


def test_phase3_replies_even_with_empty_fw():
    s = server(V=[a1, b2, c3], pending_read={"r1"})
    out = s.maintenance_phase3(8)
    assert [(o.kind, o.dest) for o in out] == [(REPLY, "r1")]


# writes


def test_write_fresh_value_with_reader():
    s = server(pending_read={"r0"})
    out = s.handle_write("v", 2)
    assert s.W == {Pair("v", 2): 1}
    assert sorted(o.kind for o in out) == [REPLY, WRITE_FW]


def test_write_of_known_value_only_forwards():
    s = server(V=[a1, b2, c3], pending_read={"r0"})
    out = s.handle_write("c", 3)
    assert s.W == {}
    assert [o.kind for o in out] == [WRITE_FW]


def test_write_fw_is_origin_keyed():
    s = server()
    s.handle_write_fw(1, b2)
    s.handle_write_fw(1, b2)
    assert s.fw_vals == {b2: {1: 1}}


def test_promote_needs_distinct_origins():
    s = server(pending_read={"r0"})
    for _i in range(3):
        s.handle_write_fw(1, b2)
    assert s.FW == set()
    s.handle_write_fw(2, b2)
    out = s.handle_write_fw(3, b2)
    assert s.FW == {b2}
    assert b2 not in s.fw_vals
    assert [o.kind for o in out] == [REPLY]


def test_promote_counts_like_brute_force():
    rng = random.Random(11)
    pairs = [Pair("v", sn) for sn in range(5)]
    for _i in range(300):
        s = server()
        for p in pairs:
            s.fw_vals[p] = {o: 1 for o in rng.sample(range(5), rng.randrange(5))}
        want = {p for p in pairs if len(s.fw_vals[p]) >= P.reply_threshold}
        s.promote_check()
        assert s.FW == want


def test_echo_records_readers():
    s = server()
    s.handle_echo(2, [a1, b2, c3], {"c7"})
    assert set(s.echo_vals) == {a1, b2, c3}
    assert all(v == {2: 1} for v in s.echo_vals.values())
    assert "c7" in s.echo_read


# reads


def test_read_flow():
    s = server(V=[a1, b2, c3])
    out = s.handle_read("c1")
    assert [o.kind for o in out] == [REPLY, READ_FW]
    assert len(out[0].payload[1]) <= 3
    s.handle_read_fw("c1")
    s.echo_read.add("c1")
    s.handle_read_ack("c1")
    assert "c1" not in s.pending_read and "c1" not in s.echo_read
    s.handle_read_ack("nobody")


def test_read_gets_promoted_but_undrained_values():
    s = server(V=[a1, b2, c3], FW={x4})
    out = s.handle_read("c2")
    assert [o.payload[1] for o in out if o.kind == REPLY] == [(a1, b2, c3), (x4,)]
