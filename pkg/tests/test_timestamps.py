from itertools import combinations, permutations

import pytest

from mbfreg.timestamps import (
    EMPTY,
    DomainError,
    NotOrderable,
    Pair,
    format_pair,
    is_legal_subsequence,
    is_orderable,
    newer_than,
    oldest,
    order_pairs,
    parse_pair,
    z5_add,
    z5_sub,
)

Z5 = range(5)


def test_add_examples():
    assert z5_add(3, 4) == 2
    for x in Z5:
        assert z5_add(0, x) == x
        assert z5_add(x, (5 - x) % 5) == 0


def test_sub_examples():
    assert z5_sub(0, 3) == 2
    assert z5_sub(2, 0) == 2
    for a in Z5:
        assert z5_sub(a, a) == 0


def test_arithmetic_all_25_pairs():
    for a in Z5:
        for b in Z5:
            assert z5_add(a, b) == (a + b) % 5
            assert z5_sub(a, b) == (a - b) % 5
            assert z5_add(z5_sub(a, b), b) == a


@pytest.mark.parametrize("bad", [None, 5, -1, 7, "3", 2.0, True])
def test_out_of_domain_rejected(bad):
    with pytest.raises(DomainError):
        z5_add(bad, 1)
    with pytest.raises(DomainError):
        z5_sub(1, bad)
    with pytest.raises(DomainError):
        newer_than(bad, 0)


def test_newer_than_examples():
    assert newer_than(0, 3)
    assert not newer_than(3, 0)
    for a in Z5:
        assert not newer_than(a, a)


def test_newer_than_trichotomy_all_20_ordered_pairs():
    checked = 0
    for a, b in permutations(Z5, 2):
        # distinct stamps are always comparable, in exactly one direction
        assert newer_than(a, b) != newer_than(b, a)
        checked += 1
    assert checked == 20


def test_oldest_examples():
    assert oldest([Pair("a", 3), Pair("b", 4), Pair("c", 0)]) == Pair("a", 3)
    assert oldest([Pair("a", 2)]) == Pair("a", 2)
    assert oldest([Pair("a", 1), Pair("b", 2)]) == Pair("a", 1)


def _subsets(max_size=3):
    for size in range(1, max_size + 1):
        yield from combinations(Z5, size)


def test_oldest_unique_over_every_orderable_subset():
    seen = 0
    for stamps in _subsets():
        if not is_orderable(stamps):
            continue
        pairs = [Pair(f"v{s}", s) for s in stamps]
        # brute force: elements that are newer than nobody else
        bottoms = [p for p in pairs if not any(newer_than(p.sn, q.sn) for q in pairs if q != p)]
        assert bottoms == [oldest(pairs)]
        ordered = [p.sn for p in order_pairs(pairs)]
        assert is_legal_subsequence(ordered)
        assert [list(p) for p in permutations(stamps) if is_legal_subsequence(p)
                and sum(z5_sub(b, a) for a, b in zip(p, p[1:])) <= 2] == [ordered]
        seen += 1
    assert seen == 5 + 10 + 5  # singletons, all pairs, the five runs a..a+2


def test_wide_legal_triples_have_no_oldest():
    # span 3 or 4: several rotations are legal on the ring, so there is
    # nothing to pick and oldest() must refuse rather than guess
    wide = [t for t in _subsets() if len(t) == 3 and not is_orderable(t)
            and any(is_legal_subsequence(p) for p in permutations(t))]
    assert len(wide) == 5
    for stamps in wide:
        assert len([p for p in permutations(stamps) if is_legal_subsequence(p)]) > 1
        with pytest.raises(NotOrderable):
            oldest([Pair(f"v{s}", s) for s in stamps])


def test_oldest_rejects_spread_sets():
    with pytest.raises(NotOrderable):
        oldest([Pair("a", 0), Pair("b", 1), Pair("c", 3)])
    with pytest.raises(NotOrderable):
        oldest([])


def test_is_orderable():
    assert is_orderable([3, 4, 0])
    assert not is_orderable([0, 1, 2, 3])
    assert not is_orderable([1, 1])
    assert not is_orderable([0, 5])


def test_legal_subsequence_examples():
    assert is_legal_subsequence([1, 2, 3])
    assert is_legal_subsequence([1, 2, 4])
    assert not is_legal_subsequence([1, 1, 2])
    assert not is_legal_subsequence([7, 0, 1])
    assert not is_legal_subsequence([0, 2, 4, 1])  # span 6


def test_order_pairs_wraps():
    ps = [Pair("c", 1), Pair("a", 4), Pair("b", 0)]
    assert order_pairs(ps) == [Pair("a", 4), Pair("b", 0), Pair("c", 1)]


def test_pair_text_round_trip():
    for p in (EMPTY, Pair("w3", 2), Pair("x", None), Pair(None, 4)):
        assert parse_pair(format_pair(p)) == p
    assert format_pair(EMPTY) == "_"
