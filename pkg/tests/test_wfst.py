import numpy as np
import pytest

from nsr.errors import EmptyMachine, FormatError, SemiringError
from nsr.wfst import (LOG, SymbolTable, Wfst, compose, connect, enumerate_paths, identity_fst,
                      invert, linear_fst, project, scale_weights, shortest_path)

from oracles import join, path_multiset, paths, random_acyclic, relation


def single_arc(i, o, w):
    fst = Wfst()
    a, b = fst.add_states(2)
    fst.add_arc(a, i, o, w, b)
    fst.set_final(b)
    return fst


def test_tropical_product():
    c = compose(single_arc(1, 2, 1.0), single_arc(2, 3, 2.0))
    assert relation(c) == {((1,), (3,)): 3.0}


def test_compose_with_identity_keeps_paths():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = random_acyclic(rng)
        assert relation(compose(a, identity_fst([1, 2, 3]))) == relation(a)


def test_compose_matches_relation_join():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b = random_acyclic(rng), random_acyclic(rng)
        assert relation(compose(a, b)) == join(relation(a), relation(b))


def test_epsilon_filter_does_not_duplicate_paths():
    # a: x:eps then eps:y would pair with b's eps moves in several interleavings
    a = Wfst()
    s = a.add_states(3)
    a.add_arc(s[0], 1, 0, 0.0, s[1])
    a.add_arc(s[1], 2, 5, 0.0, s[2])
    a.set_final(s[2])
    b = Wfst()
    t = b.add_states(3)
    b.add_arc(t[0], 0, 7, 0.0, t[1])
    b.add_arc(t[1], 5, 8, 0.0, t[2])
    b.set_final(t[2])
    assert path_multiset(compose(a, b)) == [((1, 2), (7, 8), 0.0)]


def test_composition_is_associative_on_paths():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = (random_acyclic(rng) for _ in range(3))
        assert relation(compose(compose(a, b), c)) == relation(compose(a, compose(b, c)))


def test_semiring_mismatch():
    with pytest.raises(SemiringError):
        compose(Wfst(), Wfst(LOG))
    with pytest.raises(SemiringError):
        shortest_path(linear_fst([1], semiring=LOG))


def test_project_and_invert():
    p = project(single_arc(1, 2, 1.0), "output")
    assert p.arcs[0][0][:3] == (2, 2, 1.0)
    assert project(single_arc(1, 2, 1.0), "input").arcs[0][0][:2] == (1, 1)
    assert invert(single_arc(1, 2, 1.0)).arcs[0][0][:3] == (2, 1, 1.0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = random_acyclic(rng)
        assert path_multiset(invert(invert(a))) == path_multiset(a)
        once = project(a, "output")
        assert path_multiset(project(once, "output")) == path_multiset(once)
        assert all(i == o for i, o, _ in paths(once))


def test_compose_with_own_inverse_contains_identity_pairs():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = random_acyclic(rng)
        rel = relation(compose(a, invert(a)))
        for x, _ in relation(a):
            assert (x, x) in rel


def test_scale_weights():
    s = scale_weights(single_arc(1, 1, 2.0), 0.5)
    assert relation(s) == {((1,), (1,)): 1.0}


def test_connect_removes_dangling_states():
    fst = Wfst()
    s = fst.add_states(4)
    fst.add_arc(s[0], 1, 1, 1.0, s[1])
    fst.add_arc(s[0], 2, 2, 1.0, s[2])  # s[2] never reaches a final
    fst.set_final(s[1])
    trimmed = connect(fst)
    assert trimmed.num_states == 2
    assert path_multiset(trimmed) == path_multiset(fst)
    again = connect(trimmed)
    assert again.arcs == trimmed.arcs and again.finals == trimmed.finals


def test_connect_preserves_paths_on_random_machines():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = random_acyclic(rng)
        assert path_multiset(connect(a)) == path_multiset(a)


def test_shortest_path_examples():
    assert shortest_path(single_arc(1, 1, 7.0)).weight == 7.0
    diamond = Wfst()
    s = diamond.add_states(4)
    diamond.add_arc(s[0], 1, 1, 2.0, s[1])
    diamond.add_arc(s[1], 3, 3, 5.0, s[3])
    diamond.add_arc(s[0], 2, 2, 3.0, s[2])
    diamond.add_arc(s[2], 3, 3, 3.0, s[3])
    diamond.set_final(s[3])
    best = shortest_path(diamond)
    assert best.weight == 6.0 and best.olabels == [2, 3]


def test_shortest_path_tie_break_is_lexicographic():
    fst = Wfst()
    s = fst.add_states(2)
    fst.add_arc(s[0], 1, 4, 1.0, s[1])
    fst.add_arc(s[0], 1, 2, 1.0, s[1])
    fst.add_arc(s[0], 1, 3, 1.0, s[1])
    fst.set_final(s[1])
    assert shortest_path(fst).olabels == [2]


def test_shortest_path_matches_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(200):
        a = random_acyclic(rng)
        ps = paths(a)
        if not ps:
            with pytest.raises(EmptyMachine):
                shortest_path(a)
            continue
        best = shortest_path(a)
        low = min(w for _, _, w in ps)
        assert best.weight == low
        assert (tuple(best.ilabels), tuple(best.olabels), low) in ps
        assert tuple(best.olabels) == min(o for _, o, w in ps if w == low)


def test_shortest_path_on_cyclic_machine():
    fst = Wfst()
    s = fst.add_states(2)
    fst.add_arc(s[0], 1, 1, 1.0, s[1])
    fst.add_arc(s[1], 2, 2, 0.5, s[0])
    fst.set_final(s[1], 0.25)
    best = shortest_path(fst)
    assert best.weight == 1.25 and best.ilabels == [1]


def test_no_final_state():
    fst = Wfst()
    s = fst.add_states(2)
    fst.add_arc(s[0], 1, 1, 1.0, s[1])
    with pytest.raises(EmptyMachine):
        shortest_path(fst)


def test_enumerate_paths_agrees_with_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = random_acyclic(rng)
        assert sorted(enumerate_paths(a)) == path_multiset(a)


def test_text_format_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    a = random_acyclic(rng)
    a.set_final(a.start, 1.5)
    text = a.to_text()
    first = text.splitlines()[0].split("\t")
    assert int(first[0]) == a.start
    b = Wfst.from_text(text)
    assert path_multiset(b) == path_multiset(a)
    a.write(tmp_path / "a.fst")
    assert (tmp_path / "a.fst").read_text() == text
    assert Wfst.read(tmp_path / "a.fst").to_text() == text
    with pytest.raises(FormatError):
        Wfst.from_text("0\t1\t2\n")


def test_symbol_table(tmp_path):
    syms = SymbolTable(["a", "b"])
    assert syms.id("<eps>") == 0 and syms.id("b") == 2
    assert syms.add("a") == 1 and syms.decode([1, 0, 2]) == ["a", "b"]
    syms.write(tmp_path / "s.txt")
    assert (tmp_path / "s.txt").read_text() == "<eps>\t0\na\t1\nb\t2\n"
    back = SymbolTable.read(tmp_path / "s.txt")
    assert list(back) == list(syms)
    (tmp_path / "bad.txt").write_text("<eps>\t0\nx\t5\n")
    with pytest.raises(FormatError):
        SymbolTable.read(tmp_path / "bad.txt")
