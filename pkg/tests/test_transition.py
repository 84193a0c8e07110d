import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_panel
from oracles import edgewise_reconstruct, random_network
from tvstergm.errors import ContractError
from tvstergm.netpanel import ActorRegistry, NetworkPanel
from tvstergm.transition import (build_transition, common_actors, formation_network, persistence_network,
                                 reconstruct, reconstruct_alt, transitions)


def _panel(actor_sets, edges=None, predecessors=None, use_predecessors=False):
    base = make_panel({p: frozenset() for p in actor_sets}, sorted(set().union(*actor_sets.values())))
    reg = ActorRegistry(dict(base.registry.spans), predecessors or {})
    edges = edges or {p: frozenset() for p in actor_sets}
    return NetworkPanel(tuple(sorted(actor_sets)), {p: frozenset(a) for p, a in actor_sets.items()}, edges,
                        base.covariates, reg, use_predecessors=use_predecessors)


def test_common_actors_examples():
    assert common_actors(_panel({1: "abc", 2: "abcd"}), 2) == set("abc")
    assert common_actors(_panel({1: "abc", 2: "abc"}), 2) == set("abc")
    assert common_actors(_panel({1: "ab", 2: "cd"}), 2) == frozenset()
    with pytest.raises(ContractError):
        common_actors(_panel({1: "ab", 2: "ab"}), 1)


def test_predecessor_mapping_only_when_enabled():
    sets = {1: {"SUN", "USA", "GBR"}, 2: {"RUS", "USA", "GBR"}}
    edges = {1: frozenset({("SUN", "USA")}), 2: frozenset()}
    off = _panel(sets, edges, {"RUS": "SUN"})
    on = _panel(sets, edges, {"RUS": "SUN"}, use_predecessors=True)
    assert common_actors(off, 2) == {"USA", "GBR"}
    assert common_actors(on, 2) == {"RUS", "USA", "GBR"}
    tr = build_transition(on, 2)
    assert tr.lag_source[tr.actors.index("RUS")] == "SUN"
    assert ("RUS", "USA") in tr.lagged_network()


def test_row_counts_examples():
    actors = ["a", "b", "c"]
    full = frozenset((i, j) for i in actors for j in actors if i != j)
    tr = build_transition(make_panel({1: frozenset(), 2: frozenset()}, actors), 2)
    assert (len(tr.formation_rows), len(tr.persistence_rows)) == (6, 0)
    tr = build_transition(make_panel({1: full, 2: frozenset()}, actors), 2)
    assert (len(tr.formation_rows), len(tr.persistence_rows)) == (0, 6)
    four = ["a", "b", "c", "d"]
    lag = frozenset({("a", "b"), ("b", "a"), ("c", "d"), ("d", "a"), ("b", "c")})
    tr = build_transition(make_panel({1: lag, 2: frozenset()}, four), 2)
    assert (len(tr.formation_rows), len(tr.persistence_rows)) == (7, 5)


def test_too_few_common_actors():
    with pytest.raises(ContractError, match="common actors"):
        build_transition(make_panel({1: frozenset(), 2: frozenset()}, ["a", "b"]), 2)
    assert transitions(make_panel({1: frozenset(), 2: frozenset()}, ["a", "b"])) == []


def test_entrants_excluded_and_responses(rng):
    sets = {1: set("abc"), 2: set("abcd")}
    edges = {1: frozenset({("a", "b")}), 2: frozenset({("a", "b"), ("d", "a"), ("c", "a")})}
    tr = build_transition(_panel(sets, edges), 2)
    assert tr.actors == ("a", "b", "c")
    rows = {(i, j): y for i, j, y in tr.formation_rows + tr.persistence_rows}
    assert rows[("a", "b")] == 1 and rows[("c", "a")] == 1 and rows[("b", "a")] == 0
    assert len(rows) == 6


def test_reconstruct_examples():
    prev, plus, minus = frozenset(), frozenset({(1, 2)}), frozenset()
    assert reconstruct(prev, plus, minus) == plus
    full = frozenset({(1, 2), (2, 1)})
    assert reconstruct(full, full, frozenset({(2, 1)})) == {(2, 1)}
    with pytest.raises(ContractError):
        reconstruct(frozenset({(1, 2)}), frozenset(), frozenset())
    with pytest.raises(ContractError):
        reconstruct(frozenset(), frozenset(), frozenset({(1, 2)}))


@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_round_trip_property(seed, n):
    rng = np.random.default_rng(seed)
    actors, y_prev = random_network(rng, n)
    _, y_now = random_network(rng, n)
    plus, minus = formation_network(y_prev, y_now), persistence_network(y_prev, y_now)
    assert reconstruct(y_prev, plus, minus) == y_now
    assert reconstruct_alt(y_prev, plus, minus) == y_now
    assert edgewise_reconstruct(y_prev, plus, minus, actors) == y_now


@given(st.integers(0, 2**32 - 1))
def test_rows_partition_dyads(seed):
    rng = np.random.default_rng(seed)
    actors, y1 = random_network(rng, 6)
    _, y2 = random_network(rng, 6)
    tr = build_transition(make_panel({1: y1, 2: y2}, actors), 2)
    f = {(i, j) for i, j, _ in tr.formation_rows}
    p = {(i, j) for i, j, _ in tr.persistence_rows}
    assert not f & p
    assert len(f | p) == tr.n * (tr.n - 1)
    assert p == set(y1)
    assert all(y == ((i, j) in y2) for i, j, y in tr.formation_rows + tr.persistence_rows)
