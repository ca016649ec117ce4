"""Corpus parsing, state-network construction, rates."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowlump import (
    EmptyCorpusError,
    PathCorpus,
    PathRecord,
    build_state_network,
    parse_paths,
    read_snet,
    visit_rates,
    write_paths,
    write_snet,
)


def corpus_from(text, grouped=False):
    return parse_paths(io.StringIO(text), grouped=grouped)


def state_by(net, context, physical):
    return net.index[(tuple(context), physical)]


# ---------------------------------------------------------------------------
# parse_paths
# ---------------------------------------------------------------------------

def test_parse_single_trigram():
    cp = corpus_from("1 2 3 1.0\n")
    assert len(cp.paths) == 1
    assert cp.paths[0].weight == 1.0
    assert [cp.names[i] for i in cp.paths[0].nodes] == ["1", "2", "3"]


def test_parse_comment_only_is_empty():
    with pytest.raises(EmptyCorpusError):
        corpus_from("# comment\n")


def test_parse_repeated_named_lines_hand_count():
    cp = corpus_from("".join("a b c 2\n" for _ in range(10)))
    assert cp.total_weight == 20.0
    assert cp.n_physical == 3
    assert cp.names == ["a", "b", "c"]


def test_parse_rejects_bad_lines_with_line_numbers():
    with pytest.warns(UserWarning, match="rejected 2"):
        cp = corpus_from("1 2 1\nx\n1 2 oops\n")
    assert [lineno for lineno, _ in cp.rejects] == [2, 3]
    assert len(cp.paths) == 1


def test_parse_vertices_block_and_grouped():
    text = (
        "*Vertices\n"
        '0 "Journal A"\n'
        '1 "Journal B"\n'
        "*GroupedPaths\n"
        "g1 0 1 0 2\n"
        "g2 1 0 1 3\n"
    )
    cp = corpus_from(text)
    assert cp.names == ["Journal A", "Journal B"]
    assert [p.group_key for p in cp.paths] == ["g1", "g2"]
    assert cp.total_weight == 5.0


def test_parse_undeclared_id_rejected():
    with pytest.warns(UserWarning):
        cp = corpus_from("*Vertices\n0 a\n1 b\n*Paths\n0 1 1\n0 7 1\n")
    assert len(cp.paths) == 1
    assert cp.rejects and "undeclared" in cp.rejects[0][1]


def test_parse_nonpositive_weight_rejected():
    with pytest.warns(UserWarning):
        cp = corpus_from("1 2 0\n1 2 -3\n1 2 1\n")
    assert len(cp.paths) == 1


# ---------------------------------------------------------------------------
# build_state_network
# ---------------------------------------------------------------------------

def test_first_order_unrolls_definition():
    net = build_state_network(corpus_from("1 2 3 1\n"), 1)
    assert net.n_states == 3
    a, b, c = (state_by(net, (), p) for p in (0, 1, 2))
    assert net.links[a] == {b: 1.0}
    assert net.links[b] == {c: 1.0}
    assert net.links[c] == {}


def test_second_order_unrolls_definition():
    net = build_state_network(corpus_from("1 2 3 1\n"), 2)
    assert net.n_states == 2
    u = state_by(net, (0,), 1)
    v = state_by(net, (1,), 2)
    assert net.links[u] == {v: 1.0}
    assert net.out_weight[v] == 0.0


def test_hub_fanout_owns_one_state_per_context():
    # four 3-node paths x -> hub -> x' with unit weights
    text = "a P a' 1\nb P b' 1\nc P c' 1\nd P d' 1\n"
    net = build_state_network(corpus_from(text), 2)
    hub = corpus_from(text).names.index("P")
    owners = [s for s in net.states.values() if s.physical == hub]
    assert len(owners) == 4
    for s in owners:
        assert len(net.links[s.id]) == 1
        assert net.out_weight[s.id] == 1.0


def test_order_below_one_rejected():
    with pytest.raises(ValueError):
        build_state_network(corpus_from("1 2 1\n"), 0)


def test_short_paths_skipped_with_warning():
    cp = corpus_from("1 2 1\n1 2 3 1\n")
    with pytest.warns(UserWarning, match="skipped 1"):
        net = build_state_network(cp, 2)
    assert net.total_weight == 1.0


def test_all_paths_short_is_error():
    with pytest.raises(EmptyCorpusError):
        build_state_network(corpus_from("1 2 1\n"), 5)


# ---------------------------------------------------------------------------
# transitions / projections / rates
# ---------------------------------------------------------------------------

def test_transition_probabilities_normalize():
    net = build_state_network(corpus_from("u v1 3\nu v2 1\n"), 1)
    u = state_by(net, (), 0)
    trans = net.transitions(u)
    assert trans == {state_by(net, (), 1): 0.75, state_by(net, (), 2): 0.25}
    assert list(trans) == sorted(trans)


def test_single_target_probability_one():
    net = build_state_network(corpus_from("u v 5\n"), 1)
    assert net.transitions(state_by(net, (), 0)) == {state_by(net, (), 1): 1.0}


def test_dangling_marker_not_nan():
    net = build_state_network(corpus_from("u v 5\n"), 1)
    assert net.transitions(state_by(net, (), 1)) is None
    assert net.physical_projection(state_by(net, (), 1)) is None


def test_physical_projection_aggregates():
    # two targets of the same physical node collapse to mass 1
    cp = corpus_from("a b x 1\na b y 1\nz b x 2\n")
    net = build_state_network(cp, 2)
    u = state_by(net, (cp.names.index("a"),), cp.names.index("b"))
    proj = net.physical_projection(u)
    assert proj == {cp.names.index("x"): 0.5, cp.names.index("y"): 0.5}


def test_hub_projection_mass_by_physical():
    # 0.7 of the hub state's flow returns to one physical node
    cp = corpus_from("a P r 7\na P s 3\n")
    net = build_state_network(cp, 2)
    u = state_by(net, (cp.names.index("a"),), cp.names.index("P"))
    proj = net.physical_projection(u)
    assert proj[cp.names.index("r")] == pytest.approx(0.7)
    assert proj[cp.names.index("s")] == pytest.approx(0.3)


def test_empirical_visit_rates():
    cp = corpus_from("u a 3\nv a 1\n")
    net = build_state_network(cp, 1)
    rates = visit_rates(net)
    assert rates[state_by(net, (), cp.names.index("u"))] == 0.75
    assert rates[state_by(net, (), cp.names.index("v"))] == 0.25
    assert rates[state_by(net, (), cp.names.index("a"))] == 0.0  # dangling


def test_stationary_symmetric_cycle():
    net = build_state_network(corpus_from("a b 1\nb a 1\n"), 1)
    rates = visit_rates(net, stationary=True)
    assert rates[0] == pytest.approx(0.5, abs=1e-12)
    assert rates[1] == pytest.approx(0.5, abs=1e-12)


def test_stationary_three_cycle_matches_linear_solve():
    net = build_state_network(corpus_from("a b 1\nb c 1\nc a 1\n"), 1)
    rates = visit_rates(net, stationary=True)
    # oracle: solve pi P = pi directly
    P = np.zeros((3, 3))
    for u in net.states:
        for v, w in net.links[u].items():
            P[u, v] = w / net.out_weight[u]
    w, vecs = np.linalg.eig(P.T)
    pi = np.real(vecs[:, np.argmax(np.real(w))])
    pi /= pi.sum()
    for u in net.states:
        assert rates[u] == pytest.approx(pi[u], abs=1e-10)


def test_stationary_nonconvergent_warns():
    # a -> b -> a with an extra feeder keeps the iterate 2-periodic forever
    cp = PathCorpus(["a", "b", "c"],
                    [PathRecord((0, 1), 1.0), PathRecord((1, 0), 1.0),
                     PathRecord((2, 0), 1.0)])
    net = build_state_network(cp, 1)
    with pytest.warns(UserWarning, match="not converged"):
        visit_rates(net, stationary=True, max_iter=50, tol=1e-12)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

paths_strategy = st.lists(
    st.tuples(
        st.lists(st.integers(0, 4), min_size=2, max_size=6),
        st.floats(0.1, 10.0, allow_nan=False),
    ),
    min_size=1, max_size=20,
)


@settings(max_examples=50, deadline=None)
@given(paths_strategy, st.integers(1, 3))
def test_total_link_weight_counts_windows(path_specs, order):
    cp = PathCorpus([str(i) for i in range(5)],
                    [PathRecord(tuple(nodes), w) for nodes, w in path_specs])
    expected = sum(w * (len(nodes) - order)
                   for nodes, w in path_specs if len(nodes) >= order + 1)
    if expected <= 0:
        with pytest.raises(EmptyCorpusError):
            build_state_network(cp, order)
        return
    import warnings as _w
    with _w.catch_warnings():
        _w.simplefilter("ignore")
        net = build_state_network(cp, order)
    assert net.total_weight == pytest.approx(expected, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(paths_strategy)
def test_first_order_reproduces_link_ratios(path_specs):
    cp = PathCorpus([str(i) for i in range(5)],
                    [PathRecord(tuple(nodes), w) for nodes, w in path_specs])
    net = build_state_network(cp, 1)
    # oracle: independent recount of bigram weights in the same order
    w_ij = {}
    w_i = {}
    for nodes, w in path_specs:
        for a, b in zip(nodes, nodes[1:]):
            w_ij[(a, b)] = w_ij.get((a, b), 0.0) + w
            w_i[a] = w_i.get(a, 0.0) + w
    for (i, j), wij in w_ij.items():
        u = net.index[((), i)]
        v = net.index[((), j)]
        assert net.transitions(u)[v] * net.out_weight[u] == pytest.approx(wij, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(paths_strategy, st.integers(1, 3))
def test_windowed_conditional_frequencies_match(path_specs, order):
    cp = PathCorpus([str(i) for i in range(5)],
                    [PathRecord(tuple(nodes), w) for nodes, w in path_specs])
    usable = [(nodes, w) for nodes, w in path_specs if len(nodes) >= order + 1]
    if not usable:
        return
    import warnings as _w
    with _w.catch_warnings():
        _w.simplefilter("ignore")
        net = build_state_network(cp, order)
    # oracle: recount (m+1)-gram over m-gram ratios window by window
    num = {}
    den = {}
    for nodes, w in usable:
        for t in range(order, len(nodes)):
            ctx = tuple(nodes[t - order: t])
            num[(ctx, nodes[t])] = num.get((ctx, nodes[t]), 0.0) + w
            den[ctx] = den.get(ctx, 0.0) + w
    for (ctx, nxt), wn in num.items():
        u = net.index[(ctx[:-1], ctx[-1])]
        v = net.index[(ctx[1:], nxt)]
        assert net.transitions(u)[v] == pytest.approx(wn / den[ctx], rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(paths_strategy, st.booleans())
def test_parse_write_parse_identity(path_specs, grouped):
    cp = PathCorpus(["alpha", "beta", "gamma", "delta", "eps"],
                    [PathRecord(tuple(nodes), w, f"g{i % 3}" if grouped else None)
                     for i, (nodes, w) in enumerate(path_specs)])
    buf = io.StringIO()
    write_paths(cp, buf)
    back = parse_paths(io.StringIO(buf.getvalue()))
    assert back.names == cp.names
    assert [(p.nodes, p.weight, p.group_key) for p in back.paths] == \
           [(p.nodes, p.weight, p.group_key) for p in cp.paths]


def test_snet_round_trip_bit_exact():
    cp = corpus_from("a b c 0.1\nb c a 2.7182818284590452\nc a b 3\n")
    net = build_state_network(cp, 2)
    buf = io.StringIO()
    write_snet(net, buf)
    back = read_snet(io.StringIO(buf.getvalue()))
    assert back.names == net.names
    assert back.order == net.order
    assert {s.id: (s.physical, s.context) for s in back.states.values()} == \
           {s.id: (s.physical, s.context) for s in net.states.values()}
    assert back.links == net.links
    assert back.out_weight == net.out_weight
