import ipaddress

import pytest
from hypothesis import given, settings, strategies as st

from conftest import A_OUTBOUND, C_INBOUND
from sdxsim.errors import PolicySyntaxError, UnknownPeer, UnsupportedField
from sdxsim.fabric import PacketProbe
from sdxsim.policy_lang import (ActionKind, MatchPredicate, Parallel, PolicyAction, Term,
                                eval_policy, parse_policy, pretty_print, terms, tokenize)

FWD_B = PolicyAction.fwd_participant("B")
FWD_C = PolicyAction.fwd_participant("C")


def probe(dstport, dst="140.0.0.1", src="100.0.0.1", srcport=0):
    return PacketProbe("a1", src, dst, dstport, srcport)


def dport(n):
    return MatchPredicate("dstport", n)


def test_a_outbound_parses_to_three_terms(a_outbound_ast):
    assert isinstance(a_outbound_ast, Parallel)
    assert [(t.matches, t.action) for t in a_outbound_ast.children] == [
        ((dport(80),), FWD_B),
        ((dport(443),), FWD_C),
        ((dport(8080),), FWD_C),
    ]


def test_c_inbound_without_parens():
    text = ("match(dstport=443) >> sdx.fwd(participant.phys_ports[0]) + "
            "match(dstport=80) >> sdx.fwd(participant.phys_ports[1])")
    ast = parse_policy(text, set())
    assert ast == Parallel((Term((dport(443),), PolicyAction.fwd_phys_port(0)),
                            Term((dport(80),), PolicyAction.fwd_phys_port(1))))
    assert ast == parse_policy(C_INBOUND, set())


def test_unknown_peer():
    with pytest.raises(UnknownPeer) as err:
        parse_policy("match(dstport=80) >> sdx.fwd(participant.peers['Z'])", {"B", "C"})
    assert err.value.name == "Z"


def test_unsupported_field():
    with pytest.raises(UnsupportedField) as err:
        parse_policy("match(vlan=3) >> drop", set())
    assert err.value.name == "vlan"


@pytest.mark.parametrize("text, position", [
    ("match(dstport=80) >>", 20),
    ("match(dstport=80) sdx", 18),
    ("match(dstport=80", 16),
    ("match(dstport=70000) >> drop", 14),
    ("match(dstip='1.2.3.4/8') >> drop", 12),
    ("drop >> match(dstport=80)", 5),
    ("match(dstport=80)", 17),
    ("sdx.fwd(participant.ports[0])", 20),
    ("@", 0),
])
def test_syntax_errors_carry_position(text, position):
    with pytest.raises(PolicySyntaxError) as err:
        parse_policy(text, {"B"})
    assert err.value.position == position


def test_empty_policy_rejected():
    with pytest.raises(PolicySyntaxError):
        parse_policy("  \n ", set())


def test_positions_are_byte_offsets():
    toks = tokenize("'é' drop")
    assert toks[0].end == 4
    assert toks[1].start == 5


def test_sequential_distributes_over_parallel():
    ast = parse_policy("match(dstport=80) >> (sdx.fwd(participant.peers['B']) + drop)", {"B"})
    assert [t.action for t in terms(ast)] == [FWD_B, PolicyAction.drop()]
    assert all(t.matches == (dport(80),) for t in terms(ast))


def test_multiple_matches_in_chain():
    ast = parse_policy("match(dstport=80, srcip='10.0.0.0/8') >> match(dstip='140.0.0.0/24') >> drop", set())
    assert [m.field for m in ast.matches] == ["dstport", "srcip", "dstip"]


def test_pretty_print_single_term():
    term = Term((dport(80),), FWD_B)
    assert pretty_print(term) == "match(dstport=80) >> sdx.fwd(participant.peers['B'])"


def test_pretty_print_a_outbound_has_two_plus(a_outbound_ast):
    assert pretty_print(a_outbound_ast).count("+") == 2


def test_c_inbound_round_trip(c_inbound_ast):
    assert parse_policy(pretty_print(c_inbound_ast), set()) == c_inbound_ast


def test_spans_point_into_source(a_outbound_ast):
    raw = A_OUTBOUND.encode()
    first = a_outbound_ast.children[0]
    assert raw[first.span[0]:first.span[1]].decode() == \
        "match(dstport=80) >> sdx.fwd(participant.peers['B'])"


def test_eval_a_outbound_port80(a_outbound_ast):
    assert eval_policy(a_outbound_ast, probe(80)) == {FWD_B}


def test_eval_c_inbound_port8080_empty(c_inbound_ast):
    assert eval_policy(c_inbound_ast, probe(8080)) == frozenset()


def test_eval_absent_policy():
    assert eval_policy(None, probe(80)) == frozenset()


def test_action_invariants():
    with pytest.raises(ValueError):
        PolicyAction(ActionKind.FWD_PHYS_PORT, participant="B", port_index=0)
    with pytest.raises(ValueError):
        PolicyAction(ActionKind.DROP, port_index=1)


def test_parallel_needs_two_children():
    with pytest.raises(ValueError):
        Parallel((Term((), FWD_B),))


# -- properties ---------------------------------------------------------------

names = st.sampled_from(["A", "B", "C", "peer_1"])
port_pred = st.builds(MatchPredicate, st.sampled_from(["dstport", "srcport"]), st.integers(0, 65535))
ip_pred = st.builds(
    lambda f, addr, plen: MatchPredicate(f, ipaddress.IPv4Network((addr, plen), strict=False)),
    st.sampled_from(["dstip", "srcip"]), st.integers(0, 2**32 - 1), st.integers(0, 32))
actions = st.one_of(
    st.builds(PolicyAction.fwd_participant, names),
    st.builds(PolicyAction.fwd_phys_port, st.integers(0, 9)),
    st.just(PolicyAction.drop()),
)
term_st = st.builds(Term, st.lists(st.one_of(port_pred, ip_pred), max_size=3).map(tuple), actions)
ast_st = st.one_of(term_st, st.lists(term_st, min_size=2, max_size=5).map(lambda ts: Parallel(tuple(ts))))
probe_st = st.builds(
    lambda d, s, dst, src: PacketProbe("h", ipaddress.IPv4Address(src), ipaddress.IPv4Address(dst), d, s),
    st.integers(0, 65535), st.integers(0, 65535), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))


@given(ast_st)
def test_round_trip(ast):
    assert parse_policy(pretty_print(ast), {"A", "B", "C", "peer_1"}) == ast


@given(ast_st)
def test_parse_is_deterministic(ast):
    text = pretty_print(ast)
    assert parse_policy(text) == parse_policy(text)


@given(ast_st, ast_st, probe_st)
def test_parallel_is_union(p, q, pkt):
    both = Parallel(terms(p) + terms(q))
    assert eval_policy(both, pkt) == eval_policy(p, pkt) | eval_policy(q, pkt)


@settings(max_examples=200)
@given(ast_st, probe_st, probe_st)
def test_match_locality(ast, pkt, other):
    """Fields the policy never names cannot change its verdict."""
    used = {m.field for t in terms(ast) for m in t.matches}
    mutated = PacketProbe(
        "h",
        pkt.src_ip if "srcip" in used else other.src_ip,
        pkt.dst_ip if "dstip" in used else other.dst_ip,
        pkt.dstport if "dstport" in used else other.dstport,
        pkt.srcport if "srcport" in used else other.srcport,
    )
    assert eval_policy(ast, mutated) == eval_policy(ast, pkt)
