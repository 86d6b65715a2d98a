import ipaddress
import random

import pytest
from hypothesis import given, strategies as st

from sdxsim import harness
from sdxsim.compiler import DROP, FlowRule, FlowTable, Output
from sdxsim.fabric import (DIRECT, NO_ROUTE, EdgeRouterTable, EdgeRow, Outcome, PacketProbe,
                           build_edge_tables, evaluate_flow_table, inject, lpm_lookup, oracle_forward)
from sdxsim.route_server import ParticipantConfig, HostBinding, compute_ribs

DEFAULT = FlowRule(0, DROP, "default")


def net(text):
    return ipaddress.IPv4Network(text)


def gw(table, octet):
    return lpm_lookup(table, f"{octet}.0.0.1")


def test_a1_edge_table_classes(compiled):
    a1 = compiled.edge_tables["a1"]
    assert gw(a1, 140) == gw(a1, 150)
    assert gw(a1, 160) == gw(a1, 170)
    assert gw(a1, 180) == gw(a1, 190)
    assert len({gw(a1, 140), gw(a1, 160), gw(a1, 180)}) == 3
    assert EdgeRow(net("172.0.0.0/16"), DIRECT, "a1-eth0") in a1.rows


def test_b1_lacks_own_prefixes(compiled):
    dests = {r.prefix for r in compiled.edge_tables["b1"].rows}
    ribs_b = set(compiled.ribs["B"].entries)
    assert net("140.0.0.0/24") not in dests and net("150.0.0.0/24") not in dests
    assert dests == ribs_b | {net("172.0.0.0/16")}


def test_isolated_host_only_direct():
    cfg = ParticipantConfig("A", 1, "1.1.1.1", (1,), ("10.0.0.0/24",), (HostBinding("a1", 1, ("10.0.0.1",)),))
    tables = build_edge_tables([cfg], compute_ribs([cfg]), [])
    assert [r.gateway for r in tables["a1"].rows] == [DIRECT]


def test_lpm_examples(compiled):
    a1 = compiled.edge_tables["a1"]
    vnh140 = next(v for v in compiled.vnhs if net("140.0.0.0/24") in v.prefixes)
    assert lpm_lookup(a1, "140.0.0.1") == vnh140.virtual_ip
    assert lpm_lookup(a1, "9.9.9.9") == NO_ROUTE
    table = EdgeRouterTable("x", (EdgeRow(net("10.0.0.0/8"), "g8", "x"), EdgeRow(net("10.1.0.0/16"), "g16", "x")))
    assert lpm_lookup(table, "10.1.2.3") == "g16"


@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 32)), max_size=25),
       st.integers(0, 2**32 - 1))
def test_lpm_matches_linear_scan(rows, addr):
    nets = {ipaddress.IPv4Network((a, l), strict=False) for a, l in rows}
    table = EdgeRouterTable("x", tuple(EdgeRow(n, f"gw-{n}", "x") for n in nets))
    dst = ipaddress.IPv4Address(addr)
    covering = [n for n in nets if dst in n]
    want = f"gw-{max(covering, key=lambda n: n.prefixlen)}" if covering else NO_ROUTE
    assert lpm_lookup(table, dst) == want


def test_evaluate_443_to_c_port0(compiled):
    vnh180 = next(v for v in compiled.vnhs if net("180.0.0.0/24") in v.prefixes)
    probe = PacketProbe("a1", "100.0.0.1", "180.0.0.1", 443, in_port=1, dst_mac=vnh180.virtual_mac)
    assert evaluate_flow_table(compiled.table, probe).action == Output(3)


def test_evaluate_nothing_matches(compiled):
    probe = PacketProbe("a1", "100.0.0.1", "1.2.3.4", 9, in_port=99, dst_mac="00:00:00:00:00:00")
    assert evaluate_flow_table(compiled.table, probe).is_default


def test_equal_priority_insertion_order():
    first = FlowRule(5, Output(1), "first", dstport=80)
    second = FlowRule(5, Output(2), "second", dst_prefix=net("10.0.0.0/8"))
    table = FlowTable([first, second, DEFAULT])
    probe = PacketProbe("h", "1.1.1.1", "10.0.0.1", 80, in_port=1, dst_mac="aa:00:00:00:00:01")
    assert table.rules.index(first) < table.rules.index(second)
    assert evaluate_flow_table(table, probe) is first
    assert evaluate_flow_table(FlowTable([second, first, DEFAULT]), probe) is second


@pytest.mark.parametrize("src, dst, port, host", [
    ("100.0.0.1", "140.0.0.1", 80, "b1"),
    ("100.0.0.2", "180.0.0.1", 80, "c2"),
    ("100.0.0.1", "140.0.0.1", 443, "c1"),
    ("100.0.0.1", "160.0.0.1", 443, "b1"),
    ("100.0.0.1", "160.0.0.1", 8080, "b1"),
])
def test_inject_and_oracle_deliver(compiled, reference, src, dst, port, host):
    probe = PacketProbe("a1", src, dst, port)
    got = inject(compiled.state, probe)
    assert got.outcome is Outcome.DELIVERED and got.host == host
    assert oracle_forward(reference.participants, compiled.ribs, reference.policies, probe) == got


def test_inject_8080_dropped(compiled):
    got = inject(compiled.state, PacketProbe("a1", "100.0.0.1", "180.0.0.1", 8080))
    assert got.outcome is Outcome.DROPPED_BY_POLICY and got.provenance == "default"


def test_8080_to_shared_prefix_dropped_not_leaked(compiled, reference):
    # steered to C (which announces 140/24 too) and dropped there, never delivered via B
    probe = PacketProbe("a1", "100.0.0.1", "140.0.0.1", 8080)
    want = oracle_forward(reference.participants, compiled.ribs, reference.policies, probe)
    assert want.outcome is Outcome.DROPPED_BY_POLICY
    assert inject(compiled.state, probe) == want


def test_b1_to_a(compiled, reference):
    probe = PacketProbe("b1", "140.0.0.1", "100.0.0.1", 80)
    got = oracle_forward(reference.participants, compiled.ribs, reference.policies, probe)
    assert got.outcome is Outcome.DELIVERED and got.host == "a1"
    assert inject(compiled.state, probe) == got


def test_no_route_and_direct(compiled):
    assert inject(compiled.state, PacketProbe("a1", "100.0.0.1", "9.9.9.9", 80)).outcome is Outcome.DROPPED_NO_ROUTE
    assert inject(compiled.state, PacketProbe("a1", "100.0.0.1", "172.0.0.9", 80)).outcome is Outcome.DROPPED_NO_ROUTE
    # c1 announces 140/24 itself, so the route server gives it no path there
    assert inject(compiled.state, PacketProbe("c1", "180.0.0.1", "140.0.0.1", 80)).outcome is Outcome.DROPPED_NO_ROUTE


def test_delivered_no_listener(compiled):
    got = inject(compiled.state, PacketProbe("a1", "100.0.0.1", "160.0.0.77", 80))
    assert got.outcome is Outcome.DELIVERED_NO_LISTENER and got.participant == "B"


def test_every_probe_has_exactly_one_fate(reference, compiled):
    for probe in harness.enumerate_probes(reference):
        got = inject(compiled.state, probe)
        delivered = got.outcome in (Outcome.DELIVERED, Outcome.DELIVERED_NO_LISTENER)
        assert delivered != got.dropped


def test_probes_are_safe_to_share_across_threads(reference, compiled):
    from concurrent.futures import ThreadPoolExecutor

    probes = harness.enumerate_probes(reference)
    serial = [inject(compiled.state, p) for p in probes]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(lambda p: inject(compiled.state, p), probes))
    assert parallel == serial


def test_random_probe_spot_check(reference, compiled):
    rng = random.Random(3)
    for _ in range(200):
        cfg = rng.choice(reference.participants)
        host = rng.choice(cfg.hosts)
        probe = PacketProbe(host.name, rng.choice(host.addresses),
                            ipaddress.IPv4Address(rng.choice([100, 110, 140, 150, 160, 170, 180, 190]) << 24
                                                  | rng.randrange(256)),
                            rng.choice([80, 443, 8080, 22, 53]))
        assert inject(compiled.state, probe) == oracle_forward(
            reference.participants, compiled.ribs, reference.policies, probe)
