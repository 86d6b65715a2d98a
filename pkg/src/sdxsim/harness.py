"""Scenario files, end-to-end pipeline, traffic tests and equivalence checking."""

from __future__ import annotations

import ipaddress
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from . import compiler, fabric, route_server, vnh
from .errors import (BgpdSyntaxError, CompileError, MissingRouterId, PolicySyntaxError, SdxError,
                     ScenarioParseError, ScenarioValidationError, UnknownPeer, UnsupportedField)
from .policy_lang import ParticipantPolicies, parse_policy, port_literals
from .route_server import HostBinding, ParticipantConfig

log = logging.getLogger(__name__)

CONTROL_PORT = 22
DUMP_KINDS = ("rib", "edges", "vnh", "flows")


def reference_scenario_path() -> Path:
    return Path(str(resources.files("sdxsim") / "data" / "reference.json"))


@dataclass(frozen=True)
class TrafficTest:
    name: str
    src_host: str
    src_addr: ipaddress.IPv4Address
    dst_addr: ipaddress.IPv4Address
    dstport: int
    expect_host: Optional[str] = None  # None means the probe must be dropped

    @property
    def expected(self):
        return "Dropped" if self.expect_host is None else f"DeliveredTo({self.expect_host})"

    def probe(self):
        return fabric.PacketProbe(self.src_host, self.src_addr, self.dst_addr, self.dstport)

    def accepts(self, result):
        if self.expect_host is None:
            return result.dropped
        return result.outcome is fabric.Outcome.DELIVERED and result.host == self.expect_host


@dataclass(frozen=True)
class Scenario:
    participants: tuple
    policies: dict
    policy_texts: dict = field(default_factory=dict)
    vnh_pool: vnh.VnhPool = vnh.DEFAULT_POOL
    traffic_tests: tuple = ()
    fabric_subnet: ipaddress.IPv4Network = ipaddress.IPv4Network("172.0.0.0/16")
    name: str = "scenario"

    def hosts(self):
        return [h for cfg in self.participants for h in cfg.hosts]

    def without_policies(self, participant):
        """Copy of the scenario with one participant's policies removed."""
        policies = {k: v for k, v in self.policies.items() if k != participant}
        texts = {k: v for k, v in self.policy_texts.items() if k != participant}
        return Scenario(self.participants, policies, texts, self.vnh_pool,
                        self.traffic_tests, self.fabric_subnet, self.name)

    def with_policies(self, policies):
        return Scenario(self.participants, dict(policies), {}, self.vnh_pool,
                        self.traffic_tests, self.fabric_subnet, self.name)


# -- loading -----------------------------------------------------------------

def _require(obj, key, where, problems, kind=None):
    if key not in obj:
        problems.append(f"{where}: missing '{key}'")
        return None
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        problems.append(f"{where}: '{key}' has the wrong type")
        return None
    return value


def _participant_from_dict(raw, problems):
    where = f"participant {raw.get('name', '?')}"
    name = _require(raw, "name", "participant", problems, str)
    asn = raw.get("asn")
    router_id = raw.get("router_id")
    announced = list(raw.get("announced", []))
    if "bgpd_conf" in raw:
        try:
            conf = route_server.parse_bgpd_conf(raw["bgpd_conf"])
        except (BgpdSyntaxError, MissingRouterId) as exc:
            problems.append(f"{where}: bgpd_conf: {exc}")
            return None
        if asn is not None and asn != conf.asn:
            problems.append(f"{where}: asn {asn} disagrees with bgpd_conf ({conf.asn})")
        if router_id is not None and ipaddress.IPv4Address(router_id) != conf.router_id:
            problems.append(f"{where}: router_id disagrees with bgpd_conf")
        asn, router_id = conf.asn, conf.router_id
        announced = list(conf.announced) + [p for p in announced
                                            if ipaddress.IPv4Network(p) not in conf.announced]
    if asn is None or router_id is None:
        problems.append(f"{where}: needs asn and router_id (inline or via bgpd_conf)")
        return None
    ports = _require(raw, "phys_ports", where, problems, list)
    if not ports:
        problems.append(f"{where}: phys_ports must be non-empty")
        return None
    hosts = []
    for h in raw.get("hosts", []):
        try:
            hosts.append(HostBinding(h["name"], int(h["port"]), tuple(h.get("addresses", []))))
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"{where}: bad host entry {h!r}: {exc}")
    try:
        return ParticipantConfig(name, int(asn), router_id, tuple(ports), tuple(announced), tuple(hosts))
    except ValueError as exc:
        problems.append(f"{where}: {exc}")
        return None


def _test_from_dict(raw, problems):
    try:
        expect = raw["expect"]
        if expect == "dropped":
            host = None
        elif isinstance(expect, dict) and "delivered_to" in expect:
            host = expect["delivered_to"]
        else:
            raise ValueError(f"expect must be 'dropped' or {{'delivered_to': host}}, got {expect!r}")
        return TrafficTest(raw["name"], raw["src_host"], ipaddress.IPv4Address(raw["src_addr"]),
                           ipaddress.IPv4Address(raw["dst_addr"]), int(raw["dstport"]), host)
    except (KeyError, ValueError, TypeError) as exc:
        problems.append(f"traffic test {raw.get('name', '?') if isinstance(raw, dict) else raw!r}: {exc}")
        return None


def scenario_from_dict(doc) -> Scenario:
    """Build and cross-check a Scenario; every problem found is reported at once."""
    problems = []
    if not isinstance(doc, dict):
        raise ScenarioValidationError(["top level must be an object"])
    configs = [c for c in (_participant_from_dict(p, problems) for p in doc.get("participants", []))
               if c is not None]

    names = [c.name for c in configs]
    for n in sorted({n for n in names if names.count(n) > 1}):
        problems.append(f"duplicate participant {n!r}")
    rids = [c.router_id for c in configs]
    for r in sorted({r for r in rids if rids.count(r) > 1}):
        problems.append(f"duplicate router-id {r}")
    ports = [p for c in configs for p in c.phys_ports]
    for p in sorted({p for p in ports if ports.count(p) > 1}):
        problems.append(f"fabric port {p} used more than once")
    host_names = [h.name for c in configs for h in c.hosts]
    for h in sorted({h for h in host_names if host_names.count(h) > 1}):
        problems.append(f"duplicate host {h!r}")
    for c in configs:
        for h in c.hosts:
            if h.port not in c.phys_ports:
                problems.append(f"host {h.name}: port {h.port} is not a port of {c.name}")

    try:
        fabric_subnet = ipaddress.IPv4Network(doc.get("fabric_subnet", "172.0.0.0/16"))
    except ValueError as exc:
        problems.append(f"fabric_subnet: {exc}")
        fabric_subnet = ipaddress.IPv4Network("172.0.0.0/16")
    pool = vnh.DEFAULT_POOL
    if "vnh_pool" in doc:
        try:
            raw = doc["vnh_pool"]
            pool = vnh.VnhPool(raw["ip_base"], raw["mac_base"])
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"vnh_pool: {exc}")

    policies = {}
    texts = {}
    for owner, raw in sorted(doc.get("policies", {}).items()):
        if owner not in names:
            problems.append(f"policies given for unknown participant {owner!r}")
            continue
        peers = set(names) - {owner}
        parsed = {}
        for direction in ("outbound", "inbound"):
            text = raw.get(direction)
            if text is None:
                continue
            texts.setdefault(owner, {})[direction] = text
            try:
                parsed[direction] = parse_policy(text, peers)
            except (PolicySyntaxError, UnknownPeer, UnsupportedField) as exc:
                problems.append(f"{owner} {direction} policy: {type(exc).__name__}: {exc}")
        policies[owner] = ParticipantPolicies(parsed.get("outbound"), parsed.get("inbound"))

    tests = [t for t in (_test_from_dict(t, problems) for t in doc.get("traffic_tests", []))
             if t is not None]
    bound = {h.name: h.addresses for c in configs for h in c.hosts}
    for t in tests:
        if t.src_host not in bound:
            problems.append(f"traffic test {t.name}: unknown host {t.src_host!r}")
        elif t.src_addr not in bound[t.src_host]:
            problems.append(f"traffic test {t.name}: {t.src_addr} is not bound on {t.src_host}")
        if t.expect_host is not None and t.expect_host not in bound:
            problems.append(f"traffic test {t.name}: unknown host {t.expect_host!r}")
    if problems:
        raise ScenarioValidationError(problems)
    return Scenario(tuple(configs), policies, texts, pool, tuple(tests), fabric_subnet,
                    doc.get("name", "scenario"))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(str(path), 0, exc.strerror or str(exc)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(str(path), f"{exc.lineno}:{exc.colno}", exc.msg) from None
    return scenario_from_dict(doc)


# -- pipeline ----------------------------------------------------------------

@dataclass
class Compiled:
    scenario: Scenario
    ribs: dict
    vnhs: list
    table: compiler.FlowTable
    edge_tables: dict
    state: fabric.FabricState

    def dump(self, kind, fmt="text"):
        if kind == "rib":
            if fmt == "json":
                return route_server.ribs_to_records(self.ribs)
            return route_server.format_ribs(self.ribs)
        if kind == "edges":
            if fmt == "json":
                return {h: self.edge_tables[h].to_records() for h in sorted(self.edge_tables)}
            return "".join(f"{h}:\n{self.edge_tables[h].dump()}" for h in sorted(self.edge_tables))
        if kind == "vnh":
            if fmt == "json":
                return vnh.vnhs_to_records(self.vnhs)
            return vnh.format_vnh_table(self.vnhs)
        if kind == "flows":
            return self.table.to_records() if fmt == "json" else self.table.dump()
        raise ValueError(f"unknown dump {kind!r}")


def build(scenario: Scenario, table_hook: Optional[Callable] = None) -> Compiled:
    """parse -> ribs -> validate -> VNHs -> compile -> fabric state."""
    configs = scenario.participants
    ribs = route_server.compute_ribs(configs)
    violations = compiler.validate_policies(configs, scenario.policies, ribs)
    if violations:
        raise CompileError(violations)
    vnhs = vnh.compute_vnhs(configs, ribs, scenario.policies, scenario.vnh_pool)
    table = compiler.compile_table(configs, scenario.policies, ribs, vnhs)
    if table_hook is not None:
        table = table_hook(table)
    edges = fabric.build_edge_tables(configs, ribs, vnhs, scenario.fabric_subnet)
    state = fabric.FabricState(tuple(configs), edges, tuple(vnhs), table)
    log.debug("compiled %s: %d VNHs, %d rules", scenario.name, len(vnhs), len(table))
    return Compiled(scenario, ribs, vnhs, table, edges, state)


@dataclass(frozen=True)
class TestResult:
    name: str
    expected: str
    actual: str
    passed: bool

    __test__ = False  # not a pytest class


@dataclass
class Report:
    tests: list = field(default_factory=list)
    dumps: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    config_error: bool = False

    @property
    def passed(self):
        return not self.config_error and all(t.passed for t in self.tests)

    def to_dict(self):
        return {
            "passed": self.passed,
            "config_error": self.config_error,
            "tests": [vars(t) for t in self.tests],
            "diagnostics": list(self.diagnostics),
            "dumps": self.dumps,
        }


def run(scenario: Scenario, dumps=(), fmt="text") -> Report:
    report = Report()
    try:
        compiled = build(scenario)
    except CompileError as exc:
        report.config_error = True
        report.diagnostics.extend(str(v) for v in exc.violations)
        return report
    except SdxError as exc:
        report.config_error = True
        report.diagnostics.append(f"{type(exc).__name__}: {exc}")
        return report
    for test in scenario.traffic_tests:
        result = fabric.inject(compiled.state, test.probe())
        report.tests.append(TestResult(test.name, test.expected, str(result), test.accepts(result)))
    for kind in dumps:
        report.dumps[kind] = compiled.dump(kind, fmt)
    return report


# -- equivalence -------------------------------------------------------------

def enumerate_probes(scenario: Scenario) -> list:
    """Every bound source address x one address per announced prefix x policy ports + 22."""
    asts = [a for pol in scenario.policies.values() for a in (pol.outbound, pol.inbound)]
    ports = sorted(set(port_literals(asts)) | {CONTROL_PORT})
    prefixes = sorted({p for c in scenario.participants for p in c.announced},
                      key=lambda n: (int(n.network_address), n.prefixlen))
    probes = []
    for cfg in scenario.participants:
        for host in cfg.hosts:
            for src in host.addresses:
                for prefix in prefixes:
                    for port in ports:
                        probes.append(fabric.PacketProbe(host.name, src, vnh.representative_address(prefix), port))
    return probes


@dataclass(frozen=True)
class Divergence:
    probe: fabric.PacketProbe
    compiled: str
    oracle: str


@dataclass
class EquivalenceReport:
    probes: int = 0
    divergences: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    config_error: bool = False

    @property
    def passed(self):
        return not self.config_error and not self.divergences

    def to_dict(self):
        return {
            "passed": self.passed,
            "probes": self.probes,
            "divergences": [{"probe": str(d.probe), "compiled": d.compiled, "oracle": d.oracle}
                            for d in self.divergences],
            "diagnostics": list(self.diagnostics),
        }


def check(scenario: Scenario, table_hook: Optional[Callable] = None) -> EquivalenceReport:
    """Compare compiled forwarding against the oracle on the canonical probe space."""
    report = EquivalenceReport()
    try:
        compiled = build(scenario, table_hook)
    except CompileError as exc:
        report.config_error = True
        report.diagnostics.extend(str(v) for v in exc.violations)
        return report
    except SdxError as exc:
        report.config_error = True
        report.diagnostics.append(f"{type(exc).__name__}: {exc}")
        return report
    configs = scenario.participants
    for probe in enumerate_probes(scenario):
        report.probes += 1
        got = fabric.inject(compiled.state, probe)
        want = fabric.oracle_forward(configs, compiled.ribs, scenario.policies, probe)
        if got != want:
            report.divergences.append(Divergence(probe, str(got), str(want)))
    if CONTROL_PORT not in port_literals(
            [a for pol in scenario.policies.values() for a in (pol.outbound, pol.inbound)]):
        report.diagnostics.append(
            f"port {CONTROL_PORT} stands for traffic no policy names; participants with an inbound "
            f"policy drop it (inbound default is drop)")
    return report
