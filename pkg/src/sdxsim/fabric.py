"""Dataplane simulation: edge-router tables, flow-table evaluation, probe injection.

Also holds the interpretive oracle, which forwards a probe straight from the
policy ASTs and RIBs without going through the compiled table.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, replace
from typing import Optional

from .compiler import DEFAULT_PROVENANCE, Output, reachable_prefixes, term_provenance
from .errors import AmbiguousForward, InconsistentState
from .policy_lang import ActionKind, terms
from .route_server import rib_lookup

DIRECT = "DIRECT"
NO_ROUTE = "NO_ROUTE"


@dataclass(frozen=True)
class PacketProbe:
    src_host: str
    src_ip: ipaddress.IPv4Address
    dst_ip: ipaddress.IPv4Address
    dstport: int
    srcport: int = 0
    in_port: Optional[int] = None
    dst_mac: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "src_ip", ipaddress.IPv4Address(self.src_ip))
        object.__setattr__(self, "dst_ip", ipaddress.IPv4Address(self.dst_ip))
        if not 0 <= self.dstport <= 65535:
            raise ValueError(f"dstport {self.dstport} out of range")

    def __str__(self):
        return f"{self.src_host} {self.src_ip} -> {self.dst_ip}:{self.dstport}"


class Outcome(enum.Enum):
    DELIVERED = "delivered"
    DROPPED_NO_ROUTE = "dropped_no_route"
    DROPPED_BY_POLICY = "dropped_by_policy"
    DELIVERED_NO_LISTENER = "delivered_no_listener"


@dataclass(frozen=True)
class DeliveryResult:
    outcome: Outcome
    host: Optional[str] = None
    port: Optional[int] = None
    participant: Optional[str] = None
    provenance: Optional[str] = None

    @property
    def dropped(self):
        return self.outcome in (Outcome.DROPPED_NO_ROUTE, Outcome.DROPPED_BY_POLICY)

    def __str__(self):
        if self.outcome is Outcome.DELIVERED:
            return f"Delivered({self.host}, port {self.port})"
        if self.outcome is Outcome.DELIVERED_NO_LISTENER:
            return f"DeliveredNoListener({self.participant}, port {self.port})"
        if self.outcome is Outcome.DROPPED_BY_POLICY:
            return f"DroppedByPolicy({self.provenance})"
        return "DroppedNoRoute"

    def to_record(self):
        rec = {"outcome": self.outcome.value}
        for key in ("host", "port", "participant", "provenance"):
            if getattr(self, key) is not None:
                rec[key] = getattr(self, key)
        return rec


@dataclass(frozen=True)
class EdgeRow:
    prefix: ipaddress.IPv4Network
    gateway: object  # IPv4Address or DIRECT
    iface: str


@dataclass(frozen=True)
class EdgeRouterTable:
    owner: str
    rows: tuple

    def dump(self) -> str:
        lines = ["Kernel IP routing table",
                 f"{'Destination':<16} {'Gateway':<15} {'Genmask':<15} Flags Metric Ref    Use Iface"]
        for row in sorted(self.rows, key=lambda r: (int(r.prefix.network_address), r.prefix.prefixlen)):
            direct = row.gateway == DIRECT
            gw = "0.0.0.0" if direct else str(row.gateway)
            flags = "U" if direct else "UG"
            lines.append(f"{str(row.prefix.network_address):<16} {gw:<15} {str(row.prefix.netmask):<15} "
                         f"{flags:<5} {0:<6} {0:<6} {0:>3} {row.iface}")
        return "\n".join(lines) + "\n"

    def to_records(self):
        return [{"destination": str(r.prefix), "gateway": str(r.gateway), "iface": r.iface}
                for r in sorted(self.rows, key=lambda r: (int(r.prefix.network_address), r.prefix.prefixlen))]


def build_edge_tables(configs, ribs, vnh_table, fabric_subnet="172.0.0.0/16") -> dict:
    """One kernel-style routing table per host, gateways being VNH virtual IPs."""
    fabric_subnet = ipaddress.IPv4Network(fabric_subnet)
    gateway = {p: v.virtual_ip for v in vnh_table for p in v.prefixes}
    tables = {}
    for cfg in configs:
        rib = ribs[cfg.name]
        for host in cfg.hosts:
            iface = f"{host.name}-eth0"
            rows = []
            for prefix in rib.prefixes():
                if prefix not in gateway:
                    raise InconsistentState(f"{prefix} in RIB of {cfg.name} has no VNH")
                rows.append(EdgeRow(prefix, gateway[prefix], iface))
            rows.append(EdgeRow(fabric_subnet, DIRECT, iface))
            tables[host.name] = EdgeRouterTable(host.name, tuple(rows))
    return tables


def lpm_lookup(table: EdgeRouterTable, dst_ip):
    """Gateway of the longest matching row, DIRECT, or NO_ROUTE."""
    row = _lpm_row(table, dst_ip)
    return NO_ROUTE if row is None else row.gateway


def _lpm_row(table, dst_ip):
    dst_ip = ipaddress.IPv4Address(dst_ip)
    best = None
    for row in table.rows:
        if dst_ip in row.prefix and (best is None or row.prefix.prefixlen > best.prefix.prefixlen):
            best = row
    return best


def evaluate_flow_table(table, probe):
    """Highest-priority matching rule; the global drop guarantees a hit."""
    for rule in table.rules:
        if rule.matches(probe):
            return rule
    raise InconsistentState("flow table has no matching rule (missing global default)")


@dataclass(frozen=True)
class FabricState:
    """Everything inject needs, fixed after compilation."""

    configs: tuple
    edge_tables: dict
    vnh_table: tuple
    flow_table: object

    def host(self, name):
        for cfg in self.configs:
            for h in cfg.hosts:
                if h.name == name:
                    return cfg, h
        raise KeyError(name)

    def mac_for(self, virtual_ip):
        for vnh in self.vnh_table:
            if vnh.virtual_ip == virtual_ip:
                return vnh.virtual_mac
        raise InconsistentState(f"gateway {virtual_ip} is not a VNH")


def _deliver(configs, port, dst_ip) -> DeliveryResult:
    for cfg in configs:
        if port not in cfg.phys_ports:
            continue
        for h in cfg.hosts:
            if h.port == port and dst_ip in h.addresses:
                return DeliveryResult(Outcome.DELIVERED, host=h.name, port=port)
        return DeliveryResult(Outcome.DELIVERED_NO_LISTENER, participant=cfg.name, port=port)
    raise InconsistentState(f"output port {port} belongs to no participant")


def inject(state: FabricState, probe: PacketProbe) -> DeliveryResult:
    """Run a probe through its edge router and the compiled flow table."""
    _, host = state.host(probe.src_host)
    gateway = lpm_lookup(state.edge_tables[probe.src_host], probe.dst_ip)
    if gateway in (NO_ROUTE, DIRECT):
        # no host on the interconnect subnet listens, so DIRECT is unroutable too
        return DeliveryResult(Outcome.DROPPED_NO_ROUTE)
    probe = replace(probe, in_port=host.port, dst_mac=state.mac_for(gateway))
    rule = evaluate_flow_table(state.flow_table, probe)
    if not isinstance(rule.action, Output):
        return DeliveryResult(Outcome.DROPPED_BY_POLICY, provenance=rule.provenance)
    return _deliver(state.configs, rule.action.port, probe.dst_ip)


# -- oracle ------------------------------------------------------------------

@dataclass(frozen=True)
class Egress:
    participant: str
    port_index: int


@dataclass(frozen=True)
class PolicyDrop:
    provenance: str


class _NoRoute:
    def __repr__(self):
        return "NO_ROUTE"


ORACLE_NO_ROUTE = _NoRoute()


def forward_decision(configs, ribs, policies, ingress, probe):
    """Where the uncompiled policies send ``probe`` entering from ``ingress``.

    Returns an Egress, a PolicyDrop or ORACLE_NO_ROUTE. Listener lookup is
    left to the caller.
    """
    prefix = rib_lookup(ribs[ingress], probe.dst_ip)
    if prefix is None:
        return ORACLE_NO_ROUTE
    own = policies.get(ingress)
    chosen = {}
    if own is not None and own.outbound is not None:
        for i, term in enumerate(terms(own.outbound)):
            if prefix not in reachable_prefixes(term, ribs[ingress]) or not term.applies_to(probe):
                continue
            chosen.setdefault(term.action, term_provenance(ingress, "outbound", i, term))
    if len(chosen) > 1:
        raise AmbiguousForward(ingress, set(chosen))
    if chosen:
        (action, prov), = chosen.items()
        if action.kind is ActionKind.DROP:
            return PolicyDrop(prov)
        egress = action.participant
    else:
        egress = ribs[ingress][prefix].best
    target = policies.get(egress)
    if target is None or target.inbound is None:
        return Egress(egress, 0)
    hits = {}
    for i, term in enumerate(terms(target.inbound)):
        if term.applies_to(probe):
            hits.setdefault(term.action, term_provenance(egress, "inbound", i, term))
    if len(hits) > 1:
        raise AmbiguousForward(egress, set(hits))
    if not hits:
        return PolicyDrop(DEFAULT_PROVENANCE)
    (action, prov), = hits.items()
    if action.kind is ActionKind.DROP:
        return PolicyDrop(prov)
    if action.kind is not ActionKind.FWD_PHYS_PORT:
        raise InconsistentState(f"inbound policy of {egress} forwards to a peer")
    return Egress(egress, action.port_index)


def oracle_forward(configs, ribs, policies, probe) -> DeliveryResult:
    """Interpret policies directly; must agree with inject on every probe."""
    configs = tuple(configs)
    ingress = None
    for cfg in configs:
        if any(h.name == probe.src_host for h in cfg.hosts):
            ingress = cfg.name
            break
    if ingress is None:
        raise KeyError(probe.src_host)
    decision = forward_decision(configs, ribs, policies, ingress, probe)
    if decision is ORACLE_NO_ROUTE:
        return DeliveryResult(Outcome.DROPPED_NO_ROUTE)
    if isinstance(decision, PolicyDrop):
        return DeliveryResult(Outcome.DROPPED_BY_POLICY, provenance=decision.provenance)
    cfg = next(c for c in configs if c.name == decision.participant)
    return _deliver(configs, cfg.phys_ports[decision.port_index], probe.dst_ip)
