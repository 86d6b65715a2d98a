"""Compile participant policies, BGP reachability and VNHs into one flat flow table.

Rules are emitted in priority bands:

    30  outbound steering   (in_port, dst_mac=VNH, dport) per outbound term
    20  inbound selection   (dst_mac=VNH, dport) for default-routed traffic
    10  default BGP         (dst_mac=VNH) when the best path has no inbound policy
     0  global drop

Outbound rules towards a participant that has an inbound policy take that
participant's port choice directly, so the table stays single-stage.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Optional

from .errors import CompileError, InconsistentState
from .policy_lang import ActionKind, port_literals, terms
from .route_server import announcements, best_path

BAND_OUTBOUND = 30
BAND_INBOUND = 20
BAND_BGP = 10
BAND_DEFAULT = 0

DEFAULT_PROVENANCE = "default"


@dataclass(frozen=True)
class Output:
    port: int

    def __str__(self):
        return f"output:{self.port}"


@dataclass(frozen=True)
class Drop:
    def __str__(self):
        return "drop"


DROP = Drop()


@dataclass(frozen=True)
class FlowRule:
    priority: int
    action: object
    provenance: str
    in_port: Optional[int] = None
    dst_mac: Optional[str] = None
    dst_prefix: Optional[ipaddress.IPv4Network] = None
    dstport: Optional[int] = None

    @property
    def is_default(self):
        return (self.in_port is None and self.dst_mac is None
                and self.dst_prefix is None and self.dstport is None)

    def matches(self, probe) -> bool:
        if self.in_port is not None and probe.in_port != self.in_port:
            return False
        if self.dst_mac is not None and probe.dst_mac != self.dst_mac:
            return False
        if self.dst_prefix is not None and ipaddress.IPv4Address(probe.dst_ip) not in self.dst_prefix:
            return False
        if self.dstport is not None and probe.dstport != self.dstport:
            return False
        return True

    def dump(self) -> str:
        def show(v):
            return "*" if v is None else str(v)

        return (f"prio={self.priority} in_port={show(self.in_port)} dst_mac={show(self.dst_mac)} "
                f"dst={show(self.dst_prefix)} dport={show(self.dstport)} -> {self.action} "
                f"# {self.provenance}")

    def to_record(self) -> dict:
        return {
            "priority": self.priority,
            "in_port": self.in_port,
            "dst_mac": self.dst_mac,
            "dst": None if self.dst_prefix is None else str(self.dst_prefix),
            "dport": self.dstport,
            "action": str(self.action),
            "provenance": self.provenance,
        }


class FlowTable:
    """Rules ordered by priority (descending), then insertion order."""

    def __init__(self, rules):
        self.rules = tuple(sorted(rules, key=lambda r: -r.priority))
        defaults = [r for r in self.rules if r.is_default]
        if len(defaults) != 1 or defaults[0].priority != BAND_DEFAULT or defaults[0].action != DROP:
            raise InconsistentState("flow table needs exactly one global drop at priority 0")

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def non_default(self):
        return [r for r in self.rules if not r.is_default]

    def dump(self) -> str:
        return "".join(r.dump() + "\n" for r in self.rules)

    def to_records(self):
        return [r.to_record() for r in self.rules]


@dataclass(frozen=True)
class Violation:
    kind: str
    participant: str
    detail: str

    def __str__(self):
        return f"{self.kind}({self.participant}): {self.detail}"


def term_provenance(owner, direction, index, term) -> str:
    tag = f"{owner}:{direction}[{index}]"
    if term.span is not None:
        tag += f"@{term.span[0]}-{term.span[1]}"
    return tag


def reachable_prefixes(term, rib) -> frozenset:
    """Prefixes of ``rib`` an outbound term may steer.

    A forward applies only to prefixes its egress participant announced; a
    drop applies to the whole RIB.
    """
    if term.action.kind is ActionKind.FWD_PARTICIPANT:
        egress = term.action.participant
        return frozenset(p for p, e in rib.entries.items() if egress in e.candidates)
    if term.action.kind is ActionKind.DROP:
        return frozenset(rib.entries)
    return frozenset()


def augment_with_reachability(policy, owner, ribs):
    """Restrict each outbound term to the prefixes its egress participant announces.

    Returns ``(matches, egress, prefixes)`` triples; ``egress`` is None for a
    drop term. Terms left with no prefixes are omitted.
    """
    out = []
    for term in terms(policy):
        prefixes = reachable_prefixes(term, ribs[owner])
        if prefixes:
            out.append((term.matches, term.action.participant, prefixes))
    return out


def _ports_compatible(a, b):
    return a is None or b is None or a == b


def validate_policies(configs, policies, ribs) -> list:
    """Report policy problems as data; an empty list means the scenario compiles."""
    by_name = {c.name: c for c in configs}
    found = []
    for owner in sorted(policies):
        pol = policies[owner]
        if owner not in by_name:
            found.append(Violation("UnknownParticipant", owner, "policy for undefined participant"))
            continue
        for direction, ast in (("outbound", pol.outbound), ("inbound", pol.inbound)):
            for i, term in enumerate(terms(ast)):
                bad = sorted({m.field for m in term.matches if m.field != "dstport"})
                if bad:
                    found.append(Violation("UnsupportedMatchField", owner,
                                           f"{direction} term {i} matches on {', '.join(bad)}"))
                kind = term.action.kind
                if direction == "outbound" and kind is ActionKind.FWD_PHYS_PORT:
                    found.append(Violation("OutboundPhysPort", owner,
                                           f"outbound term {i} forwards to a physical port"))
                if direction == "inbound" and kind is ActionKind.FWD_PARTICIPANT:
                    found.append(Violation("InboundPeerFwd", owner,
                                           f"inbound term {i} forwards to a peer"))
                if (direction == "inbound" and kind is ActionKind.FWD_PHYS_PORT
                        and term.action.port_index >= len(by_name[owner].phys_ports)):
                    found.append(Violation(
                        "InboundPortOutOfRange", owner,
                        f"phys_ports[{term.action.port_index}] but only "
                        f"{len(by_name[owner].phys_ports)} port(s)"))
                if kind is ActionKind.FWD_PARTICIPANT:
                    peer = term.action.participant
                    if peer not in by_name or peer == owner:
                        found.append(Violation("UnknownPeer", owner,
                                               f"{direction} term {i} forwards to {peer!r}"))
        found.extend(_overlaps(owner, pol, ribs))
    return found


def _overlaps(owner, pol, ribs):
    found = []
    out_terms = [t for t in terms(pol.outbound) if t.satisfiable()]
    rib = ribs.get(owner)
    reach = {id(t): reachable_prefixes(t, rib) if rib is not None else frozenset()
             for t in out_terms}
    for i, a in enumerate(out_terms):
        for b in out_terms[i + 1:]:
            if a.action == b.action:
                continue
            if not _ports_compatible(a.port_constraint(), b.port_constraint()):
                continue
            shared = reach[id(a)] & reach[id(b)]
            if shared:
                found.append(Violation(
                    "OverlapAmbiguity", owner,
                    f"outbound '{a.action}' and '{b.action}' both apply to "
                    f"{', '.join(sorted(map(str, shared)))}"))
    in_terms = [t for t in terms(pol.inbound) if t.satisfiable()]
    for i, a in enumerate(in_terms):
        for b in in_terms[i + 1:]:
            if a.action != b.action and _ports_compatible(a.port_constraint(), b.port_constraint()):
                found.append(Violation("OverlapAmbiguity", owner,
                                       f"inbound '{a.action}' and '{b.action}' overlap"))
    return found


def inbound_choice(owner, inbound, dstport):
    """First inbound term matching ``dstport`` as ``(index, term)``, or None.

    ``dstport=None`` stands for any port that no inbound term names.
    """
    for i, term in enumerate(terms(inbound)):
        if not term.satisfiable():
            continue
        want = term.port_constraint()
        if want is None or want == dstport:
            return i, term
    return None


def _inbound_rule_action(cfg, owner, inbound, dstport):
    """(action, provenance) for traffic handed to ``owner`` on ``dstport``; None on no match."""
    hit = inbound_choice(owner, inbound, dstport)
    if hit is None:
        return None
    i, term = hit
    prov = term_provenance(owner, "inbound", i, term)
    if term.action.kind is ActionKind.DROP:
        return DROP, prov
    return Output(cfg.phys_ports[term.action.port_index]), prov


def vnh_best_paths(configs, vnh_table) -> dict:
    """Best-path participant for each VNH label.

    Every prefix in one VNH must share an announcer set; otherwise the
    grouping is not a forwarding-equivalence class and we refuse to compile.
    """
    anns = announcements(configs)
    best = {}
    for vnh in vnh_table:
        origin_sets = {frozenset(a.origin for a in anns.get(p, ())) for p in vnh.prefixes}
        if len(origin_sets) != 1 or not next(iter(origin_sets)):
            raise InconsistentState(f"VNH{vnh.label} mixes prefixes with different announcers")
        rep = min(vnh.prefixes, key=lambda n: (int(n.network_address), n.prefixlen))
        best[vnh.label] = best_path(rep, anns[rep]).origin
    return best


def compile_table(configs, policies, ribs, vnh_table) -> FlowTable:
    violations = validate_policies(configs, policies, ribs)
    if violations:
        raise CompileError(violations)
    by_name = {c.name: c for c in configs}
    best = vnh_best_paths(configs, vnh_table)
    for rib in ribs.values():
        covered = set().union(*(v.prefixes for v in vnh_table)) if vnh_table else set()
        missing = set(rib.entries) - covered
        if missing:
            raise InconsistentState(f"RIB prefixes without a VNH: {sorted(map(str, missing))}")

    def inbound_of(name):
        pol = policies.get(name)
        return None if pol is None else pol.inbound

    def falls_to_drop(vnh, dstport):
        # what bands 20/10/0 would do with a packet no steering rule catches
        egress = best[vnh.label]
        inbound = inbound_of(egress)
        return inbound is not None and inbound_choice(egress, inbound, dstport) is None

    rules = []
    for cfg in configs:
        pol = policies.get(cfg.name)
        if pol is None or pol.outbound is None:
            continue
        rib = ribs[cfg.name]
        for i, term in enumerate(terms(pol.outbound)):
            if not term.satisfiable():
                continue
            dport = term.port_constraint()
            prov = term_provenance(cfg.name, "outbound", i, term)
            egress = term.action.participant
            reach = reachable_prefixes(term, rib)
            for vnh in vnh_table:
                if not vnh.prefixes & reach:
                    continue
                if egress is None:
                    plan = [(dport, DROP, prov)]
                elif inbound_of(egress) is None:
                    plan = [(dport, Output(by_name[egress].phys_ports[0]), prov)]
                else:
                    inbound = inbound_of(egress)
                    split = [dport] if dport is not None else port_literals([inbound]) + [None]
                    plan = []
                    for q in split:
                        chosen = _inbound_rule_action(by_name[egress], egress, inbound, q)
                        if chosen is None:
                            if q is not None and falls_to_drop(vnh, q):
                                continue
                            chosen = (DROP, DEFAULT_PROVENANCE)
                        action, why = chosen
                        plan.append((q, action, prov if isinstance(action, Output) else why))
                for q, action, why in plan:
                    for port in cfg.phys_ports:
                        rules.append(FlowRule(BAND_OUTBOUND, action, why, in_port=port,
                                              dst_mac=vnh.virtual_mac, dstport=q))

    for cfg in configs:
        inbound = inbound_of(cfg.name)
        if inbound is None:
            continue
        for vnh in vnh_table:
            if best[vnh.label] != cfg.name:
                continue
            for i, term in enumerate(terms(inbound)):
                if not term.satisfiable():
                    continue
                prov = term_provenance(cfg.name, "inbound", i, term)
                if term.action.kind is ActionKind.DROP:
                    action = DROP
                else:
                    action = Output(cfg.phys_ports[term.action.port_index])
                rules.append(FlowRule(BAND_INBOUND, action, prov, dst_mac=vnh.virtual_mac,
                                      dstport=term.port_constraint()))

    for vnh in vnh_table:
        egress = best[vnh.label]
        if inbound_of(egress) is None:
            rules.append(FlowRule(BAND_BGP, Output(by_name[egress].phys_ports[0]), f"bgp:{egress}",
                                  dst_mac=vnh.virtual_mac))

    rules.append(FlowRule(BAND_DEFAULT, DROP, DEFAULT_PROVENANCE))
    return FlowTable(rules)


def rule_budget(configs, policies, vnh_table) -> int:
    """Upper bound on non-default rules for a compiled scenario.

    Per outbound term: one rule per owner port per VNH, times the number of
    inbound port classes when a wildcard term steers into an inbound policy.
    Per inbound term: one rule per VNH the owner is best path for. Plus one
    BGP rule per VNH.
    """
    best = vnh_best_paths(configs, vnh_table)
    nvnh = len(vnh_table)
    total = nvnh
    for cfg in configs:
        pol = policies.get(cfg.name)
        if pol is None:
            continue
        for term in terms(pol.outbound):
            splits = 1
            if term.action.kind is ActionKind.FWD_PARTICIPANT and term.satisfiable() \
                    and term.port_constraint() is None:
                target = policies.get(term.action.participant)
                if target is not None and target.inbound is not None:
                    splits = 1 + len(port_literals([target.inbound]))
            total += len(cfg.phys_ports) * splits * nvnh
        own = sum(1 for v in vnh_table if best[v.label] == cfg.name)
        total += len(terms(pol.inbound)) * own
    return total
