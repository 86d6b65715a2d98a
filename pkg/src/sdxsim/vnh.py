"""Group prefixes into forwarding-equivalence classes and give each a Virtual Next Hop."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass

from .errors import PoolExhausted
from .fabric import ORACLE_NO_ROUTE, PacketProbe, forward_decision
from .policy_lang import port_literals

OTHER = "OTHER"


def parse_mac(text) -> int:
    parts = text.split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise ValueError(f"bad MAC address {text!r}")
    return int("".join(parts), 16)


def format_mac(value: int) -> str:
    if not 0 <= value < 1 << 48:
        raise ValueError("MAC out of range")
    raw = f"{value:012x}"
    return ":".join(raw[i:i + 2] for i in range(0, 12, 2))


@dataclass(frozen=True)
class VnhPool:
    """Virtual next-hop address space; host .0 of ``ip_base`` is never handed out."""

    ip_base: ipaddress.IPv4Network
    mac_base: int

    def __post_init__(self):
        object.__setattr__(self, "ip_base", ipaddress.IPv4Network(self.ip_base))
        if isinstance(self.mac_base, str):
            object.__setattr__(self, "mac_base", parse_mac(self.mac_base))

    @property
    def capacity(self):
        return self.ip_base.num_addresses - 1


DEFAULT_POOL = VnhPool("172.0.1.0/28", "aa:00:00:00:00:00")


@dataclass(frozen=True)
class VirtualNextHop:
    label: int
    prefixes: frozenset
    virtual_ip: ipaddress.IPv4Address
    virtual_mac: str

    @property
    def name(self):
        return f"VNH{self.label}"

    def sorted_prefixes(self):
        return sorted(self.prefixes, key=_prefix_key)


def _prefix_key(net):
    return (int(net.network_address), net.prefixlen)


def port_classes(policies) -> list:
    """Every dstport literal in any policy, then OTHER."""
    asts = []
    for pol in policies.values():
        asts.extend([pol.outbound, pol.inbound])
    return port_literals(asts) + [OTHER]


def other_port(literals) -> int:
    """A concrete port standing in for OTHER (22 unless a policy names it)."""
    port = 22
    while port in literals:
        port += 1
    return port


def representative_address(prefix):
    """Network address + 1, e.g. 140.0.0.1 for 140.0.0.0/24."""
    prefix = ipaddress.IPv4Network(prefix)
    if prefix.num_addresses == 1:
        return prefix.network_address
    return prefix.network_address + 1


def behavior_signature(prefix, configs, ribs, policies) -> tuple:
    """Oracle outcome for every (ingress participant, dstport class) into ``prefix``.

    Returned as a sorted tuple of ``((ingress, port_class), outcome)`` pairs,
    so equal behaviour means equal tuples.
    """
    classes = port_classes(policies)
    literals = [c for c in classes if c != OTHER]
    dst = representative_address(prefix)
    sig = []
    for cfg in sorted(configs, key=lambda c: c.name):
        for cls in classes:
            port = other_port(literals) if cls == OTHER else cls
            probe = PacketProbe(src_host="", src_ip="0.0.0.0", dst_ip=dst, dstport=port)
            decision = forward_decision(configs, ribs, policies, cfg.name, probe)
            if decision is ORACLE_NO_ROUTE:
                decision = "NO_ROUTE"
            # OTHER sorts after every literal
            key = (cfg.name, (1, 0) if cls == OTHER else (0, cls))
            sig.append((key, decision))
    return tuple(sig)


def assign_vnhs(signatures, pool: VnhPool = DEFAULT_POOL) -> list:
    """Group prefixes by signature and number the groups by smallest member."""
    groups = {}
    for prefix, sig in signatures.items():
        groups.setdefault(sig, []).append(ipaddress.IPv4Network(prefix))
    ordered = sorted((sorted(members, key=_prefix_key) for members in groups.values()),
                     key=lambda members: _prefix_key(members[0]))
    if len(ordered) > pool.capacity:
        raise PoolExhausted(len(ordered), pool.capacity)
    vnhs = []
    for label, members in enumerate(ordered, start=1):
        vnhs.append(VirtualNextHop(
            label=label,
            prefixes=frozenset(members),
            virtual_ip=pool.ip_base.network_address + label,
            virtual_mac=format_mac(pool.mac_base + label),
        ))
    return vnhs


def compute_vnhs(configs, ribs, policies, pool: VnhPool = DEFAULT_POOL) -> list:
    prefixes = {p for cfg in configs for p in cfg.announced}
    sigs = {p: behavior_signature(p, configs, ribs, policies) for p in prefixes}
    return assign_vnhs(sigs, pool)


def format_vnh_table(vnhs) -> str:
    lines = ["Virtual Next Hop --> IP Prefix / Next Hop IP / Next Hop MAC"]
    for v in vnhs:
        prefixes = ", ".join(str(p) for p in v.sorted_prefixes())
        lines.append(f"{v.name:<6} {{{prefixes}}}  {v.virtual_ip}  {v.virtual_mac}")
    return "\n".join(lines) + "\n"


def vnhs_to_records(vnhs) -> list:
    return [{"label": v.name, "prefixes": [str(p) for p in v.sorted_prefixes()],
             "virtual_ip": str(v.virtual_ip), "virtual_mac": v.virtual_mac} for v in vnhs]
