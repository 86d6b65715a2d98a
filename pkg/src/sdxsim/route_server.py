"""BGP-lite route server: config ingestion, best-path selection, per-participant RIBs."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import (BgpdSyntaxError, DuplicateParticipant, DuplicateRouterId,
                     EmptyCandidates, MissingRouterId)


@dataclass(frozen=True)
class HostBinding:
    name: str
    port: int
    addresses: tuple

    def __post_init__(self):
        object.__setattr__(self, "addresses",
                           tuple(ipaddress.IPv4Address(a) for a in self.addresses))


@dataclass(frozen=True)
class ParticipantConfig:
    name: str
    asn: int
    router_id: ipaddress.IPv4Address
    phys_ports: tuple
    announced: tuple = ()
    hosts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "router_id", ipaddress.IPv4Address(self.router_id))
        object.__setattr__(self, "phys_ports", tuple(self.phys_ports))
        object.__setattr__(self, "announced",
                           tuple(ipaddress.IPv4Network(p) for p in self.announced))
        object.__setattr__(self, "hosts", tuple(self.hosts))


@dataclass(frozen=True)
class BgpdConfig:
    """The subset of a ParticipantConfig recoverable from bgpd.conf."""

    asn: int
    router_id: ipaddress.IPv4Address
    announced: tuple = ()


@dataclass(frozen=True)
class RouteAnnouncement:
    prefix: ipaddress.IPv4Network
    origin: str
    router_id: ipaddress.IPv4Address


@dataclass(frozen=True)
class RibEntry:
    best: str
    candidates: frozenset


@dataclass(frozen=True)
class Rib:
    owner: str
    entries: dict = field(default_factory=dict)

    def prefixes(self):
        return sorted(self.entries, key=_prefix_key)

    def __contains__(self, prefix):
        return prefix in self.entries

    def __getitem__(self, prefix):
        return self.entries[prefix]

    def __len__(self):
        return len(self.entries)


def _prefix_key(net):
    return (int(net.network_address), net.prefixlen)


# top-level Quagga statements tolerated outside the router block
_TOP_LEVEL_OK = ("hostname", "password", "enable", "log", "line", "access-list")


def parse_bgpd_conf(text: str) -> BgpdConfig:
    """Extract asn, router-id and ``network`` statements from a bgpd.conf fragment.

    Only the ``router bgp`` block is interpreted; ``neighbor`` and
    ``redistribute`` lines are accepted and ignored.
    """
    asn = None
    router_id = None
    announced = []
    in_block = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("!", "#")):
            continue
        words = line.split()
        if words[:2] == ["router", "bgp"]:
            if asn is not None:
                raise BgpdSyntaxError(lineno, "second 'router bgp' block")
            if len(words) != 3 or not words[2].isdigit():
                raise BgpdSyntaxError(lineno, "expected 'router bgp <asn>'")
            asn = int(words[2])
            in_block = True
            continue
        if not in_block:
            if words[0] in _TOP_LEVEL_OK:
                continue
            raise BgpdSyntaxError(lineno, f"unexpected statement {words[0]!r}")
        if words[:2] == ["bgp", "router-id"]:
            if len(words) != 3:
                raise BgpdSyntaxError(lineno, "expected 'bgp router-id <a.b.c.d>'")
            try:
                router_id = ipaddress.IPv4Address(words[2])
            except ValueError:
                raise BgpdSyntaxError(lineno, f"bad router-id {words[2]!r}") from None
        elif words[0] == "network":
            if len(words) != 2:
                raise BgpdSyntaxError(lineno, "expected 'network <prefix>'")
            try:
                announced.append(ipaddress.IPv4Network(words[1]))
            except ValueError:
                raise BgpdSyntaxError(lineno, f"bad prefix {words[1]!r}") from None
        elif words[0] in ("neighbor", "redistribute"):
            continue
        else:
            raise BgpdSyntaxError(lineno, f"unsupported statement {words[0]!r}")
    if asn is None:
        raise BgpdSyntaxError(0, "no 'router bgp' block")
    if router_id is None:
        raise MissingRouterId()
    return BgpdConfig(asn, router_id, tuple(announced))


def best_path(prefix, candidates: Iterable[RouteAnnouncement]) -> RouteAnnouncement:
    """Pick the announcement with the numerically smallest router-id."""
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidates(f"no candidates for {prefix}")
    for c in candidates:
        if c.prefix != prefix:
            raise ValueError(f"candidate for {c.prefix} offered for {prefix}")
    # router-ids are unique per scenario; the origin name only breaks malformed ties
    return min(candidates, key=lambda c: (int(c.router_id), c.origin))


def announcements(configs) -> dict:
    """Map each announced prefix to the set of RouteAnnouncements for it."""
    table = {}
    for cfg in configs:
        for prefix in cfg.announced:
            table.setdefault(prefix, set()).add(RouteAnnouncement(prefix, cfg.name, cfg.router_id))
    return table


def check_unique(configs):
    names = set()
    rids = set()
    for cfg in configs:
        if cfg.name in names:
            raise DuplicateParticipant(cfg.name)
        if cfg.router_id in rids:
            raise DuplicateRouterId(cfg.router_id)
        names.add(cfg.name)
        rids.add(cfg.router_id)


def compute_ribs(configs) -> dict:
    """Best paths for every participant, excluding prefixes it announces itself."""
    configs = list(configs)
    check_unique(configs)
    by_prefix = announcements(configs)
    best = {p: best_path(p, anns).origin for p, anns in by_prefix.items()}
    ribs = {}
    for cfg in configs:
        own = set(cfg.announced)
        entries = {}
        for prefix in sorted(by_prefix, key=_prefix_key):
            if prefix in own:
                continue
            origins = frozenset(a.origin for a in by_prefix[prefix])
            entries[prefix] = RibEntry(best[prefix], origins)
        ribs[cfg.name] = Rib(cfg.name, entries)
    return ribs


def rib_lookup(rib: Rib, address) -> Optional[ipaddress.IPv4Network]:
    """Longest RIB prefix containing ``address``, or None."""
    address = ipaddress.IPv4Address(address)
    hit = None
    for prefix in rib.entries:
        if address in prefix and (hit is None or prefix.prefixlen > hit.prefixlen):
            hit = prefix
    return hit


def format_ribs(ribs: dict) -> str:
    lines = []
    for owner in sorted(ribs):
        rib = ribs[owner]
        lines.append(f"RIB {owner} ({len(rib)} prefixes)")
        for prefix in rib.prefixes():
            entry = rib[prefix]
            cands = ",".join(sorted(entry.candidates))
            lines.append(f"  {str(prefix):<18} best={entry.best:<6} candidates={cands}")
    return "\n".join(lines) + "\n"


def ribs_to_records(ribs: dict) -> dict:
    return {
        owner: [
            {"prefix": str(p), "best": ribs[owner][p].best,
             "candidates": sorted(ribs[owner][p].candidates)}
            for p in ribs[owner].prefixes()
        ]
        for owner in sorted(ribs)
    }
