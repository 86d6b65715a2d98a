"""Random scenario and policy-AST generators shared by the property tests."""

import ipaddress
import random

from sdxsim.compiler import validate_policies
from sdxsim.errors import ScenarioValidationError
from sdxsim.harness import scenario_from_dict
from sdxsim.policy_lang import MatchPredicate, Parallel, PolicyAction, Term
from sdxsim.route_server import compute_ribs

PORTS = (80, 443, 8080)


def _out_term(rng, owner, names):
    dport = rng.choice(PORTS + (None,)) if rng.random() < 0.9 else None
    match = "" if dport is None else f"match(dstport={dport}) >> "
    if rng.random() < 0.15:
        return match + "drop"
    peer = rng.choice([n for n in names if n != owner])
    return match + f"sdx.fwd(participant.peers['{peer}'])"


def _in_term(rng, nports):
    dport = rng.choice(PORTS + (None,)) if rng.random() < 0.9 else None
    match = "" if dport is None else f"match(dstport={dport}) >> "
    if rng.random() < 0.15:
        return match + "drop"
    return match + f"sdx.fwd(participant.phys_ports[{rng.randrange(nports)}])"


def random_scenario_doc(rng):
    n = rng.randint(2, 4)
    names = [chr(ord("A") + i) for i in range(n)]
    nprefix = rng.randint(2, 8)
    prefixes = [f"{10 + i}.{rng.randrange(256)}.0.0/24" for i in range(nprefix)]
    rids = rng.sample(range(1, 1 << 32), n)
    announced = {name: [] for name in names}
    for p in prefixes:
        for who in rng.sample(names, rng.randint(1, n)):
            announced[who].append(p)

    next_port = 1
    participants = []
    for i, name in enumerate(names):
        nports = rng.randint(1, 2)
        ports = list(range(next_port, next_port + nports))
        next_port += nports
        addrs = [str(ipaddress.IPv4Network(p).network_address + 1) for p in announced[name]]
        addrs = addrs or [f"192.168.{i}.1"]
        hosts = [{"name": f"{name.lower()}{k + 1}", "port": port, "addresses": addrs}
                 for k, port in enumerate(ports)]
        participants.append({
            "name": name, "asn": 100 * (i + 1), "router_id": str(ipaddress.IPv4Address(rids[i])),
            "phys_ports": ports, "announced": announced[name], "hosts": hosts,
        })

    policies = {}
    for p in participants:
        entry = {}
        k = rng.randint(0, 3)
        if k:
            entry["outbound"] = " + ".join(_out_term(rng, p["name"], names) for _ in range(k))
        k = rng.randint(0, 3)
        if k and rng.random() < 0.6:
            entry["inbound"] = " + ".join(_in_term(rng, len(p["phys_ports"])) for _ in range(k))
        if entry:
            policies[p["name"]] = entry
    return {"name": "random", "participants": participants, "policies": policies, "traffic_tests": []}


def random_valid_scenario(rng, attempts=500):
    """Draw until the policies compile (no overlap / range violations)."""
    for _ in range(attempts):
        doc = random_scenario_doc(rng)
        try:
            scenario = scenario_from_dict(doc)
        except ScenarioValidationError:
            continue
        ribs = compute_ribs(scenario.participants)
        if not validate_policies(scenario.participants, scenario.policies, ribs):
            return scenario
    raise RuntimeError("could not draw a valid scenario")


def random_term(rng, peers):
    matches = []
    for _ in range(rng.randint(0, 3)):
        field = rng.choice(("dstport", "srcport", "dstip", "srcip"))
        if field.endswith("port"):
            matches.append(MatchPredicate(field, rng.randint(0, 65535)))
        else:
            plen = rng.randint(0, 32)
            addr = ipaddress.IPv4Address(rng.getrandbits(32))
            matches.append(MatchPredicate(field, ipaddress.IPv4Network(f"{addr}/{plen}", strict=False)))
    roll = rng.random()
    if roll < 0.45:
        action = PolicyAction.fwd_participant(rng.choice(peers))
    elif roll < 0.9:
        action = PolicyAction.fwd_phys_port(rng.randint(0, 7))
    else:
        action = PolicyAction.drop()
    return Term(tuple(matches), action)


def random_ast(rng, peers=("A", "B", "C", "D")):
    n = rng.randint(1, 4)
    items = [random_term(rng, peers) for _ in range(n)]
    return items[0] if n == 1 else Parallel(tuple(items))
