"""Desk-scale software-defined IXP: policy DSL, route server, VNHs, flow compiler, dataplane."""

from .compiler import FlowRule, FlowTable, compile_table, validate_policies
from .fabric import DeliveryResult, PacketProbe, inject, oracle_forward
from .harness import Scenario, check, load_scenario, reference_scenario_path, run
from .policy_lang import eval_policy, parse_policy, pretty_print
from .route_server import best_path, compute_ribs, parse_bgpd_conf
from .vnh import assign_vnhs, behavior_signature, compute_vnhs

__version__ = "0.1.0"
