import pytest

from sdxsim import harness
from sdxsim.policy_lang import parse_policy

A_OUTBOUND = """final_policy = ((match(dstport=80) >> sdx.fwd(participant.peers['B'])) +
                (match(dstport=443) >> sdx.fwd(participant.peers['C'])) +
                (match(dstport=8080) >> sdx.fwd(participant.peers['C'])))"""

C_INBOUND = """final_policy = ((match(dstport=443) >> sdx.fwd(participant.phys_ports[0])) +
                (match(dstport=80) >> sdx.fwd(participant.phys_ports[1])))"""

A_BGPD = """router bgp 100
  bgp router-id 172.0.0.1
  neighbor 172.0.255.254 remote-as 65000
  network 100.0.0.0/24
  network 110.0.0.0/24
  redistribute static
"""


@pytest.fixture(scope="session")
def reference():
    return harness.load_scenario(harness.reference_scenario_path())


@pytest.fixture(scope="session")
def compiled(reference):
    return harness.build(reference)


@pytest.fixture
def a_outbound_ast():
    return parse_policy(A_OUTBOUND, {"B", "C"})


@pytest.fixture
def c_inbound_ast():
    return parse_policy(C_INBOUND, {"A", "B"})


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
