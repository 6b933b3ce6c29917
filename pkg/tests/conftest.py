import pytest

from leosim.engine import Simulator
from leosim.harness.runner import RunResult
from leosim.harness.scenario import loads_scenario

# One sender, one INT switch, one receiver. Callers fill in the bottleneck
# and the flow list.
DUMBBELL = """
schema_version: 1
name: {name}
duration: {duration}
sample_interval: 100ms
nodes:
  - {{id: h1}}
  - {{id: s1, kind: switch, switch_id: 7}}
  - {{id: r1}}
links:
  - {{id: access, a: h1, b: s1, delay: 0ms}}
  - {{id: bottleneck, a: s1, b: r1, bw: {bw}, delay: {delay}, buffer: {buffer}, loss: {loss}}}
paths:
  main: [h1, s1, r1]
flows:
{flows}
"""


def dumbbell(name="t", duration="3s", bw="100Mbps", delay="10ms", buffer="1xBDP(main)",
             loss=0, flows=None, extra=""):
    flows = flows or ["{id: f1, protocol: leotcp, path: main}"]
    text = DUMBBELL.format(name=name, duration=duration, bw=bw, delay=delay, buffer=buffer,
                           loss=loss, flows="\n".join(f"  - {f}" for f in flows))
    return loads_scenario(text + extra)


def run(sc, seed=1):
    return RunResult(sc, seed).run()


@pytest.fixture
def sim():
    return Simulator()


# acceptance verdicts, printed together at the end of the session
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
