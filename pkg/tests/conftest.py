import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from rdlpf.datagen import gen_history  # noqa: E402
from rdlpf.netmodel import load_case, parse_case  # noqa: E402

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

TWO_BUS = """
function mpc = twobus
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0  0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 20 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 300 -300 1 100 1 250 10;
];
mpc.branch = [
  1 2 0 0.1 0 250 250 250 0 0 1 -360 360;
];
"""


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case118():
    return load_case("case118")


@pytest.fixture(scope="session")
def two_bus():
    return parse_case(TWO_BUS, name="twobus")


@pytest.fixture(scope="session")
def hist14(case14):
    return gen_history(case14, 120, 0.2, seed=7)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for mod in list(sys.modules.values()):
        lines.extend(getattr(mod, "ACCEPTANCE_VERDICTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
