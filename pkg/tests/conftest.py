import numpy as np
import pytest

from noiseaware.design import build_design, compute_design_matrix
from noiseaware.noise import NoiseParameters, sample_lognormal_instance, tuned_depolarizing_instance
from noiseaware.surface import build_layout, characterization_circuit


@pytest.fixture(scope="session")
def layout3():
    return build_layout(3)


@pytest.fixture(scope="session")
def char3(layout3):
    return characterization_circuit(layout3)


@pytest.fixture(scope="session")
def truth3(char3):
    return sample_lognormal_instance(NoiseParameters(), char3, 0)


@pytest.fixture(scope="session")
def reference3(char3):
    return tuned_depolarizing_instance(NoiseParameters(), char3)


@pytest.fixture(scope="session")
def design3(char3, reference3):
    design = build_design(char3, reference_noise=reference3)
    return design, compute_design_matrix(design)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# One line per acceptance criterion, repeated in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
