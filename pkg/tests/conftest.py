import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest


@pytest.fixture(scope="session")
def base_transfers():
    """Sparse and low-rank transfer tables for rho = gamma = 0.05 at alpha = 0.4, n = 200."""
    from crpca import experiments
    from crpca.schemas import ExperimentConfig
    from crpca.seeding import derive_seed

    cfg = ExperimentConfig(kind="se-track", n1=200, n2=200, alpha=0.4, rho=0.05, gamma=0.05)
    grid = experiments.transfer_grid(cfg)
    varphi = experiments.build_varphi(cfg, 0.05, grid)
    phi = experiments.build_phi(cfg, 0.05, grid, derive_seed(0, 1))
    return grid, varphi, phi


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    def emit(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
