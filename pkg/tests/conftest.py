import numpy as np
import pytest

from hnrsim import fec, link, phy
from hnrsim.channel import ChannelSpec


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)) + np.max(np.abs(b)), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_spec():
    return phy.GridSpec(fft_size=16, guard_left=0, guard_right=0, num_symbols=6,
                        pilot_symbols=(1, 4))


@pytest.fixture(scope="session")
def toy_layout(toy_spec):
    return link.FrameLayout(toy_spec, phy.constellation("qpsk"), fec.build_regular_ldpc(128, 3, 6, 0))


@pytest.fixture(scope="session")
def toy_channel():
    return ChannelSpec(model="flat-rayleigh", speed_min=0, speed_max=0, num_rx=2)


# criterion number -> list of (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def report(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
