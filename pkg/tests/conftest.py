import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scatterkit.mstar import PROTOCOL

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record(criterion: str, status: str, detail: str = ""):
    ACCEPTANCE[criterion] = (status, detail)
    print(f"ACCEPTANCE {criterion}: {status} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        status, detail = ACCEPTANCE[crit]
        terminalreporter.write_line(f"[{status}] criterion {crit}  {detail}".rstrip())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fake_mstar(root: Path) -> Path:
    """A complete protocol tree with one empty file per chip."""
    lines = ["relative_path,class,serial,depression_deg,azimuth_deg"]
    for _, cls, serial, dep, count in PROTOCOL:
        d = root / cls / serial / str(dep)
        if d.exists():
            continue
        d.mkdir(parents=True)
        for i in range(count):
            rel = f"{cls}/{serial}/{dep}/chip{i:04d}.raw"
            (root / rel).touch()
            lines.append(f"{rel},{cls},{serial},{dep + 0.01 * (i % 5):.2f},{(i * 1.3) % 360:.2f}")
    (root / "manifest.csv").write_text("\n".join(lines) + "\n")
    return root
