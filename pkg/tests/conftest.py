"""Shared fixtures: materials and boundary grids reused across test modules."""

from __future__ import annotations

import math

import pytest

from phonogap import bie
from phonogap.materials import LameMaterial

PI2 = (math.pi, math.pi)


@pytest.fixture(scope="session")
def unit_material() -> LameMaterial:
    return LameMaterial(1.0, 1.0)


@pytest.fixture(scope="session")
def skew_material() -> LameMaterial:
    return LameMaterial(1.3, 0.9)


@pytest.fixture(scope="session")
def circle128() -> bie.BoundaryDiscretization:
    return bie.discretize_boundary(bie.circle(0.25), 128)


@pytest.fixture(scope="session")
def ellipse128() -> bie.BoundaryDiscretization:
    return bie.discretize_boundary(bie.ellipse(0.3, 0.2, angle=0.3), 128)


@pytest.fixture(scope="session")
def unit_sphere() -> bie.BoundaryDiscretization:
    return bie.discretize_boundary(bie.Sphere(1.0, (0.0, 0.0, 0.0)), bie.sphere_node_count(bie.DEFAULT_SPHERE_ORDER), cell_check=False)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
