import pytest

from ballrigidity import build_chart, build_quadrature
from ballrigidity.gauge import build_gauge_basis


@pytest.fixture(scope="session")
def disk():
    spec = build_chart(2, 0.9)
    return spec, build_quadrature(spec)


@pytest.fixture(scope="session")
def ball():
    spec = build_chart(3, 0.85)
    return spec, build_quadrature(spec)


@pytest.fixture(scope="session")
def disk_basis(disk):
    spec, rule = disk
    return build_gauge_basis(spec, 4, rule)


@pytest.fixture(scope="session")
def disk_basis3(disk):
    spec, rule = disk
    return build_gauge_basis(spec, 3, rule)
