import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import HealthCheck, settings

from nested_transport.geometry import GridSpec, SquaredDistanceCost, TargetSet, build_density

settings.register_profile(
    "nested_transport", max_examples=25, derandomize=True, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("nested_transport")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the table reproductions")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-resolution reproductions, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _no_run_log(monkeypatch, tmp_path):
    monkeypatch.setenv("NESTED_TRANSPORT_LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def grid64():
    return GridSpec(resolution=64)


@pytest.fixture
def grid128():
    return GridSpec(resolution=128)


@pytest.fixture
def uniform64(grid64):
    return build_density(grid64, "uniform")


@pytest.fixture
def product64(grid64):
    return build_density(grid64, "product_xy")


@pytest.fixture
def uniform128(grid128):
    return build_density(grid128, "uniform")


@pytest.fixture
def product128(grid128):
    return build_density(grid128, "product_xy")


@pytest.fixture
def sqdist():
    return SquaredDistanceCost()


@pytest.fixture
def e1_three():
    return TargetSet.from_family("E1", 3)


@pytest.fixture
def symmetric_pair():
    # Mirror images about the centre line x1 = 1/2.
    return TargetSet.explicit([0.0, 1.0], np.array([[0.25, 0.5], [0.75, 0.5]]))


@st.composite
def potentials(draw, n, scale=0.5):
    return np.array(draw(st.lists(
        st.floats(min_value=-scale, max_value=scale, allow_nan=False, allow_infinity=False),
        min_size=n, max_size=n,
    )))


@st.composite
def family_configs(draw, families=("E1", "E2", "E3"), n_values=(2, 3, 4, 6)):
    return draw(st.sampled_from(families)), draw(st.sampled_from(n_values))
