import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mimosar import geometry as geo
from mimosar import wavesim as ws

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

C_NOMINAL = 3e8


@pytest.fixture
def nominal_chirp():
    # 40 us chirp sampled at 8 MHz: 320 samples, 3.5997 GHz swept, centred at 78.8 GHz
    return ws.ChirpConfig.from_center(78.8e9, 3.5997e9, 40e-6, 8e6, 320, c=C_NOMINAL)


@pytest.fixture
def short_chirp():
    return ws.ChirpConfig.from_center(78.8e9, 3.5997e9, 40e-6, 1.6e6, 64, c=C_NOMINAL)


@pytest.fixture
def one_element():
    return [geo.make_element(0, 0, 0, (0.0, 0.0), (0.0, 0.0))]


@pytest.fixture
def single_scan():
    return geo.scan_positions(1, 1e-3)


@pytest.fixture
def small_array():
    """Two transmitters and eight receivers on the y axis (16 bistatic pairs)."""
    d = 1.9e-3
    layout = geo.AntennaLayout(((0.0, 0.0), (0.0, 4 * d)), tuple((0.0, i * d / 2) for i in range(8)))
    return geo.virtual_elements(layout)


@pytest.fixture
def tidep_elements(nominal_chirp):
    els = geo.virtual_elements(geo.builtin_layout("tidep-01012"))
    return geo.dedupe_elements(els, nominal_chirp.wavelength / 100, axis="y")



def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
