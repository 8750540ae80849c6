import numpy as np
import pytest
from hypothesis import settings

from sensorfill.field_data import Basis, FieldConfig, gen_synthetic, reference_field_config

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}")


@pytest.fixture(scope="session")
def small_field():
    """Six sensors, noiseless, three temporal components."""
    hour = 3600.0
    return FieldConfig(
        sensors=6, samples=240,
        positions=((0.1, 0.1), (0.9, 0.2), (0.5, 0.5), (0.2, 0.8), (0.8, 0.9), (0.4, 0.3)),
        noise_sd=0.0, seed=3, period=24 * hour, base=12.0, diurnal_amplitude=6.0,
        basis=(Basis((0.2, 0.2), 5.0, 0.4, 7 * hour, 0.5),
               Basis((0.8, 0.8), 4.0, 0.5, 17 * hour, 2.0)),
        dt=600.0,
    )


@pytest.fixture(scope="session")
def small_dataset(small_field):
    return gen_synthetic(small_field)


@pytest.fixture(scope="session")
def reference_dataset():
    return gen_synthetic(reference_field_config())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
