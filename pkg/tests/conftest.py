import numpy as np
import pytest

from glucodyn.cgm import GlucoseSeries


def make_series(subject_id="S", times=None, glucose=None, interval=5.0, **metadata):
    return GlucoseSeries(
        subject_id=subject_id,
        times=np.asarray(times, dtype=float),
        glucose=np.asarray(glucose, dtype=float),
        nominal_interval=interval,
        metadata=metadata or {},
    )


def grid_series(subject_id="S", days=2.0, interval=5.0, fn=None, constant=100.0):
    """Series on a regular grid spanning `days`, values from fn(t) or constant."""
    t = np.arange(0.0, days * 1440.0 + interval / 2, interval)
    g = np.full_like(t, constant) if fn is None else np.asarray(fn(t), dtype=float)
    return make_series(subject_id, t, g, interval)


@pytest.fixture
def constant_3day():
    return grid_series("const3", days=3.0, constant=100.0)


@pytest.fixture
def sinusoid_2day():
    omega = 2 * np.pi / 1440.0
    return grid_series("sin2", days=2.0, fn=lambda t: 120 + 30 * np.sin(omega * t))
