import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from livercut.diffusion import DiffusionParams, anisotropic_diffusion
from livercut.errors import ConfigError
from livercut.volume import Volume


def test_constant_fixed_point():
    v = Volume(np.full((5, 6, 7), 12.5))
    assert np.array_equal(anisotropic_diffusion(v, DiffusionParams(7, 0.1, 3.0)).data, v.data)


def test_zero_iterations_identity(rng):
    v = Volume(rng.standard_normal((4, 4, 4)), (1.0, 2.0, 3.0))
    out = anisotropic_diffusion(v, DiffusionParams(iterations=0))
    assert np.array_equal(out.data, v.data) and out.spacing == v.spacing


def _step(height):
    data = np.zeros((6, 6, 12))
    data[:, :, 6:] = height
    return Volume(data)


def test_edge_preservation():
    k = 30.0
    p = DiffusionParams(10, 1.0 / 6.0, k)
    strong = anisotropic_diffusion(_step(10 * k), p).data
    assert abs(strong[0, 0, 5] - 0.0) < 0.01 * 10 * k
    assert abs(strong[0, 0, 6] - 10 * k) < 0.01 * 10 * k
    weak_h = 0.1 * k
    weak = anisotropic_diffusion(_step(weak_h), p).data
    assert weak[0, 0, 5] > 0.1 * weak_h
    assert weak_h - weak[0, 0, 6] > 0.1 * weak_h


def test_param_validation():
    with pytest.raises(ConfigError):
        DiffusionParams(time_step=0.2)
    with pytest.raises(ConfigError):
        DiffusionParams(iterations=-1)
    with pytest.raises(ConfigError):
        DiffusionParams(conductance=0)


@given(hnp.arrays(np.float64, (5, 4, 6), elements=st.floats(-128, 128)),
       st.integers(1, 6), st.floats(0.01, 1 / 6), st.floats(0.5, 100))
def test_max_principle_and_conservation(data, it, dt, k):
    out = anisotropic_diffusion(Volume(data), DiffusionParams(it, dt, k)).data
    assert out.min() >= data.min() - 1e-9
    assert out.max() <= data.max() + 1e-9
    total = np.abs(data).sum() + 1.0
    assert abs(out.sum() - data.sum()) <= 1e-6 * total


def test_deterministic(rng):
    v = Volume(rng.standard_normal((8, 8, 8)) * 50)
    a = anisotropic_diffusion(v).data
    b = anisotropic_diffusion(v).data
    assert a.tobytes() == b.tobytes()
