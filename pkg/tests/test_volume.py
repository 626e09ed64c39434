import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from livercut.errors import DataError
from livercut.volume import (
    LabelMask,
    PhantomSpec,
    ProbabilityMap,
    Volume,
    load_mask,
    load_volume,
    make_phantom,
    pad_crop_slices,
    resample,
    save_volume,
    window_normalize,
)


def test_volume_axes_and_invariants():
    v = Volume(np.zeros((4, 3, 2)), (0.5, 1.0, 2.0))
    assert v.dims == (2, 3, 4)
    assert v.voxel_volume == 1.0
    with pytest.raises(DataError):
        Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    with pytest.raises(DataError):
        Volume(np.zeros((0, 2, 2)))
    with pytest.raises(DataError):
        LabelMask(np.full((2, 2, 2), 2))
    with pytest.raises(DataError):
        ProbabilityMap(np.full((2, 2, 2), 1.5))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0  # read-only


def test_constant_round_trip(tmp_path):
    save_volume(Volume(np.full((4, 4, 4), 7.0)), tmp_path / "c.mhd", "MET_SHORT")
    back = load_volume(tmp_path / "c.mhd")
    assert back.dims == (4, 4, 4)
    assert np.all(back.data == 7)


def test_length_mismatch(tmp_path):
    (tmp_path / "bad.raw").write_bytes(np.zeros(23, np.uint8).tobytes())
    (tmp_path / "bad.mhd").write_text(
        "NDims = 3\nDimSize = 2 3 4\nElementType = MET_UCHAR\nElementDataFile = bad.raw\n")
    with pytest.raises(DataError, match="length mismatch"):
        load_volume(tmp_path / "bad.mhd")


def test_header_errors(tmp_path):
    with pytest.raises(DataError):
        load_volume(tmp_path / "missing.mhd")
    (tmp_path / "u.mhd").write_text("NDims = 3\nDimSize = 1 1 1\nElementType = MET_LONG\nElementDataFile = LOCAL\n")
    with pytest.raises(DataError, match="unsupported"):
        load_volume(tmp_path / "u.mhd")


def test_local_data_and_big_endian(tmp_path):
    vals = np.arange(8, dtype=">i2")
    p = tmp_path / "local.mhd"
    p.write_bytes(b"NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\n"
                  b"ElementByteOrderMSB = True\nElementDataFile = LOCAL\n" + vals.tobytes())
    v = load_volume(p)
    assert v.data[1, 1, 1] == 7 and v.data[0, 0, 1] == 1  # x fastest


@pytest.mark.parametrize("etype,dtype", [("MET_UCHAR", np.uint8), ("MET_SHORT", np.int16),
                                         ("MET_FLOAT", np.float32), ("MET_DOUBLE", np.float64)])
def test_random_round_trip_bit_exact(tmp_path, rng, etype, dtype):
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        data = rng.integers(info.min, info.max, (8, 8, 8)).astype(dtype)
    else:
        data = rng.standard_normal((8, 8, 8)).astype(dtype)
    vol = Volume(data, (0.7, 0.8, 2.5))
    save_volume(vol, tmp_path / "r.mhd")
    arr_back = load_volume(tmp_path / "r.mhd")
    assert arr_back.spacing == vol.spacing
    assert np.array_equal(arr_back.data, data.astype(np.float64))


def test_mask_round_trip(tmp_path, rng):
    m = LabelMask(rng.integers(0, 2, (5, 6, 7)))
    save_volume(m, tmp_path / "m.mhd")
    assert "MET_UCHAR" in (tmp_path / "m.mhd").read_text()
    back = load_mask(tmp_path / "m.mhd")
    assert np.array_equal(back.data, m.data)


def test_resample_constant_and_full_size_dims():
    v = Volume(np.full((30, 64, 64), 3.5), (0.7, 0.7, 1.0))
    r = resample(v, (32, 32, 29))
    assert r.dims == (32, 32, 29)
    assert np.all(r.data == 3.5)
    assert r.spacing[0] == pytest.approx(1.4)
    # a 512-wide example, only along the x axis to keep memory small
    big = Volume(np.zeros((3, 2, 512)), (0.5, 0.5, 1.0))
    assert resample(big, (256, 2, 3)).spacing[0] == pytest.approx(1.0)


def test_resample_ramp_matches_line():
    n = 16
    x = np.arange(n, dtype=np.float64)
    v = Volume(np.broadcast_to(2.0 * x + 1.0, (4, 4, n)).copy())
    r = resample(v, (n // 2, 4, 4))
    # output i samples input coordinate (i + 0.5) * 2 - 0.5
    expect = 2.0 * ((np.arange(n // 2) + 0.5) * 2 - 0.5) + 1.0
    assert np.allclose(r.data[0, 0], expect, atol=1e-6)


def test_resample_rejects_degenerate():
    with pytest.raises(DataError):
        resample(Volume(np.zeros((1, 4, 4))), (4, 4, 4))
    with pytest.raises(DataError):
        resample(Volume(np.zeros((4, 4, 4))), (1, 4, 4))


@given(hnp.arrays(np.float64, (4, 5, 3), elements=st.floats(-1e3, 1e3)),
       st.tuples(*[st.integers(2, 7)] * 3))
def test_resample_convexity(data, target):
    r = resample(Volume(data), target)
    assert r.data.min() >= data.min() - 1e-9
    assert r.data.max() <= data.max() + 1e-9


def test_window_examples():
    v = Volume(np.array([40.0, -160.0, -500.0, 240.0, 900.0, 140.0]).reshape(1, 1, 6))
    out = window_normalize(v, 40, 400).data.ravel()
    assert list(out) == [0.0, -128.0, -128.0, 128.0, 128.0, 64.0]


@given(hnp.arrays(np.float64, 20, elements=st.floats(-3000, 3000)))
def test_window_range_and_monotone(vals):
    vals = np.sort(vals)
    out = window_normalize(Volume(vals.reshape(1, 1, -1)), 40, 400).data.ravel()
    assert out.min() >= -128 and out.max() <= 128
    assert np.all(np.diff(out) >= 0)


def test_pad_crop_slices():
    v = Volume(np.arange(5, dtype=float)[:, None, None] * np.ones((5, 2, 2)))
    assert pad_crop_slices(v, 3).data[:, 0, 0].tolist() == [1, 2, 3]
    p = pad_crop_slices(v, 8, fill=-1).data[:, 0, 0].tolist()
    assert p == [-1, 0, 1, 2, 3, 4, -1, -1]


def test_phantom_noiseless_threshold_equals_truth():
    spec = PhantomSpec(dims=(48, 40, 36), center=(24, 20, 18), radii=(15, 11, 9), noise_sigma=0.0)
    vol, truth, prob = make_phantom(spec)
    assert np.array_equal(prob.data >= 0.5, truth.data.astype(bool))


def test_phantom_deterministic_and_volume():
    spec = PhantomSpec()
    a = make_phantom(spec)
    b = make_phantom(spec)
    for x, y in zip(a, b):
        assert np.array_equal(x.data, y.data)
    analytic = 4.0 / 3.0 * np.pi * 40 * 30 * 25
    assert abs(a[1].count - analytic) / analytic < 0.01


def test_phantom_must_fit():
    with pytest.raises(DataError):
        make_phantom(PhantomSpec(dims=(32, 32, 32), center=(16, 16, 16), radii=(20, 5, 5)))


def test_phantom_spec_from_file(tmp_path):
    p = tmp_path / "ph.txt"
    p.write_text("dims = 20 20 20\ncenter = 10 10 10\nradii = 5 5 5\nseed = 3\n")
    spec = PhantomSpec.from_file(p)
    assert spec.dims == (20, 20, 20) and spec.seed == 3
