import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from livercut import metrics
from livercut.errors import DataError, NumericalError
from livercut.volume import LabelMask, PhantomSpec, make_phantom


def _mask(shape, idx, spacing=(1.0, 1.0, 1.0)):
    m = np.zeros(shape, np.uint8)
    for p in idx:
        m[p] = 1
    return LabelMask(m, spacing)


def _ball(shape, center, radius):
    z, y, x = np.indices(shape)
    c = center
    return LabelMask(((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) <= radius ** 2)


def test_voe_rvd_examples():
    a = np.zeros((10, 10, 2), np.uint8)
    b = np.zeros((10, 10, 2), np.uint8)
    a[:, :5, 0] = 1  # 50
    b[:, :5, 0] = 1
    b[:, 5:, 0] = 1  # union 100, inter 50
    assert metrics.voe(LabelMask(a), LabelMask(b)) == 50.0
    assert metrics.voe(LabelMask(a), LabelMask(a)) == 0.0
    c = np.zeros_like(a)
    c[:, :, 1] = 1
    assert metrics.voe(LabelMask(a), LabelMask(c)) == 100.0
    with pytest.raises(DataError):
        metrics.voe(LabelMask(c * 0), LabelMask(c * 0))
    ref = np.zeros((10, 10, 2), np.uint8)
    ref.ravel()[:100] = 1
    for n, expect in ((100, 0.0), (110, 10.0), (90, -10.0)):
        m = np.zeros_like(ref)
        m.ravel()[:n] = 1
        assert metrics.rvd(LabelMask(m), LabelMask(ref)) == pytest.approx(expect)
    with pytest.raises(DataError):
        metrics.rvd(LabelMask(ref), LabelMask(ref * 0))


def test_surface_identical_and_single_voxel():
    b = _ball((12, 12, 12), (6, 6, 6), 4)
    assert metrics.surface_distances(b, b) == (0.0, 0.0, 0.0)
    a = _mask((8, 8, 8), [(1, 1, 1)], (2.0, 2.0, 2.0))
    c = _mask((8, 8, 8), [(1, 1, 4)], (2.0, 2.0, 2.0))
    assert metrics.surface_distances(a, c) == (6.0, 6.0, 6.0)
    with pytest.raises(DataError):
        metrics.surface_distances(a, LabelMask(np.zeros((8, 8, 8))))


def test_concentric_spheres():
    shape = (56, 56, 56)
    asd, rmsd, msd = metrics.surface_distances(_ball(shape, (28, 28, 28), 20), _ball(shape, (28, 28, 28), 23))
    assert abs(asd - 3.0) <= 0.5 and abs(msd - 3.0) <= 1.0
    assert asd <= rmsd <= msd


def _direct_distances(a, b):
    pa = np.argwhere(metrics.border_voxels(a.data)) * np.array(a.spacing[::-1])
    pb = np.argwhere(metrics.border_voxels(b.data)) * np.array(b.spacing[::-1])
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return np.concatenate([d.min(1), d.min(0)])


def test_border_voxels_definition():
    m = np.zeros((5, 5, 5), bool)
    m[1:4, 1:4, 1:4] = True
    assert metrics.border_voxels(m).sum() == 26
    full = np.ones((3, 3, 3), bool)
    assert metrics.border_voxels(full).sum() == 26  # grid edge counts as background


def test_surface_distances_direct_oracle_and_ordering():
    r = np.random.default_rng(0)
    for _ in range(500):
        shape = tuple(r.integers(2, 7, 3))
        sp = tuple(r.uniform(0.5, 2.5, 3))
        a = r.random(shape) < 0.4
        b = r.random(shape) < 0.4
        a.flat[0] = b.flat[-1] = True
        ma, mb = LabelMask(a, sp), LabelMask(b, sp)
        asd, rmsd, msd = metrics.surface_distances(ma, mb)
        assert asd <= rmsd + 1e-12 and rmsd <= msd + 1e-12
        d = _direct_distances(ma, mb)
        assert asd == pytest.approx(d.mean(), abs=1e-9)
        assert msd == pytest.approx(d.max(), abs=1e-9)
        assert metrics.surface_distances(mb, ma) == pytest.approx((asd, rmsd, msd), abs=1e-12)


@given(hnp.arrays(np.bool_, (4, 5, 3), elements=st.booleans()),
       hnp.arrays(np.bool_, (4, 5, 3), elements=st.booleans()), st.integers(1, 3))
def test_symmetry_and_padding_invariance(a, b, pad):
    a[0, 0, 0] = True
    b[-1, -1, -1] = True
    ma, mb = LabelMask(a), LabelMask(b)
    assert metrics.voe(ma, mb) == metrics.voe(mb, ma)
    pa, pb = LabelMask(np.pad(a, pad)), LabelMask(np.pad(b, pad))
    assert metrics.voe(pa, pb) == pytest.approx(metrics.voe(ma, mb))
    assert metrics.rvd(pa, pb) == pytest.approx(metrics.rvd(ma, mb))
    assert metrics.surface_distances(pa, pb) == pytest.approx(metrics.surface_distances(ma, mb))


def test_scoring_anchors():
    scores, total = metrics.sliver_score((0, 0, 0, 0, 0))
    assert scores == (100.0,) * 5 and total == 100.0
    scores, total = metrics.sliver_score((6.4, 4.7, 1.0, 1.8, 19.0))
    assert all(abs(s - 75.0) <= 1e-9 for s in scores) and abs(total - 75.0) <= 1e-9
    assert metrics.sliver_score((12.8, 0, 0, 0, 0))[0][0] == pytest.approx(50.0)
    assert metrics.sliver_score((0, -4.7, 0, 0, 0))[0][1] == pytest.approx(75.0)
    assert metrics.sliver_score((1e3, 0, 0, 0, 0))[0][0] == 0.0
    with pytest.raises(DataError):
        metrics.sliver_score((0, 0, 0, 0, np.nan))


@given(st.lists(st.floats(0, 100), min_size=5, max_size=5), st.integers(0, 4), st.floats(0, 50))
def test_score_monotone(vals, k, inc):
    worse = list(vals)
    worse[k] += inc
    s1, _ = metrics.sliver_score(vals)
    s2, _ = metrics.sliver_score(worse)
    assert s2[k] <= s1[k] and min(s2) >= 0


def test_evaluate_report():
    b = _ball((20, 20, 20), (10, 10, 10), 6)
    rep = metrics.evaluate(b, b)
    assert rep.values() == (0, 0, 0, 0, 0) and rep.total == 100.0


def test_mask_volume_ml():
    assert metrics.mask_volume_ml(LabelMask(np.zeros((3, 3, 3)))) == 0.0
    m = np.zeros((10, 10, 20), np.uint8)
    m[:, :, :10] = 1
    assert metrics.mask_volume_ml(LabelMask(m)) == pytest.approx(1.0)
    _, truth, _ = make_phantom(PhantomSpec(noise_sigma=0))
    analytic = 4.0 / 3.0 * np.pi * 40 * 30 * 25 / 1000
    assert abs(metrics.mask_volume_ml(truth) - analytic) / analytic < 0.01


def _stats_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    slope = sxy / sxx
    return slope, my - slope * mx, sxy / (sxx * syy) ** 0.5


def test_volume_stats_oracle():
    r = np.random.default_rng(4)
    for _ in range(50):
        manual = r.uniform(800, 2500, int(r.integers(3, 30)))
        auto = 0.97 * manual + 20 + r.normal(0, 30, manual.size)
        st_ = metrics.volume_stats(list(zip(auto, manual)))
        slope, icpt, rr = _stats_oracle(manual.tolist(), auto.tolist())
        assert st_.slope == pytest.approx(slope, abs=1e-9)
        assert st_.intercept == pytest.approx(icpt, abs=1e-9 * max(1, abs(icpt)))
        assert st_.r == pytest.approx(rr, abs=1e-9)
        d = auto - manual
        sd = d.std(ddof=1)
        assert st_.loa_upper - st_.loa_lower == pytest.approx(2 * 1.96 * sd)
        assert st_.cv == pytest.approx(100 * sd / np.concatenate([auto, manual]).mean())


def test_volume_stats_trivial_cases():
    manual = [1000.0, 1500.0, 1800.0, 2100.0]
    same = metrics.volume_stats(list(zip(manual, manual)))
    assert (same.slope, same.intercept, same.r, same.mean_difference, same.cv) == pytest.approx((1, 0, 1, 0, 0))
    shifted = metrics.volume_stats([(m + 50, m) for m in manual])
    assert shifted.slope == pytest.approx(1) and shifted.intercept == pytest.approx(50)
    assert shifted.loa_lower == pytest.approx(50) and shifted.loa_upper == pytest.approx(50)
    with pytest.raises(DataError):
        metrics.volume_stats([(1, 1), (2, 2)])
    with pytest.raises(NumericalError):
        metrics.volume_stats([(1, 5), (2, 5), (3, 5)])
