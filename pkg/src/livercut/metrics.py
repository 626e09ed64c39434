"""Segmentation accuracy measures, scoring and volume agreement statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DataError, NumericalError
from .volume import LabelMask, check_aligned

# Non-expert reference errors scored 75: VOE %, |RVD| %, ASD mm, RMSD mm, MSD mm.
REFERENCE_ERRORS = (6.4, 4.7, 1.0, 1.8, 19.0)
METRIC_NAMES = ("voe", "rvd", "asd", "rmsd", "msd")


@dataclass(frozen=True)
class MetricReport:
    voe: float
    rvd: float
    asd: float
    rmsd: float
    msd: float
    scores: tuple[float, float, float, float, float]
    total: float

    def values(self) -> tuple[float, float, float, float, float]:
        return (self.voe, self.rvd, self.asd, self.rmsd, self.msd)


def _bits(a: LabelMask, b: LabelMask):
    check_aligned(a, b)
    return a.data.astype(bool), b.data.astype(bool)


def voe(a: LabelMask, b: LabelMask) -> float:
    """Volumetric overlap error in percent."""
    x, y = _bits(a, b)
    union = np.count_nonzero(x | y)
    if union == 0:
        raise DataError("VOE undefined for two empty masks")
    return 100.0 * (1.0 - np.count_nonzero(x & y) / union)


def rvd(a: LabelMask, b: LabelMask) -> float:
    """Signed relative volume difference of ``a`` against reference ``b``, in percent."""
    x, y = _bits(a, b)
    nb = np.count_nonzero(y)
    if nb == 0:
        raise DataError("RVD undefined for an empty reference")
    return 100.0 * (np.count_nonzero(x) - nb) / nb


_SIX = ndimage.generate_binary_structure(3, 1)


def border_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background 6-neighbour; outside the grid is background."""
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(np.pad(mask, 1), structure=_SIX)[1:-1, 1:-1, 1:-1]
    return mask & ~inner


def _border_points(mask: LabelMask) -> np.ndarray:
    idx = np.argwhere(border_voxels(mask.data))  # (z, y, x)
    sx, sy, sz = mask.spacing
    return idx * np.array([sz, sy, sx])


def surface_distances(a: LabelMask, b: LabelMask) -> tuple[float, float, float]:
    """(ASD, RMSD, MSD) in mm over the pooled directed border-to-border distances."""
    _bits(a, b)
    if a.count == 0 or b.count == 0:
        raise DataError("surface distances need two non-empty masks")
    pa, pb = _border_points(a), _border_points(b)
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    d = np.concatenate([da, db])
    return float(d.mean()), float(np.sqrt(np.mean(d * d))), float(d.max())


def sliver_score(values) -> tuple[tuple[float, ...], float]:
    """Per-metric scores ``max(0, 100 - 25 * |v| / ref)`` and their mean."""
    values = tuple(float(v) for v in values)
    if len(values) != 5 or not all(np.isfinite(values)):
        raise DataError("sliver_score expects five finite metric values")
    scores = tuple(max(0.0, 100.0 - 25.0 * abs(v) / ref) for v, ref in zip(values, REFERENCE_ERRORS))
    return scores, sum(scores) / 5.0


def evaluate(result: LabelMask, truth: LabelMask) -> MetricReport:
    vals = (voe(result, truth), rvd(result, truth), *surface_distances(result, truth))
    scores, total = sliver_score(vals)
    return MetricReport(*vals, scores, total)


def mask_volume_ml(mask: LabelMask) -> float:
    return mask.count * mask.voxel_volume / 1000.0


@dataclass(frozen=True)
class VolumeStats:
    auto: tuple[float, ...]
    manual: tuple[float, ...]
    slope: float
    intercept: float
    r: float
    mean_difference: float
    loa_lower: float
    loa_upper: float
    cv: float  # percent


def volume_stats(pairs) -> VolumeStats:
    """Regression of auto on manual volumes, Pearson R, Bland-Altman limits and CV.

    SDs use ddof = 1. CV is SD(auto - manual) over the mean of all auto and
    manual volumes pooled, in percent.
    """
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] < 3:
        raise DataError("volume statistics need at least 3 pairs")
    auto, manual = arr[:, 0], arr[:, 1]
    mc = manual - manual.mean()
    ac = auto - auto.mean()
    sxx = float(mc @ mc)
    syy = float(ac @ ac)
    if sxx == 0.0 or syy == 0.0:
        raise NumericalError("degenerate variance in volume pairs")
    slope = float(mc @ ac) / sxx
    intercept = float(auto.mean() - slope * manual.mean())
    r = float(mc @ ac) / np.sqrt(sxx * syy)
    diff = auto - manual
    md = float(diff.mean())
    sd = float(diff.std(ddof=1))
    cv = 100.0 * sd / float(arr.mean())
    return VolumeStats(tuple(auto), tuple(manual), slope, intercept, r, md,
                       md - 1.96 * sd, md + 1.96 * sd, cv)
