"""Initial region extraction from a likelihood map and the liver intensity range."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyRegionError, NumericalError
from .volume import LabelMask, ProbabilityMap, Volume, check_aligned

# 6-connectivity
_STRUCTURE = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class IntensityRange:
    zeta: float
    eta: float
    mean: float
    stddev: float

    LOWER_K = 3.0
    UPPER_K = 3.5

    @classmethod
    def from_stats(cls, mean: float, stddev: float) -> "IntensityRange":
        zeta = mean - cls.LOWER_K * stddev
        eta = mean + cls.UPPER_K * stddev
        if not zeta < eta:
            raise NumericalError(
                f"degenerate intensity range [{zeta}, {eta}] (stddev {stddev}); "
                "the initial region has constant intensity"
            )
        return cls(zeta, eta, mean, stddev)


def threshold_likelihood(prob: ProbabilityMap, threshold: float = 0.5) -> LabelMask:
    """Label voxels with likelihood >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
    return LabelMask(prob.data >= threshold, prob.spacing)


def largest_component(mask: LabelMask) -> LabelMask:
    """Keep the largest 6-connected foreground component.

    Ties go to the component whose first voxel comes first in memory order.
    """
    labels, n = ndimage.label(mask.data, structure=_STRUCTURE)
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return LabelMask(labels == int(np.argmax(sizes)), mask.spacing)


def estimate_intensity_range(vol: Volume, l0: LabelMask) -> IntensityRange:
    """Mean and (population) standard deviation of intensities over ``l0``."""
    check_aligned(vol, l0)
    values = vol.data[l0.data.astype(bool)]
    if values.size == 0:
        raise EmptyRegionError("initial region L0 is empty")
    values = values.astype(np.float64)
    return IntensityRange.from_stats(float(values.mean()), float(values.std()))


def initial_region(prob: ProbabilityMap, threshold: float = 0.5) -> LabelMask:
    l0 = largest_component(threshold_likelihood(prob, threshold))
    if l0.count == 0:
        raise EmptyRegionError(f"no voxel has likelihood >= {threshold}; initial region is empty")
    return l0

