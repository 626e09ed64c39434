"""3D texture features and the local appearance map.

The joint feature at each voxel is (intensity, modified LBP code, local
variance). The appearance map compares the cumulative histograms of those
features inside a local window against reference histograms fitted on the
initial region, using the 1D Wasserstein-1 distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import parse_key_values
from .errors import ConfigError, DataError, EmptyRegionError
from .volume import LabelMask, Volume, sample_shifted

FEATURES = ("intensity", "lbp", "var")
DENOMINATORS = ("stddev", "variance", "variance_squared")

# Bit order of the axis-aligned neighbour set: +x, -x, +y, -y, +z, -z.
AXIS_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


@dataclass(frozen=True)
class LbpParams:
    tau: float = 1.5
    p: int = 6
    r: float = 1.0

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError(f"LBP tau must be non-negative, got {self.tau}")
        if int(self.p) != self.p or not 1 <= self.p <= 26:
            raise ConfigError(f"LBP neighbour count must be an integer in [1, 26], got {self.p}")
        if not self.r > 0:
            raise ConfigError(f"LBP radius must be positive, got {self.r}")


def neighbor_offsets(params: LbpParams) -> list[tuple[float, float, float]]:
    """Neighbour offsets (dx, dy, dz) in voxels, in bit order.

    P = 6 uses the six axis directions scaled by r. Any other P uses P
    spherical Fibonacci directions scaled by r (sampled trilinearly).
    """
    r = float(params.r)
    if params.p == 6:
        return [(dx * r, dy * r, dz * r) for dx, dy, dz in AXIS_OFFSETS]
    golden = np.pi * (3.0 - np.sqrt(5.0))
    out = []
    for k in range(params.p):
        z = 1.0 - (2.0 * k + 1.0) / params.p
        rad = np.sqrt(max(0.0, 1.0 - z * z))
        phi = golden * k
        out.append((r * rad * np.cos(phi), r * rad * np.sin(phi), r * z))
    return out


def _neighbors(data: np.ndarray, params: LbpParams) -> list[np.ndarray]:
    return [sample_shifted(data, off) for off in neighbor_offsets(params)]


def lbp3d(vol: Volume, params: LbpParams = LbpParams()) -> np.ndarray:
    """Modified LBP code per voxel.

    Bit p is set when ``d - tau * sign(d) > 0`` with ``d = I_p - I_c``. With
    H(0) = 0 and sign(0) = 0, equal neighbours never set a bit.
    """
    center = vol.data.astype(np.float64)
    code = np.zeros(center.shape, dtype=np.int64)
    for bit, nb in enumerate(_neighbors(center, params)):
        d = nb - center
        code |= ((d - params.tau * np.sign(d)) > 0).astype(np.int64) << bit
    return code


def var3d(vol: Volume, params: LbpParams = LbpParams()) -> np.ndarray:
    """Population variance of the P neighbour intensities (centre excluded)."""
    nbs = np.stack(_neighbors(vol.data, params))
    mean = nbs.mean(axis=0)
    return ((nbs - mean) ** 2).mean(axis=0)


@dataclass(frozen=True)
class JointFeatureVolume:
    intensity: np.ndarray
    lbp: np.ndarray
    var: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not (self.intensity.shape == self.lbp.shape == self.var.shape):
            raise DataError("feature grids must share a shape")

    @classmethod
    def compute(cls, vol: Volume, params: LbpParams = LbpParams()) -> "JointFeatureVolume":
        return cls(vol.data.astype(np.float64), lbp3d(vol, params), var3d(vol, params), vol.spacing)

    def grids(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.intensity, self.lbp, self.var)

    @property
    def shape(self):
        return self.intensity.shape


# --------------------------------------------------------------------------
# Histograms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CumulativeHistogram:
    values: np.ndarray
    lo: float
    hi: float

    @property
    def bins(self) -> int:
        return len(self.values)

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.bins


def bin_index(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    """Uniform bin index of each value after clamping into [lo, hi]."""
    v = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    idx = np.floor((v - lo) * (bins / (hi - lo))).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def cumulative_histogram(values, value_range: tuple[float, float], bins: int) -> CumulativeHistogram:
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo < hi:
        raise DataError(f"invalid histogram range ({lo}, {hi})")
    if int(bins) != bins or bins < 2:
        raise DataError(f"bins must be an integer >= 2, got {bins}")
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise DataError("cannot build a histogram of no values")
    counts = np.bincount(bin_index(values, lo, hi, bins), minlength=bins)
    cum = np.cumsum(counts) / values.size
    cum[-1] = 1.0
    return CumulativeHistogram(cum, lo, hi)


def wasserstein_l1(h1: CumulativeHistogram, h2: CumulativeHistogram) -> float:
    """W1 distance between two histograms sharing a binning: sum |H1 - H2| * width."""
    if h1.bins != h2.bins or h1.lo != h2.lo or h1.hi != h2.hi:
        raise DataError("histograms must share bin count and range")
    return float(np.abs(h1.values - h2.values).sum() * h1.bin_width)


# --------------------------------------------------------------------------
# Reference model and appearance map
# --------------------------------------------------------------------------

@dataclass
class FeatureHistogramModel:
    """Per-feature reference cumulative histogram and variance over the initial region.

    ``denominator`` selects how a feature's W1 term is normalised:
    ``"variance"`` divides by the feature variance, ``"variance_squared"`` by
    its square and ``"stddev"`` by the standard deviation, which makes each
    term the W1 distance of the standardised feature (unitless).
    """

    ranges: list[tuple[float, float]]
    bins: list[int]
    cumulative: list[np.ndarray]
    variances: list[float]
    enabled: list[bool] = field(default_factory=lambda: [True, True, True])
    denominator: str = "stddev"

    def __post_init__(self):
        if self.denominator not in DENOMINATORS:
            raise ConfigError(f"unknown appearance denominator {self.denominator!r}")

    def reference(self, i: int) -> CumulativeHistogram:
        lo, hi = self.ranges[i]
        return CumulativeHistogram(self.cumulative[i], lo, hi)

    def weight(self, i: int) -> float:
        """Factor multiplying the W1 term of feature i (0 when disabled)."""
        if not self.enabled[i]:
            return 0.0
        v = self.variances[i]
        if self.denominator == "stddev":
            return 1.0 / float(np.sqrt(v))
        return 1.0 / (v * v if self.denominator == "variance_squared" else v)

    @property
    def gamma_default(self) -> float:
        """Sum of the feature variances over 36."""
        return float(sum(self.variances)) / 36.0

    def to_text(self) -> str:
        lines = [f"denominator = {self.denominator}"]
        for i, name in enumerate(FEATURES):
            lo, hi = self.ranges[i]
            lines += [
                f"{name}.bins = {self.bins[i]}",
                f"{name}.range = {lo!r} {hi!r}",
                f"{name}.variance = {self.variances[i]!r}",
                f"{name}.enabled = {self.enabled[i]}",
                f"{name}.cumulative = " + " ".join(repr(float(v)) for v in self.cumulative[i]),
            ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FeatureHistogramModel":
        kv = parse_key_values(text)
        try:
            ranges, bins, cum, variances, enabled = [], [], [], [], []
            for name in FEATURES:
                lo, hi = (float(x) for x in kv[f"{name}.range"].split())
                ranges.append((lo, hi))
                bins.append(int(kv[f"{name}.bins"]))
                cum.append(np.array([float(x) for x in kv[f"{name}.cumulative"].split()]))
                variances.append(float(kv[f"{name}.variance"]))
                enabled.append(kv[f"{name}.enabled"] == "True")
            return cls(ranges, bins, cum, variances, enabled, kv.get("denominator", "stddev"))
        except (KeyError, ValueError) as exc:
            raise DataError(f"malformed feature model: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "FeatureHistogramModel":
        return cls.from_text(Path(path).read_text())


def fit_reference_model(
    features: JointFeatureVolume,
    l0: LabelMask,
    bins: int = 32,
    lbp_params: LbpParams = LbpParams(),
    denominator: str = "stddev",
) -> FeatureHistogramModel:
    """Fit reference histograms and variances over the voxels of ``l0``.

    Intensity and variance ranges span the L0 min/max padded by 1% of the
    span on each side; LBP codes get one bin per code. A feature with zero
    variance over L0 is disabled with a warning.
    """
    if l0.data.shape != features.shape:
        raise DataError("L0 and feature grids differ in shape")
    sel = l0.data.astype(bool)
    if not sel.any():
        raise EmptyRegionError("initial region L0 is empty")
    ranges, nbins, cum, variances, enabled = [], [], [], [], []
    for name, grid in zip(FEATURES, features.grids()):
        vals = grid[sel].astype(np.float64)
        if name == "lbp":
            n = 2 ** lbp_params.p
            lo, hi, b = -0.5, n - 0.5, n
        else:
            vmin, vmax = float(vals.min()), float(vals.max())
            pad = 0.01 * (vmax - vmin)
            if pad == 0.0:
                pad = max(abs(vmin) * 0.01, 1.0)
            lo, hi, b = vmin - pad, vmax + pad, bins
        var = float(vals.var())
        ok = var > 0.0
        if not ok:
            warnings.warn(f"feature {name!r} is constant over L0; its appearance term is disabled",
                          RuntimeWarning, stacklevel=2)
        ranges.append((lo, hi))
        nbins.append(b)
        cum.append(cumulative_histogram(vals, (lo, hi), b).values)
        variances.append(var)
        enabled.append(ok)
    return FeatureHistogramModel(ranges, nbins, cum, variances, enabled, denominator)


def _box_count(ind: np.ndarray, window_zyx: tuple[int, int, int]) -> np.ndarray:
    """Window sums of an edge-padded array; output shape is input minus (w - 1)."""
    out = ind
    for axis, w in enumerate(window_zyx):
        c = np.cumsum(out, axis=axis, dtype=np.int32)
        zero_shape = list(c.shape)
        zero_shape[axis] = 1
        c = np.concatenate([np.zeros(zero_shape, dtype=np.int32), c], axis=axis)
        n = c.shape[axis]
        hi = [slice(None)] * 3
        lo = [slice(None)] * 3
        hi[axis] = slice(w, n)
        lo[axis] = slice(0, n - w)
        out = c[tuple(hi)] - c[tuple(lo)]
    return out


def check_window(window: tuple[int, int, int], shape_zyx) -> tuple[int, int, int]:
    """Validate an (x, y, z) window and return it in array (z, y, x) order."""
    window = tuple(int(w) for w in window)
    if len(window) != 3 or any(w < 1 or w % 2 == 0 for w in window):
        raise ConfigError(f"window dims must be 3 positive odd integers, got {window}")
    wzyx = window[::-1]
    if any(w > n for w, n in zip(wzyx, shape_zyx)):
        raise DataError(f"window {window} is larger than the volume")
    return wzyx


def appearance_map(
    features: JointFeatureVolume,
    model: FeatureHistogramModel,
    window: tuple[int, int, int] = (9, 9, 5),
) -> np.ndarray:
    """Sum over features of W1(local histogram, reference) times the feature weight.

    The local window ``window`` is given in (x, y, z) voxels and centred on
    each voxel; coordinates outside the volume are clamped, so every window
    holds exactly prod(window) samples.
    """
    wzyx = check_window(window, features.shape)
    half = [(w // 2, w // 2) for w in wzyx]
    n = float(np.prod(wzyx))
    out = np.zeros(features.shape, dtype=np.float64)
    for i, grid in enumerate(features.grids()):
        weight = model.weight(i)
        if weight == 0.0:
            continue
        ref = model.reference(i)
        idx = np.pad(bin_index(grid, ref.lo, ref.hi, ref.bins), half, mode="edge")
        acc = np.zeros(features.shape, dtype=np.float64)
        # the last cumulative bin is 1 on both sides
        for b in range(ref.bins - 1):
            local = _box_count((idx <= b).astype(np.int32), wzyx) / n
            acc += np.abs(local - ref.values[b])
        out += acc * (ref.bin_width * weight)
    return out
