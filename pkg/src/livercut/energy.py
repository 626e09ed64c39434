"""Graph-cut energy: thresholding map, boundary weights, region score, graph weights."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .features import DENOMINATORS, LbpParams
from .maxflow import GridGraph
from .probmap import IntensityRange
from .volume import LabelMask, ProbabilityMap, Volume

SIGN_MODES = ("literal", "corrected")


@dataclass(frozen=True)
class EnergyParams:
    """Refinement knobs.

    The default appearance term sums W1 distances of standardised features
    (``appearance_denominator="stddev"``) weighted by ``gamma=0.02``.
    ``gamma=None`` derives gamma from the fitted feature model instead (sum of
    the raw feature variances over 36); pair it with
    ``appearance_denominator="variance"`` for the unscaled formulation.
    ``sign_mode`` picks how the region score combines its terms, see
    :func:`region_score`.
    """

    lam: float = 70.0
    beta: float = 0.2
    gamma: float | None = 0.02
    lbp: LbpParams = field(default_factory=LbpParams)
    window: tuple[int, int, int] = (9, 9, 5)
    likelihood_threshold: float = 0.5
    sign_mode: str = "corrected"
    bins: int = 32
    appearance_denominator: str = "stddev"

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.gamma is not None and not self.gamma >= 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if not 0 < self.likelihood_threshold < 1:
            raise ConfigError(f"likelihood threshold must lie in (0, 1), got {self.likelihood_threshold}")
        if self.sign_mode not in SIGN_MODES:
            raise ConfigError(f"sign_mode must be one of {SIGN_MODES}, got {self.sign_mode!r}")
        if self.appearance_denominator not in DENOMINATORS:
            raise ConfigError(f"appearance_denominator must be one of {DENOMINATORS}, "
                              f"got {self.appearance_denominator!r}")
        if int(self.bins) != self.bins or self.bins < 2:
            raise ConfigError(f"bins must be an integer >= 2, got {self.bins}")
        w = tuple(int(x) for x in self.window)
        if len(w) != 3 or any(x < 1 or x % 2 == 0 for x in w):
            raise ConfigError(f"window must be 3 positive odd integers, got {self.window}")
        object.__setattr__(self, "window", w)

    def with_gamma(self, gamma: float) -> "EnergyParams":
        return replace(self, gamma=float(gamma))


@dataclass(frozen=True)
class EnergyField:
    threshold_map: np.ndarray
    likelihood: np.ndarray
    appearance: np.ndarray
    region: np.ndarray
    boundary_sums: np.ndarray
    gamma: float


def threshold_map(vol: Volume, rng: IntensityRange) -> np.ndarray:
    """(I - zeta)(I - eta) / (eta - zeta)^2 per voxel; negative inside the range."""
    if not rng.zeta < rng.eta:
        raise DataError(f"degenerate intensity range [{rng.zeta}, {rng.eta}]")
    i = vol.data.astype(np.float64)
    return (i - rng.zeta) * (i - rng.eta) / (rng.eta - rng.zeta) ** 2


def boundary_weight(i1, i2, beta: float):
    """1 / (1 + beta |i1 - i2|^2); accepts scalars or arrays."""
    d = np.subtract(i1, i2, dtype=np.float64)
    return 1.0 / (1.0 + beta * d * d)


def pair_weights(data: np.ndarray, beta: float) -> list[np.ndarray]:
    """Boundary weights between 6-neighbours, one array per axis (x, y, z).

    The x array has shape (nz, ny, nx - 1) and holds the weight between
    [z, y, x] and [z, y, x + 1]; likewise for y and z.
    """
    data = np.asarray(data, dtype=np.float64)
    return [boundary_weight(np.diff(data, axis=axis), 0.0, beta) for axis in (2, 1, 0)]


def boundary_sums(data: np.ndarray, beta: float) -> np.ndarray:
    """Sum of boundary weights over each voxel's in-volume 6-neighbours."""
    out = np.zeros(np.shape(data), dtype=np.float64)
    for axis, w in zip((2, 1, 0), pair_weights(data, beta)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] += w
        out[tuple(hi)] += w
    return out


def region_score(
    vol: Volume,
    f: np.ndarray,
    likelihood: ProbabilityMap | np.ndarray,
    appearance: np.ndarray,
    params: EnergyParams,
) -> np.ndarray:
    """Neighbour-weighted evidence per voxel; positive favours the object.

    literal:   sum_y B_xy * ( f + (L - 0.5) + gamma * P)
    corrected: sum_y B_xy * (-f + (L - 0.5) - gamma * P)

    In corrected mode intensities inside [zeta, eta] (f < 0), high likelihood
    and reference-like appearance (small P) all raise the score.
    """
    if params.gamma is None:
        raise ConfigError("gamma is unresolved; fit the feature model first")
    lik = likelihood.data if isinstance(likelihood, Volume) else np.asarray(likelihood)
    shape = vol.data.shape
    if f.shape != shape or lik.shape != shape or appearance.shape != shape:
        raise DataError("region score inputs are not aligned")
    sums = boundary_sums(vol.data, params.beta)
    if params.sign_mode == "literal":
        bracket = f + (lik - 0.5) + params.gamma * appearance
    else:
        bracket = -f + (lik - 0.5) - params.gamma * appearance
    return sums * bracket


def data_term(r_value, label):
    """max(-R, 0) * l + max(R, 0) * (1 - l)."""
    r_value = np.asarray(r_value, dtype=np.float64)
    label = np.asarray(label)
    out = np.maximum(-r_value, 0.0) * label + np.maximum(r_value, 0.0) * (1 - label)
    return float(out) if out.ndim == 0 else out


def total_energy(vol: Volume, labels: LabelMask | np.ndarray, r: np.ndarray, params: EnergyParams) -> float:
    """lam * sum_x D_x(l_x) + sum over unordered 6-neighbour pairs of B_xy [l_x != l_y]."""
    lab = labels.data if isinstance(labels, Volume) else np.asarray(labels)
    if lab.shape != vol.data.shape or np.shape(r) != vol.data.shape:
        raise DataError("energy inputs are not aligned")
    lab = lab.astype(np.int64)
    e_data = float(np.sum(data_term(r, lab)))
    e_boundary = 0.0
    for axis, w in zip((2, 1, 0), pair_weights(vol.data, params.beta)):
        e_boundary += float(np.sum(w * (np.diff(lab, axis=axis) != 0)))
    return params.lam * e_data + e_boundary


def grid_edges(shape: tuple[int, int, int]) -> np.ndarray:
    """Unordered 6-neighbour pairs of a C-ordered (z, y, x) grid: x pairs, then y, then z."""
    idx = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    parts = []
    for axis in (2, 1, 0):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        parts.append(np.stack([idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()], axis=1))
    return np.concatenate(parts)


def build_graph(r: np.ndarray, vol: Volume, params: EnergyParams) -> GridGraph:
    """t-links lam * max(+-R, 0), n-links B_xy; cut cost equals :func:`total_energy`."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != vol.data.shape:
        raise DataError("region score and volume are not aligned")
    weights = np.concatenate([w.ravel() for w in pair_weights(vol.data, params.beta)])
    return GridGraph(
        source_caps=params.lam * np.maximum(r, 0.0).ravel(),
        sink_caps=params.lam * np.maximum(-r, 0.0).ravel(),
        edges=grid_edges(vol.data.shape),
        edge_caps=weights,
        shape=vol.data.shape,
    )
