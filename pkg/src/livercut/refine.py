"""Graph-cut refinement of a likelihood map into a binary segmentation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    EnergyField,
    EnergyParams,
    boundary_sums,
    build_graph,
    region_score,
    threshold_map,
    total_energy,
)
from .features import FeatureHistogramModel, JointFeatureVolume, appearance_map, fit_reference_model
from .maxflow import solve_maxflow
from .probmap import IntensityRange, estimate_intensity_range, initial_region
from .volume import LabelMask, ProbabilityMap, Volume, check_aligned

log = logging.getLogger(__name__)


@dataclass
class RefineResult:
    mask: LabelMask
    l0: LabelMask
    intensity_range: IntensityRange
    model: FeatureHistogramModel
    field: EnergyField
    params: EnergyParams
    energy: float
    initial_energy: float
    flow: float
    timings: dict[str, float] = field(default_factory=dict)


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def __call__(self, name):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[name] = time.perf_counter() - self.t0
                log.info("%s: %.2fs", name, timer.timings[name])

        return _Stage()


def refine(vol: Volume, prob: ProbabilityMap, params: EnergyParams = EnergyParams()) -> RefineResult:
    """Threshold -> largest component -> intensity range -> features -> energy -> min cut."""
    check_aligned(vol, prob)
    stage = _Timer()
    with stage("initial_region"):
        l0 = initial_region(prob, params.likelihood_threshold)
        rng = estimate_intensity_range(vol, l0)
    with stage("features"):
        feats = JointFeatureVolume.compute(vol, params.lbp)
        model = fit_reference_model(feats, l0, params.bins, params.lbp, params.appearance_denominator)
        if params.gamma is None:
            params = params.with_gamma(model.gamma_default)
        appearance = appearance_map(feats, model, params.window)
    with stage("energy"):
        f = threshold_map(vol, rng)
        r = region_score(vol, f, prob, appearance, params)
        graph = build_graph(r, vol, params)
    with stage("maxflow"):
        cut = solve_maxflow(graph)
    mask = cut.mask(vol.spacing)
    energy = total_energy(vol, mask, r, params)
    initial = total_energy(vol, l0, r, params)
    log.info("energy %.6g (initial region %.6g), flow %.6g", energy, initial, cut.flow)
    efield = EnergyField(f, np.asarray(prob.data), appearance, r,
                         boundary_sums(vol.data, params.beta), float(params.gamma))
    return RefineResult(mask, l0, rng, model, efield, params, energy, initial, cut.flow, stage.timings)
