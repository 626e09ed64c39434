"""Command-line pipeline: phantom, preprocess, infer, refine, evaluate.

Every command reads an optional flat ``key = value`` config file
(``--config``); flags override file values, which override defaults. Each
written volume gets a JSON provenance sidecar next to it (same stem,
``.json``) holding the effective parameters, timestamps and input
checksums. Exit codes: 0 success, 2 config error, 3 data error, 4
numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, cnn, metrics
from .config import as_bool, as_floats, as_ints, read_key_values
from .diffusion import DiffusionParams, anisotropic_diffusion
from .energy import SIGN_MODES, EnergyParams
from .errors import ConfigError, DataError, EmptyRegionError, LivercutError
from .features import DENOMINATORS, LbpParams
from .refine import refine
from .volume import (
    PhantomSpec,
    Volume,
    load_mask,
    load_probability,
    load_volume,
    make_phantom,
    pad_crop_slices,
    resample,
    save_volume,
    window_normalize,
)

log = logging.getLogger("livercut")

# ---------------------------------------------------------------- config


def _opt(parse):
    def wrapped(value, key):
        return None if value.strip().lower() in ("", "none", "auto") else parse(value, key)
    return wrapped


def _choice(options):
    def parse(value, key):
        if value not in options:
            raise ConfigError(f"{key}: expected one of {options}, got {value!r}")
        return value
    return parse


_str = lambda v, k: v  # noqa: E731
_int = lambda v, k: as_ints(v, 1, k)[0]  # noqa: E731
_float = lambda v, k: as_floats(v, 1, k)[0]  # noqa: E731
_ints3 = lambda v, k: as_ints(v, 3, k)  # noqa: E731
_ints11 = lambda v, k: as_ints(v, 11, k)  # noqa: E731
_bool = lambda v, k: as_bool(v, k)  # noqa: E731

# key -> (parser, default)
KEYS: dict[str, tuple] = {
    "volume": (_opt(_str), None),
    "probability": (_opt(_str), None),
    "weights": (_opt(_str), None),
    "truth": (_opt(_str), None),
    "output": (_opt(_str), None),
    "resample": (_opt(_ints3), None),
    "slices": (_opt(_int), None),
    "window_level": (_float, 40.0),
    "window_width": (_float, 400.0),
    "diffusion": (_bool, True),
    "diffusion_iterations": (_int, 5),
    "diffusion_time_step": (_float, 1.0 / 6.0),
    "diffusion_conductance": (_float, 30.0),
    "lambda": (_float, 70.0),
    "beta": (_float, 0.2),
    "gamma": (_opt(_float), 0.02),
    "appearance_window": (_ints3, (9, 9, 5)),
    "appearance_denominator": (_choice(DENOMINATORS), "stddev"),
    "tau": (_float, 1.5),
    "lbp_p": (_int, 6),
    "lbp_r": (_float, 1.0),
    "likelihood_threshold": (_float, 0.5),
    "sign_mode": (_choice(SIGN_MODES), "corrected"),
    "bins": (_int, 32),
    "network": (_choice(("full", "scaled")), "full"),
    "channels": (_opt(_ints11), None),
    "random_weights": (_bool, False),
    "zero_weights": (_bool, False),
    "seed": (_int, 0),
}
PHANTOM_PREFIX = "phantom."


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)
    phantom: dict = field(default_factory=dict)

    @classmethod
    def build(cls, file_items: dict[str, str], cli_items: dict[str, str]) -> "PipelineConfig":
        cfg = cls()
        for key, (_, default) in KEYS.items():
            cfg.values[key] = default
            cfg.sources[key] = "default"
        for source, items in (("file", file_items), ("cli", cli_items)):
            for key, raw in items.items():
                if key.startswith(PHANTOM_PREFIX):
                    cfg.phantom[key[len(PHANTOM_PREFIX):]] = raw
                    continue
                if key not in KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                cfg.values[key] = KEYS[key][0](raw, key)
                cfg.sources[key] = source
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def require(self, *keys):
        for key in keys:
            if self.values[key] is None:
                raise ConfigError(f"missing required setting {key!r} (flag --{key.replace('_', '-')})")

    def energy_params(self) -> EnergyParams:
        v = self.values
        return EnergyParams(
            lam=v["lambda"], beta=v["beta"], gamma=v["gamma"],
            lbp=LbpParams(v["tau"], v["lbp_p"], v["lbp_r"]),
            window=v["appearance_window"], likelihood_threshold=v["likelihood_threshold"],
            sign_mode=v["sign_mode"], bins=v["bins"], appearance_denominator=v["appearance_denominator"],
        )

    def diffusion_params(self) -> DiffusionParams:
        v = self.values
        return DiffusionParams(v["diffusion_iterations"], v["diffusion_time_step"], v["diffusion_conductance"])

    def network(self) -> cnn.NetworkSpec:
        full = self.values["network"] == "full"
        channels = self.values["channels"] or (cnn.FULL_CHANNELS if full else cnn.SCALED_CHANNELS)
        return cnn.table_network(channels, cnn.FULL_INPUT if full else cnn.SCALED_INPUT)

    def echo(self) -> dict:
        out = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}
        out.update({PHANTOM_PREFIX + k: v for k, v in self.phantom.items()})
        return out


# ---------------------------------------------------------------- provenance


def _data_files(path: Path) -> list[Path]:
    files = [path]
    if path.suffix.lower() == ".mhd":
        try:
            ref = read_key_values(path).get("ElementDataFile", "LOCAL")
        except ConfigError:
            ref = "LOCAL"
        if ref != "LOCAL":
            files.append(path.parent / ref)
    return files


def checksum(path) -> str:
    h = hashlib.sha256()
    for p in _data_files(Path(path)):
        try:
            h.update(p.read_bytes())
        except OSError as exc:
            raise DataError(f"cannot read {p}: {exc}") from exc
    return h.hexdigest()


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_provenance(path, command: str, cfg: PipelineConfig, inputs: dict, started: str,
                     grid: Volume | None = None, extra: dict | None = None) -> None:
    record = {
        "command": command,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "inputs": {k: {"path": str(p), "sha256": checksum(p)} for k, p in inputs.items() if p},
        "params": cfg.echo(),
        "sources": cfg.sources,
    }
    if grid is not None:
        record["dims"] = list(grid.dims)
        record["spacing"] = list(grid.spacing)
    if extra:
        record.update(extra)
    sidecar_path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def read_provenance(path) -> dict | None:
    p = sidecar_path(path)
    if not p.exists():
        return None
    try:
        return json.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable provenance {p}: {exc}") from exc


def _check_provenance_dims(path, vol: Volume) -> None:
    prov = read_provenance(path)
    if prov and "dims" in prov and tuple(prov["dims"]) != vol.dims:
        raise DataError(f"{path}: provenance dims {tuple(prov['dims'])} do not match file dims {vol.dims}")


def _output(cfg: PipelineConfig) -> Path:
    cfg.require("output")
    out = Path(cfg["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def preprocess_volume(vol: Volume, cfg: PipelineConfig) -> Volume:
    """resample (and optional slice pad/crop) -> window -> diffusion."""
    if cfg["resample"] is not None:
        vol = resample(vol, cfg["resample"])
    if cfg["slices"] is not None:
        vol = pad_crop_slices(vol, cfg["slices"])
    vol = window_normalize(vol, cfg["window_level"], cfg["window_width"])
    if cfg["diffusion"]:
        vol = anisotropic_diffusion(vol, cfg.diffusion_params())
    return vol


def cmd_preprocess(cfg: PipelineConfig) -> Path:
    started = _now()
    cfg.require("volume")
    out = _output(cfg)
    vol = preprocess_volume(load_volume(cfg["volume"]), cfg)
    save_volume(vol, out, "MET_FLOAT")
    write_provenance(out, "preprocess", cfg, {"volume": cfg["volume"]}, started, vol)
    log.info("wrote %s dims %s", out, vol.dims)
    return out


def _network_with_weights(cfg: PipelineConfig) -> cnn.NetworkSpec:
    net = cfg.network()
    chosen = [cfg["weights"] is not None, cfg["random_weights"], cfg["zero_weights"]]
    if sum(chosen) != 1:
        raise ConfigError("choose exactly one of --weights, --random-weights, --zero-weights")
    if cfg["weights"] is not None:
        return cnn.load_weights(net, cfg["weights"])
    if cfg["random_weights"]:
        return cnn.init_params(net, cfg["seed"], np.float32)
    return cnn.zero_params(net, np.float32)


def run_inference(cfg: PipelineConfig, vol: Volume):
    net = _network_with_weights(cfg)
    t0 = time.perf_counter()
    prob = cnn.predict(net, vol)
    log.info("inference: %.2fs", time.perf_counter() - t0)
    return prob


def cmd_infer(cfg: PipelineConfig) -> Path:
    started = _now()
    cfg.require("volume")
    out = _output(cfg)
    vol = load_volume(cfg["volume"])
    _check_provenance_dims(cfg["volume"], vol)
    prob = run_inference(cfg, vol)
    save_volume(prob, out, "MET_FLOAT")
    write_provenance(out, "infer", cfg, {"volume": cfg["volume"], "weights": cfg["weights"]}, started, prob)
    return out


def cmd_refine(cfg: PipelineConfig) -> Path:
    started = _now()
    cfg.require("volume")
    if (cfg["probability"] is None) == (cfg["weights"] is None and not cfg["random_weights"]
                                        and not cfg["zero_weights"]):
        raise ConfigError("configure exactly one probability source: --probability or network weights")
    out = _output(cfg)
    vol = load_volume(cfg["volume"])
    _check_provenance_dims(cfg["volume"], vol)
    if cfg["probability"] is not None:
        prob = load_probability(cfg["probability"])
        _check_provenance_dims(cfg["probability"], prob)
    else:
        prob = run_inference(cfg, vol)
    params = cfg.energy_params()
    result = refine(vol, prob, params)
    save_volume(result.mask, out)
    extra = {
        "energy": result.energy,
        "initial_energy": result.initial_energy,
        "flow": result.flow,
        "gamma": result.params.gamma,
        "intensity_range": [result.intensity_range.zeta, result.intensity_range.eta],
        "l0_voxels": result.l0.count,
        "mask_voxels": result.mask.count,
        "timings": result.timings,
    }
    inputs = {"volume": cfg["volume"], "probability": cfg["probability"], "weights": cfg["weights"]}
    write_provenance(out, "refine", cfg, inputs, started, result.mask, extra)
    log.info("energy %.6g, initial region %.6g; timings %s", result.energy, result.initial_energy,
             {k: round(v, 2) for k, v in result.timings.items()})
    return out


REPORT_COLUMNS = ("case", "voe", "rvd", "asd", "rmsd", "msd",
                  "score_voe", "score_rvd", "score_asd", "score_rmsd", "score_msd", "total",
                  "volume_ml", "truth_volume_ml")


def _cases(cfg: PipelineConfig, pairs, cases_file) -> list[tuple[str, str, str]]:
    cases = []
    if cases_file:
        try:
            lines = Path(cases_file).read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read cases file {cases_file}: {exc}") from exc
        for n, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].split()
            if not line:
                continue
            if len(line) != 3:
                raise ConfigError(f"{cases_file}:{n}: expected 'name result truth'")
            cases.append(tuple(line))
    for k, (res, tru) in enumerate(pairs or [], 1):
        cases.append((f"case{k:03d}", res, tru))
    if not cases and cfg["volume"] and cfg["truth"]:
        cases.append(("case001", cfg["volume"], cfg["truth"]))
    if not cases:
        raise ConfigError("no cases to evaluate; use --pair RESULT TRUTH or --cases FILE")
    return cases


def format_report(rows, stats: metrics.VolumeStats | None) -> str:
    lines = ["\t".join(REPORT_COLUMNS)]
    for name, rep, va, vm in rows:
        vals = (*rep.values(), *rep.scores, rep.total, va, vm)
        lines.append("\t".join([name] + [f"{v:.6f}" for v in vals]))
    lines.append("")
    if stats is None:
        lines.append("# volume statistics unavailable: need at least 3 cases with varying volumes")
    else:
        lines.append("# volume statistics (auto vs manual, ml)")
        for key in ("slope", "intercept", "r", "mean_difference", "loa_lower", "loa_upper", "cv"):
            lines.append(f"{key}\t{getattr(stats, key):.6f}")
    mean_total = sum(r[1].total for r in rows) / len(rows)
    lines.append(f"mean_total\t{mean_total:.6f}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: PipelineConfig, pairs=None, cases_file=None) -> Path:
    started = _now()
    out = _output(cfg)
    rows = []
    inputs = {}
    for name, res_path, truth_path in _cases(cfg, pairs, cases_file):
        res, truth = load_mask(res_path), load_mask(truth_path)
        for p, m in ((res_path, res), (truth_path, truth)):
            _check_provenance_dims(p, m)
        if res.dims != truth.dims:
            raise DataError(f"{name}: result dims {res.dims} differ from truth dims {truth.dims}")
        rep = metrics.evaluate(res, truth)
        rows.append((name, rep, metrics.mask_volume_ml(res), metrics.mask_volume_ml(truth)))
        inputs[f"{name}.result"] = res_path
        inputs[f"{name}.truth"] = truth_path
    stats = None
    if len(rows) >= 3:
        try:
            stats = metrics.volume_stats([(r[2], r[3]) for r in rows])
        except LivercutError as exc:
            log.warning("volume statistics skipped: %s", exc)
    out.write_text(format_report(rows, stats))
    write_provenance(out, "evaluate", cfg, inputs, started, extra={"cases": len(rows)})
    return out


def cmd_phantom(cfg: PipelineConfig) -> Path:
    started = _now()
    cfg.require("output")
    out_dir = Path(cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)
    items = dict(cfg.phantom)
    if cfg.sources["seed"] != "default" or "seed" not in items:
        items["seed"] = str(cfg["seed"])
    spec = PhantomSpec.from_mapping(items)
    vol, truth, prob = make_phantom(spec)
    for name, grid, etype in (("volume", vol, "MET_SHORT"), ("truth", truth, None), ("probability", prob, "MET_FLOAT")):
        path = out_dir / f"{name}.mhd"
        save_volume(grid, path, etype)
        write_provenance(path, "phantom", cfg, {}, started, grid)
    return out_dir


# ---------------------------------------------------------------- argparse


def _add(p, key, nargs=None, help=None, flag=None):
    p.add_argument(flag or "--" + key.replace("_", "-"), dest=key, nargs=nargs, default=None, help=help)


def _common(p):
    p.add_argument("--config", help="key = value config file (flags override it)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    _add(p, "output", help="output file (directory for phantom)")


def _energy_flags(p):
    _add(p, "lambda", help="data vs boundary weight (default 70)")
    _add(p, "beta", help="boundary contrast (default 0.2)")
    _add(p, "gamma", help="appearance weight, or 'auto' for sum of feature variances / 36")
    _add(p, "appearance_window", nargs=3, help="x y z window in voxels (default 9 9 5)")
    _add(p, "appearance_denominator", help=f"one of {DENOMINATORS}")
    _add(p, "tau")
    _add(p, "lbp_p")
    _add(p, "lbp_r")
    _add(p, "likelihood_threshold")
    _add(p, "sign_mode", help=f"one of {SIGN_MODES}")
    _add(p, "bins")


def _network_flags(p):
    _add(p, "weights", help="binary weight file")
    _add(p, "network", help="full (249x249x279 input) or scaled (25x25x31)")
    _add(p, "channels", nargs=11, help="channel counts of the 11 conv layers")
    p.add_argument("--random-weights", dest="random_weights", action="store_const", const="true", default=None)
    p.add_argument("--zero-weights", dest="zero_weights", action="store_const", const="true", default=None)
    _add(p, "seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="livercut", description="CNN likelihood + graph-cut liver segmentation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a synthetic volume, truth mask and likelihood map")
    _common(p)
    _add(p, "seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="phantom setting, e.g. --set noise_sigma=4")

    p = sub.add_parser("preprocess", help="resample, window and diffuse a volume")
    _common(p)
    _add(p, "volume")
    _add(p, "resample", nargs=3, help="target dims x y z")
    _add(p, "slices", help="pad/crop to this many z slices after resampling")
    _add(p, "window_level")
    _add(p, "window_width")
    p.add_argument("--no-diffusion", dest="diffusion", action="store_const", const="false", default=None)
    _add(p, "diffusion_iterations")
    _add(p, "diffusion_time_step")
    _add(p, "diffusion_conductance")

    p = sub.add_parser("infer", help="run the CNN on a preprocessed volume")
    _common(p)
    _add(p, "volume")
    _network_flags(p)

    p = sub.add_parser("refine", help="graph-cut refinement of a likelihood map")
    _common(p)
    _add(p, "volume")
    _add(p, "probability")
    _network_flags(p)
    _energy_flags(p)

    p = sub.add_parser("evaluate", help="accuracy metrics and volume statistics")
    _common(p)
    p.add_argument("--pair", nargs=2, action="append", metavar=("RESULT", "TRUTH"))
    p.add_argument("--cases", help="file with lines 'name result truth'")
    _add(p, "volume", flag="--result", help="single result mask")
    _add(p, "truth")
    return parser


def _cli_items(args) -> dict[str, str]:
    items = {}
    for key, value in vars(args).items():
        if key in KEYS and value is not None:
            items[key] = " ".join(value) if isinstance(value, list) else str(value)
    for entry in getattr(args, "set", []):
        if "=" not in entry:
            raise ConfigError(f"--set expects KEY=VALUE, got {entry!r}")
        k, v = entry.split("=", 1)
        items[PHANTOM_PREFIX + k.strip()] = v.strip()
    return items


COMMANDS = {
    "phantom": cmd_phantom,
    "preprocess": cmd_preprocess,
    "infer": cmd_infer,
    "refine": cmd_refine,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_items = read_key_values(args.config) if args.config else {}
        cfg = PipelineConfig.build(file_items, _cli_items(args))
        if args.command == "evaluate":
            out = cmd_evaluate(cfg, args.pair, args.cases)
        else:
            out = COMMANDS[args.command](cfg)
    except EmptyRegionError as exc:
        print(f"livercut: empty initial region: {exc}", file=sys.stderr)
        return exc.exit_code
    except LivercutError as exc:
        print(f"livercut: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
