"""Volumetric grid types, MetaImage I/O, resampling, windowing and phantoms.

Layout convention used throughout the package: ``data`` is a C-ordered numpy
array indexed ``[z, y, x]``, so x varies fastest in memory (the MetaImage raw
order). ``dims`` and ``spacing`` are always reported in ``(x, y, z)`` order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import as_floats, as_ints, read_key_values
from .errors import ConfigError, DataError

Triple = tuple[float, float, float]

ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("u1"),
    "MET_SHORT": np.dtype("i2"),
    "MET_FLOAT": np.dtype("f4"),
    "MET_DOUBLE": np.dtype("f8"),
}


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class Volume:
    """Scalar image on a regular grid.

    Attributes:
        data: array of shape ``(nz, ny, nx)``.
        spacing: voxel size in mm as ``(sx, sy, sz)``.
    """

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DataError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise DataError(f"spacing must be 3 positive numbers, got {self.spacing}")
        object.__setattr__(self, "data", _readonly(self._coerce(data)))
        object.__setattr__(self, "spacing", spacing)

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        return data

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume(self) -> float:
        """Voxel volume in mm^3."""
        return float(np.prod(self.spacing))

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing)


class LabelMask(Volume):
    """Binary mask; values are exactly 0 or 1, stored as uint8."""

    def _coerce(self, data):
        if data.dtype == bool:
            return data.astype(np.uint8)
        if not np.isin(data, (0, 1)).all():
            raise DataError("label mask values must be 0 or 1")
        return data.astype(np.uint8, copy=False)

    def with_data(self, data):
        return LabelMask(data, self.spacing)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))


class ProbabilityMap(Volume):
    """Per-voxel likelihood in [0, 1], stored as float64."""

    def _coerce(self, data):
        data = data.astype(np.float64, copy=False)
        if not np.isfinite(data).all() or data.min() < 0.0 or data.max() > 1.0:
            raise DataError("probability map values must lie in [0, 1]")
        return data

    def with_data(self, data):
        return ProbabilityMap(data, self.spacing)


def check_aligned(*grids: Volume) -> None:
    """Raise DataError unless all grids share dims and spacing."""
    first = grids[0]
    for g in grids[1:]:
        if g.dims != first.dims:
            raise DataError(f"grid dims differ: {first.dims} vs {g.dims}")
        if not np.allclose(g.spacing, first.spacing, rtol=1e-6, atol=0):
            raise DataError(f"grid spacing differs: {first.spacing} vs {g.spacing}")


# --------------------------------------------------------------------------
# MetaImage subset
# --------------------------------------------------------------------------

def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1"):
        return True
    if v in ("false", "0"):
        return False
    raise DataError(f"{key}: expected True/False, got {value!r}")


def read_metaimage(path: str | os.PathLike) -> tuple[np.ndarray, Triple]:
    """Read a 3D MetaImage header plus raw data; returns (array [z,y,x], spacing)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    raw = path.read_bytes()
    header: dict[str, str] = {}
    offset = 0
    # The header is text lines up to and including ElementDataFile.
    for line in raw.split(b"\n"):
        offset += len(line) + 1
        text = line.decode("ascii", errors="replace").strip()
        if not text:
            continue
        if "=" not in text:
            raise DataError(f"{path}: malformed header line {text!r}")
        k, v = text.split("=", 1)
        header[k.strip()] = v.strip()
        if k.strip() == "ElementDataFile":
            break
    else:
        raise DataError(f"{path}: header has no ElementDataFile entry")

    try:
        ndims = int(header.get("NDims", "3"))
        dims = tuple(int(x) for x in header["DimSize"].split())
        spacing = tuple(float(x) for x in header.get("ElementSpacing", "1 1 1").split())
        etype = header["ElementType"]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed header ({exc})") from exc
    if ndims != 3 or len(dims) != 3 or len(spacing) != 3:
        raise DataError(f"{path}: only 3D images are supported")
    if min(dims) < 1:
        raise DataError(f"{path}: DimSize must be positive, got {dims}")
    if etype not in ELEMENT_TYPES:
        raise DataError(f"{path}: unsupported ElementType {etype}")
    if header.get("CompressedData", "False").lower() == "true":
        raise DataError(f"{path}: compressed data is not supported")
    msb_key = "ElementByteOrderMSB" if "ElementByteOrderMSB" in header else "BinaryDataByteOrderMSB"
    msb = _parse_bool(header.get(msb_key, "False"), msb_key)

    dtype = ELEMENT_TYPES[etype].newbyteorder(">" if msb else "<")
    datafile = header["ElementDataFile"]
    if datafile == "LOCAL":
        payload = raw[offset:]
    else:
        dpath = path.parent / datafile
        if not dpath.is_file():
            raise DataError(f"{path}: data file {dpath} not found")
        payload = dpath.read_bytes()
    n = dims[0] * dims[1] * dims[2]
    if len(payload) != n * dtype.itemsize:
        raise DataError(
            f"{path}: data length mismatch, expected {n} elements "
            f"({n * dtype.itemsize} bytes), found {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    return arr.reshape(dims[2], dims[1], dims[0]), spacing


def load_volume(path: str | os.PathLike) -> Volume:
    """Load a MetaImage file as a float64 Volume."""
    arr, spacing = read_metaimage(path)
    return Volume(arr.astype(np.float64), spacing)


def load_mask(path: str | os.PathLike) -> LabelMask:
    arr, spacing = read_metaimage(path)
    try:
        return LabelMask(arr, spacing)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_probability(path: str | os.PathLike) -> ProbabilityMap:
    arr, spacing = read_metaimage(path)
    try:
        return ProbabilityMap(arr, spacing)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _default_element_type(vol: Volume) -> str:
    if isinstance(vol, LabelMask):
        return "MET_UCHAR"
    for name, dt in ELEMENT_TYPES.items():
        if vol.data.dtype == dt:
            return name
    return "MET_DOUBLE"


def save_volume(vol: Volume, path: str | os.PathLike, element_type: str | None = None) -> None:
    """Write ``<path>`` (header) and ``<stem>.raw`` (little-endian data).

    ``element_type`` defaults to the type matching ``vol.data.dtype``
    (MET_UCHAR for masks), so the write is lossless unless a narrower type is
    requested explicitly. Float data written to an integer type is rounded.
    """
    if not isinstance(vol, Volume):
        raise DataError("save_volume expects a Volume")
    if min(vol.data.shape) < 1:
        raise DataError("refusing to write an empty volume")
    element_type = element_type or _default_element_type(vol)
    if element_type not in ELEMENT_TYPES:
        raise DataError(f"unsupported ElementType {element_type}")
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    dtype = ELEMENT_TYPES[element_type].newbyteorder("<")
    data = np.ascontiguousarray(vol.data)
    if np.issubdtype(dtype, np.integer):
        if np.issubdtype(data.dtype, np.floating):
            data = np.rint(data)
        info = np.iinfo(dtype)
        if data.size and (data.min() < info.min or data.max() > info.max):
            raise DataError(f"values out of range for {element_type}")
    nx, ny, nz = vol.dims
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        "ElementByteOrderMSB = False\n"
        "CompressedData = False\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementSpacing = {' '.join(repr(float(s)) for s in vol.spacing)}\n"
        f"ElementType = {element_type}\n"
        f"ElementDataFile = {raw_path.name}\n"
    )
    try:
        raw_path.write_bytes(data.astype(dtype).tobytes())
        path.write_text(header)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Resampling and windowing
# --------------------------------------------------------------------------

def _interp_axis(data: np.ndarray, pos: np.ndarray, axis: int) -> np.ndarray:
    n = data.shape[axis]
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w = pos - i0
    shape = [1, 1, 1]
    shape[axis] = -1
    w = w.reshape(shape)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    return a + (b - a) * w


def resample(vol: Volume, target_dims: tuple[int, int, int]) -> Volume:
    """Trilinear resampling to ``target_dims`` (x, y, z).

    Sample grids are cell-centred: output voxel i along an axis with n input
    and m output voxels samples input coordinate ``(i + 0.5) * n / m - 0.5``,
    clamped to the input range. Spacing becomes ``spacing * n / m`` so the
    physical extent is unchanged.
    """
    target = tuple(int(t) for t in target_dims)
    if len(target) != 3 or min(target) < 2:
        raise DataError(f"target dims must be 3 integers >= 2, got {target_dims}")
    if min(vol.dims) < 2:
        raise DataError(f"cannot interpolate a degenerate volume with dims {vol.dims}")
    out = vol.data.astype(np.float64)
    spacing = list(vol.spacing)
    # dims are (x, y, z); array axes are (z, y, x)
    for k, m in enumerate(target):
        axis = 2 - k
        n = vol.dims[k]
        if m != n:
            pos = (np.arange(m) + 0.5) * (n / m) - 0.5
            out = _interp_axis(out, pos, axis)
        spacing[k] = vol.spacing[k] * n / m
    return Volume(out, tuple(spacing))


def pad_crop_slices(vol: Volume, n_slices: int, fill: float | None = None) -> Volume:
    """Pad or crop along z (centred) to exactly ``n_slices`` slices.

    Stand-in for appending/deleting slices outside the organ; padding uses
    ``fill`` or the volume minimum.
    """
    if n_slices < 1:
        raise DataError("n_slices must be positive")
    nz = vol.data.shape[0]
    data = vol.data
    if n_slices < nz:
        start = (nz - n_slices) // 2
        data = data[start:start + n_slices]
    elif n_slices > nz:
        before = (n_slices - nz) // 2
        value = float(data.min()) if fill is None else fill
        data = np.pad(data, ((before, n_slices - nz - before), (0, 0), (0, 0)),
                      constant_values=value)
    return vol.with_data(np.array(data))


def window_normalize(vol: Volume, level: float = 40.0, width: float = 400.0) -> Volume:
    """Map [level - width/2, level + width/2] affinely onto [-128, 128], clamping outside."""
    if not width > 0:
        raise ConfigError(f"window width must be positive, got {width}")
    lo = level - width / 2.0
    out = (vol.data.astype(np.float64) - lo) * (256.0 / width) - 128.0
    return Volume(np.clip(out, -128.0, 128.0), vol.spacing)


def sample_shifted(data: np.ndarray, offset: tuple[float, float, float]) -> np.ndarray:
    """Value at ``index + offset`` for every voxel, trilinear with clamped coordinates.

    ``offset`` is ``(dx, dy, dz)`` in voxels. Integer offsets reduce to a
    clamped shift.
    """
    out = np.asarray(data, dtype=np.float64)
    for k, d in enumerate(offset):
        if d == 0:
            continue
        axis = 2 - k
        n = out.shape[axis]
        pos = np.arange(n) + float(d)
        if float(d).is_integer():
            idx = np.clip(pos.astype(np.intp), 0, n - 1)
            out = np.take(out, idx, axis=axis)
        else:
            out = _interp_axis(out, pos, axis)
    return out


# --------------------------------------------------------------------------
# Synthetic phantom
# --------------------------------------------------------------------------

@dataclass
class PhantomSpec:
    """Ellipsoid "liver" in noisy background, optionally with a textured confounder.

    Centres and radii are in voxel units, ordered (x, y, z).
    """

    dims: tuple[int, int, int] = (128, 128, 128)
    spacing: Triple = (1.0, 1.0, 1.0)
    center: Triple = (64.0, 64.0, 64.0)
    radii: Triple = (40.0, 30.0, 25.0)
    liver_mean: float = 120.0
    background_mean: float = 0.0
    noise_sigma: float = 8.0
    blur_sigma: float = 2.0
    seed: int = 0
    confounder_center: Triple | None = None
    confounder_radii: Triple | None = None
    confounder_mean: float | None = None
    confounder_texture: float = 20.0

    @classmethod
    def from_mapping(cls, items: dict[str, str]) -> "PhantomSpec":
        kw: dict[str, object] = {}
        triples = ("spacing", "center", "radii", "confounder_center", "confounder_radii")
        scalars = ("liver_mean", "background_mean", "noise_sigma", "blur_sigma",
                   "confounder_mean", "confounder_texture")
        for key, value in items.items():
            if key == "dims":
                kw[key] = as_ints(value, 3, key)
            elif key in triples:
                kw[key] = as_floats(value, 3, key)
            elif key in scalars:
                kw[key] = as_floats(value, 1, key)[0]
            elif key == "seed":
                kw[key] = as_ints(value, 1, key)[0]
            else:
                raise ConfigError(f"unknown phantom key {key!r}")
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "PhantomSpec":
        return cls.from_mapping(read_key_values(path))


def _ellipsoid(dims, center, radii) -> np.ndarray:
    nx, ny, nz = dims
    z, y, x = np.ogrid[:nz, :ny, :nx]
    cx, cy, cz = center
    ax, by, cz_r = radii
    return (((x - cx) / ax) ** 2 + ((y - cy) / by) ** 2 + ((z - cz) / cz_r) ** 2) <= 1.0


def _check_contained(dims, center, radii, what):
    if any(r <= 0 for r in radii):
        raise DataError(f"{what} radii must be positive")
    for c, r, n in zip(center, radii, dims):
        if c - r < 0 or c + r > n - 1:
            raise DataError(f"{what} (center {center}, radii {radii}) not contained in grid {dims}")


def make_phantom(spec: PhantomSpec) -> tuple[Volume, LabelMask, ProbabilityMap]:
    """Build (intensity volume, ground-truth mask, likelihood map).

    The likelihood map is the Gaussian-blurred mask rescaled to [0, 1]. Voxels
    whose blurred value falls on the wrong side of 0.5 (high-curvature spots)
    are nudged to 0.5 or just below it, so thresholding the map at 0.5
    recovers the mask exactly.
    """
    dims = tuple(int(d) for d in spec.dims)
    if len(dims) != 3 or min(dims) < 1:
        raise DataError(f"invalid phantom dims {spec.dims}")
    _check_contained(dims, spec.center, spec.radii, "liver ellipsoid")
    rng = np.random.default_rng(spec.seed)

    truth = _ellipsoid(dims, spec.center, spec.radii)
    image = np.where(truth, spec.liver_mean, spec.background_mean).astype(np.float64)

    if spec.confounder_center is not None:
        radii = spec.confounder_radii or spec.radii
        _check_contained(dims, spec.confounder_center, radii, "confounder")
        blob = _ellipsoid(dims, spec.confounder_center, radii) & ~truth
        mean = spec.liver_mean if spec.confounder_mean is None else spec.confounder_mean
        z, y, x = np.indices(truth.shape)
        checker = np.where((x + y + z) % 2 == 0, 1.0, -1.0)
        image[blob] = mean + spec.confounder_texture * checker[blob]

    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, size=image.shape)

    prob = ndimage.gaussian_filter(truth.astype(np.float64), spec.blur_sigma) if spec.blur_sigma > 0 \
        else truth.astype(np.float64)
    lo, hi = prob.min(), prob.max()
    prob = (prob - lo) / (hi - lo) if hi > lo else truth.astype(np.float64)
    prob[truth & (prob < 0.5)] = 0.5
    prob[~truth & (prob >= 0.5)] = np.nextafter(0.5, 0.0)

    return (Volume(image, spec.spacing), LabelMask(truth, spec.spacing),
            ProbabilityMap(prob, spec.spacing))
