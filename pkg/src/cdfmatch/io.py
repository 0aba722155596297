"""Volume and artifact I/O: raw volumes, CSV/JSON artifacts, SVG plots,
and seeded synthetic volume generation.

All emissions are byte-deterministic: no timestamps, fixed float formatting,
fixed palettes.  Volumes use a custom raw + JSON-sidecar format so files stay
bit-exact and dependency-free.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .cdf import EmpiricalCdf, Volume
from .errors import (BadSpec, EmptyInput, HeaderMismatch, IoError, Overflow,
                     SchemaMismatch)
from .transform import IntensityLut

LUT_SCHEMA_VERSION = 1

_DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "i16": np.dtype("<i2"),
    "f32": np.dtype("<f4"),
}

_CDF_CSV_HEADER = "intensity,cumulative_probability"


def _header_path(path) -> Path:
    return Path(str(path) + ".json")


def write_volume(vol: Volume, path, dtype: str = "f32", clamp: bool = False) -> Path:
    """Write voxels as a little-endian raw payload plus a JSON header sidecar.

    Integer dtypes round to the nearest integer first.  Values outside the
    target dtype raise Overflow unless ``clamp`` is set, in which case they
    are clamped with a warning.
    """
    if dtype not in _DTYPES:
        raise ValueError(f"unknown dtype {dtype!r}, expected one of {sorted(_DTYPES)}")
    dt = _DTYPES[dtype]
    vox = vol.voxels
    if dt.kind in "ui":
        info = np.iinfo(dt)
        data = np.rint(vox)
        if data.min() < info.min or data.max() > info.max:
            if not clamp:
                raise Overflow(
                    f"values [{vox.min():.6g}, {vox.max():.6g}] do not fit {dtype}")
            warnings.warn(f"clamping voxels into the {dtype} range "
                          f"[{info.min}, {info.max}]", stacklevel=2)
            data = np.clip(data, info.min, info.max)
    else:
        limit = float(np.finfo(dt).max)
        data = vox
        if np.abs(vox).max() > limit:
            if not clamp:
                raise Overflow(f"values exceed the {dtype} range (+/-{limit:.4g})")
            warnings.warn(f"clamping voxels into the {dtype} range", stacklevel=2)
            data = np.clip(vox, -limit, limit)
    payload = data.astype(dt)
    header = {"dims": list(vol.dims), "dtype": dtype, "channel": vol.channel,
              "background_value": vol.background_value, "endianness": "little"}
    path = Path(path)
    try:
        _header_path(path).write_text(json.dumps(header, sort_keys=True) + "\n")
        payload.tofile(path)
    except OSError as exc:
        raise IoError(f"cannot write volume to {path}: {exc}") from exc
    return path


def read_volume(path) -> Volume:
    """Read a volume written by :func:`write_volume`.

    The header is validated before any payload byte is interpreted; a payload
    whose length disagrees with the header raises HeaderMismatch.
    """
    path = Path(path)
    try:
        text = _header_path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read volume header for {path}: {exc}") from exc
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HeaderMismatch(f"volume header for {path} is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderMismatch(f"volume header for {path} must be a JSON object")

    dims = header.get("dims")
    if (not isinstance(dims, list) or len(dims) != 3
            or any(not isinstance(d, int) or d < 1 for d in dims)):
        raise HeaderMismatch(f"bad dims in header: {dims!r}")
    dtype = header.get("dtype")
    if dtype not in _DTYPES:
        raise HeaderMismatch(f"unsupported dtype in header: {dtype!r}")
    if header.get("endianness") != "little":
        raise HeaderMismatch(f"unsupported endianness: {header.get('endianness')!r}")
    background = header.get("background_value", 0.0)
    if not isinstance(background, (int, float)):
        raise HeaderMismatch(f"bad background_value: {background!r}")
    channel = header.get("channel", "")
    if not isinstance(channel, str):
        raise HeaderMismatch(f"bad channel label: {channel!r}")

    dt = _DTYPES[dtype]
    expected = dims[0] * dims[1] * dims[2] * dt.itemsize
    try:
        actual = os.path.getsize(path)
    except OSError as exc:
        raise IoError(f"cannot read volume payload {path}: {exc}") from exc
    if actual != expected:
        raise HeaderMismatch(
            f"payload is {actual} bytes but the header implies {expected}")
    data = np.fromfile(path, dtype=dt).astype(np.float64)
    return Volume(tuple(dims), data, channel=channel, background_value=float(background))


# ---------------------------------------------------------------------------
# synthetic volumes


@dataclass(frozen=True)
class MixtureComponent:
    """One base-distribution component.

    For ``lognormal`` the parameters are the mean/std of the underlying
    normal; for ``gaussian`` they are the mean/std of the values themselves.
    """

    kind: str
    weight: float
    loc: float
    scale: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weight": self.weight,
                "loc": self.loc, "scale": self.scale}


@dataclass(frozen=True)
class ScannerEffect:
    """Per-scanner distortion: x -> gain * x**gamma + offset.

    ``tail_weight`` multiplies the weight of the last mixture component
    (by convention, the heavy-tail one) before sampling.
    """

    gain: float = 1.0
    offset: float = 0.0
    gamma: float = 1.0
    tail_weight: float = 1.0

    def to_dict(self) -> dict:
        return {"gain": self.gain, "offset": self.offset,
                "gamma": self.gamma, "tail_weight": self.tail_weight}


@dataclass(frozen=True)
class LesionSpec:
    """Spherical high-intensity blobs: how many, how bright, how big."""

    count: int = 0
    boost: float = 1.0
    volume_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {"count": self.count, "boost": self.boost,
                "volume_fraction": self.volume_fraction}


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a reproducible synthetic volume."""

    components: tuple
    dims: tuple[int, int, int] = (24, 24, 24)
    scanner: ScannerEffect = field(default_factory=ScannerEffect)
    lesions: LesionSpec = field(default_factory=LesionSpec)
    background_fraction: float = 0.0
    channel: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise BadSpec("at least one mixture component is required")
        for c in comps:
            if c.kind not in ("lognormal", "gaussian"):
                raise BadSpec(f"unknown component kind {c.kind!r}")
            if c.weight <= 0.0 or c.scale <= 0.0:
                raise BadSpec("component weights and scales must be positive")
        if abs(sum(c.weight for c in comps) - 1.0) > 1e-9:
            raise BadSpec("component weights must sum to 1")
        object.__setattr__(self, "components", comps)
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise BadSpec(f"dims must be three positive integers, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)
        if self.scanner.gain <= 0.0 or self.scanner.gamma <= 0.0:
            raise BadSpec("scanner gain and gamma must be positive")
        if self.scanner.tail_weight <= 0.0:
            raise BadSpec("tail_weight must be positive")
        if self.lesions.count < 0 or self.lesions.boost <= 0.0:
            raise BadSpec("lesion count must be >= 0 and boost positive")
        if not 0.0 <= self.lesions.volume_fraction < 1.0:
            raise BadSpec("lesion volume fraction must lie in [0, 1)")
        if not 0.0 <= self.background_fraction < 1.0:
            raise BadSpec("background fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components],
                "dims": list(self.dims),
                "scanner": self.scanner.to_dict(),
                "lesions": self.lesions.to_dict(),
                "background_fraction": self.background_fraction,
                "channel": self.channel,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        try:
            comps = tuple(MixtureComponent(**c) for c in doc["components"])
            return cls(components=comps,
                       dims=tuple(doc.get("dims", (24, 24, 24))),
                       scanner=ScannerEffect(**doc.get("scanner", {})),
                       lesions=LesionSpec(**doc.get("lesions", {})),
                       background_fraction=doc.get("background_fraction", 0.0),
                       channel=doc.get("channel", "synthetic"),
                       seed=int(doc.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise BadSpec(f"malformed synthetic spec: {exc}") from exc


def generate_synthetic(spec: SynthSpec) -> Volume:
    """Sample the base mixture, inject lesion blobs, apply the scanner effect.

    Bitwise reproducible for a fixed seed.  Two specs differing only in the
    scanner gain/offset consume identical random streams, so their voxels
    are exact affine images of each other.
    """
    rng = np.random.default_rng(spec.seed)
    nx, ny, nz = spec.dims
    n = nx * ny * nz

    weights = np.array([c.weight for c in spec.components], dtype=np.float64)
    weights[-1] *= spec.scanner.tail_weight
    weights /= weights.sum()
    assignment = rng.choice(len(spec.components), size=n, p=weights)
    x = np.zeros(n, dtype=np.float64)
    for i, comp in enumerate(spec.components):
        mask = assignment == i
        k = int(mask.sum())
        if comp.kind == "lognormal":
            x[mask] = rng.lognormal(comp.loc, comp.scale, k)
        else:
            x[mask] = rng.normal(comp.loc, comp.scale, k)

    lesions = spec.lesions
    if lesions.count > 0 and lesions.volume_fraction > 0.0:
        radius = ((3.0 * lesions.volume_fraction * n)
                  / (4.0 * math.pi * lesions.count)) ** (1.0 / 3.0)
        centers = rng.uniform(low=0.0, high=[nx, ny, nz], size=(lesions.count, 3))
        idx = np.arange(n)
        pts = np.stack([idx % nx, (idx // nx) % ny, idx // (nx * ny)], axis=1) + 0.5
        blob = np.zeros(n, dtype=bool)
        for center in centers:
            blob |= ((pts - center) ** 2).sum(axis=1) <= radius * radius
        x[blob] *= lesions.boost

    x = np.maximum(x, 0.0)  # the gamma warp needs non-negative input
    sc = spec.scanner
    x = sc.gain * np.power(x, sc.gamma) + sc.offset
    if spec.background_fraction > 0.0:
        k = int(round(spec.background_fraction * n))
        x[:k] = 0.0
    return Volume(spec.dims, x, channel=spec.channel, background_value=0.0)


# ---------------------------------------------------------------------------
# CSV and JSON artifacts


def write_cdf_csv(cdf: EmpiricalCdf, path) -> Path:
    """Write a CDF as two-column CSV (intensity, cumulative_probability)."""
    path = Path(path)
    lines = [_CDF_CSV_HEADER]
    lines.extend(f"{float(x)!r},{float(p)!r}" for x, p in zip(cdf.xs, cdf.ps))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write CDF CSV to {path}: {exc}") from exc
    return path


def read_cdf_csv(path) -> EmpiricalCdf:
    """Read a CDF written by :func:`write_cdf_csv` (sample count is lost)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read CDF CSV from {path}: {exc}") from exc
    if not lines or lines[0].strip() != _CDF_CSV_HEADER:
        raise SchemaMismatch(f"{path} is not a CDF CSV (bad header)")
    xs, ps = [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        sx, sp = line.split(",")
        xs.append(float(sx))
        ps.append(float(sp))
    return EmpiricalCdf(np.array(xs), np.array(ps), n_samples=0)


def save_lut(lut: IntensityLut, path) -> Path:
    """Write a composed mapping as JSON for audit and later inspection."""
    path = Path(path)
    doc = {"version": LUT_SCHEMA_VERSION, **lut.to_dict()}
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write LUT to {path}: {exc}") from exc
    return path


def load_lut(path) -> IntensityLut:
    """Read a mapping written by :func:`save_lut`."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read LUT from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not a LUT JSON file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != LUT_SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported LUT schema in {path}")
    return IntensityLut.from_dict(doc)


# ---------------------------------------------------------------------------
# SVG emission

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78")

_DEFAULT_STYLE = {"width": 720, "height": 480, "title": "",
                  "x_label": "intensity", "y_label": "cumulative probability"}


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def _render_line_svg(series, style: dict, markers=()) -> str:
    """Render labeled (xs, ys) series as a standalone SVG line chart."""
    s = dict(_DEFAULT_STYLE)
    s.update(style or {})
    width, height = int(s["width"]), int(s["height"])
    ml, mr, mt, mb = 72, 16, 40, 48
    pw, ph = width - ml - mr, height - mt - mb

    x_lo = min(float(xs[0]) for _, xs, _ in series)
    x_hi = max(float(xs[-1]) for _, xs, _ in series)
    y_lo = min(float(np.min(ys)) for _, _, ys in series)
    y_hi = max(float(np.max(ys)) for _, _, ys in series)
    if markers:
        x_lo = min([x_lo] + [m[0] for m in markers])
        x_hi = max([x_hi] + [m[0] for m in markers])
        y_lo = min([y_lo] + [m[1] for m in markers])
        y_hi = max([y_hi] + [m[1] for m in markers])
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def px(x: float) -> float:
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if s["title"]:
        parts.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{escape(str(s["title"]))}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="#333333" stroke-width="1"/>')
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(tx):.2f}" y1="{mt + ph}" x2="{px(tx):.2f}" '
                     f'y2="{mt + ph + 4}" stroke="#333333"/>')
        parts.append(f'<text x="{px(tx):.2f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{tx:.6g}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{ml - 4}" y1="{py(ty):.2f}" x2="{ml}" '
                     f'y2="{py(ty):.2f}" stroke="#333333"/>')
        parts.append(f'<text x="{ml - 8}" y="{py(ty) + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{ty:.6g}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{escape(str(s["x_label"]))}</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(str(s["y_label"]))}</text>')

    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}"
                          for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                     f'points="{points}"><title>{escape(str(label))}</title></polyline>')
    for mx, my, mlabel in markers:
        parts.append(f'<circle cx="{px(mx):.2f}" cy="{py(my):.2f}" r="3.5" '
                     f'fill="#000000"/>')
        parts.append(f'<text x="{px(mx) + 6:.2f}" y="{py(my) - 6:.2f}" '
                     f'font-family="sans-serif" font-size="11">{escape(str(mlabel))}</text>')
    for i, (label, _, _) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        ly = mt + 14 + 16 * i
        parts.append(f'<line x1="{ml + pw - 130}" y1="{ly - 4}" x2="{ml + pw - 106}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw - 100}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _companion_csv_path(path) -> Path:
    return Path(str(path) + ".csv")


def emit_cdf_plot(cdfs, path, style: dict | None = None, markers=()) -> Path:
    """Write labeled CDF curves as a standalone SVG plus a companion CSV.

    ``cdfs`` is a sequence of (label, EmpiricalCdf); ``markers`` is an
    optional sequence of (intensity, probability, label) dots.  Emission is
    byte-deterministic for identical inputs.
    """
    cdfs = list(cdfs)
    if not cdfs:
        raise EmptyInput("no curves to plot")
    series = [(label, cdf.xs, cdf.ps) for label, cdf in cdfs]
    svg = _render_line_svg(series, style or {}, markers=markers)
    path = Path(path)
    csv_path = _companion_csv_path(path)
    try:
        path.write_text(svg)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label", "intensity", "cumulative_probability"])
            for label, cdf in cdfs:
                for x, p in zip(cdf.xs, cdf.ps):
                    writer.writerow([label, repr(float(x)), repr(float(p))])
    except OSError as exc:
        raise IoError(f"cannot write plot to {path}: {exc}") from exc
    return path


def emit_lut_plot(lut: IntensityLut, path, points: int = 512,
                  style: dict | None = None) -> Path:
    """Write a LUT mapping as an SVG line plot plus an (input, output) CSV."""
    if points < 2:
        raise ValueError("need at least two sample points")
    xs = np.linspace(lut.domain[0], lut.domain[1], points)
    ys = np.asarray(lut.apply(xs))
    s = {"y_label": "mapped intensity", "x_label": "input intensity"}
    s.update(style or {})
    svg = _render_line_svg([("mapping", xs, ys)], s)
    path = Path(path)
    csv_path = _companion_csv_path(path)
    try:
        path.write_text(svg)
        lines = ["input,output"]
        lines.extend(f"{float(x)!r},{float(y)!r}" for x, y in zip(xs, ys))
        csv_path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write LUT plot to {path}: {exc}") from exc
    return path
