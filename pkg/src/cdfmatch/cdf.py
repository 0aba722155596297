"""Empirical CDF estimation, standardization, averaging, and queries.

CDFs are stored as sampled piecewise-linear curves: a strictly increasing
intensity grid ``xs`` with cumulative probabilities ``ps``.  Linear
interpolation keeps the forward evaluation and the quantile function
closed-form, monotone, and mutually inverse on the grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllBackground, DegenerateConstant, EmptyInput, OutOfRange

DEFAULT_GRID_SIZE = 1024


def _readonly(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype).ravel()
    arr.flags.writeable = False
    return arr


def _match_scalar(out: np.ndarray, like) -> "float | np.ndarray":
    if np.isscalar(like) or np.ndim(like) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Volume:
    """Scalar 2D/3D image with a reserved background value.

    Voxels are stored flat in x-fastest order; ``dims`` is (nx, ny, nz)
    with nz = 1 for 2D images.  Instances are immutable and safe to share.
    """

    dims: tuple[int, int, int]
    voxels: np.ndarray
    channel: str = ""
    background_value: float = 0.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims!r}")
        vox = _readonly(self.voxels)
        n = dims[0] * dims[1] * dims[2]
        if vox.size != n:
            raise ValueError(f"expected {n} voxels for dims {dims}, got {vox.size}")
        if not np.isfinite(vox).all():
            raise ValueError("voxels must be finite (no NaN/Inf)")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "background_value", float(self.background_value))

    @property
    def n_voxels(self) -> int:
        return self.voxels.size

    def foreground(self) -> np.ndarray:
        """Voxel values that differ from the background value."""
        return self.voxels[self.voxels != self.background_value]

    def with_voxels(self, voxels) -> "Volume":
        """Copy of this volume with the same geometry but new voxel values."""
        return Volume(self.dims, voxels, self.channel, self.background_value)


@dataclass(frozen=True)
class EmpiricalCdf:
    """Monotone sampled CDF of one image or channel.

    ``xs`` is strictly increasing, ``ps`` is non-decreasing with the last
    entry exactly 1; ``n_samples`` records how many foreground voxels the
    curve was estimated from (0 when unknown, e.g. after CSV import).
    """

    xs: np.ndarray
    ps: np.ndarray
    n_samples: int = 0

    def __post_init__(self):
        xs = _readonly(self.xs)
        ps = _readonly(self.ps)
        if xs.size < 2:
            raise ValueError("a CDF needs at least two grid points")
        if ps.shape != xs.shape:
            raise ValueError("xs and ps must have the same length")
        if not (np.diff(xs) > 0).all():
            raise ValueError("xs must be strictly increasing")
        if (np.diff(ps) < 0).any():
            raise ValueError("ps must be non-decreasing")
        if ps[0] < 0.0:
            raise ValueError("probabilities must be non-negative")
        if abs(ps[-1] - 1.0) > 1e-12:
            raise ValueError(f"last probability must equal 1, got {ps[-1]!r}")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ps", ps)
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.xs[0]), float(self.xs[-1])


def build_cdf(vol: Volume, exclude_background: bool = True,
              grid_size: int = DEFAULT_GRID_SIZE) -> EmpiricalCdf:
    """Estimate the empirical CDF of a volume by sorted-rank interpolation.

    Repeated intensities get averaged ranks, so the curve is well defined on
    heavily quantized inputs; the probability at the maximum is pinned to 1.
    The curve is sampled on a uniform grid of ``grid_size`` points spanning
    the included intensity range.  Deterministic for identical input.

    Raises AllBackground when exclusion empties the volume and
    DegenerateConstant when fewer than two distinct intensities remain.
    """
    if grid_size < 2:
        raise ValueError(f"grid_size must be at least 2, got {grid_size}")
    values = vol.foreground() if exclude_background else vol.voxels
    if values.size == 0:
        raise AllBackground("every voxel equals the background value")
    distinct, counts = np.unique(values, return_counts=True)
    if distinct.size < 2:
        raise DegenerateConstant(f"single distinct intensity {distinct[0]!r}")
    n = values.size
    cum = np.cumsum(counts)
    p = (cum - (counts - 1) / 2.0) / n
    p[-1] = 1.0
    xs = np.linspace(distinct[0], distinct[-1], grid_size)
    ps = np.interp(xs, distinct, p)
    ps = np.maximum.accumulate(ps)
    ps = ps / ps[-1]
    return EmpiricalCdf(xs, ps, n_samples=int(n))


def quantile(cdf: EmpiricalCdf, p) -> "float | np.ndarray":
    """Piecewise-linear inverse of the CDF.

    Accepts a scalar or array of probabilities in (0, 1]; probabilities below
    the first grid probability clamp to the lowest intensity.
    """
    p_arr = np.asarray(p, dtype=np.float64)
    if (p_arr <= 0.0).any() or (p_arr > 1.0).any():
        raise OutOfRange(f"probabilities must lie in (0, 1], got {p!r}")
    out = np.interp(p_arr, cdf.ps, cdf.xs)
    return _match_scalar(out, p)


def cdf_value(cdf: EmpiricalCdf, x) -> "float | np.ndarray":
    """Forward CDF evaluation at intensity ``x`` (scalar or array).

    Below the support the curve ramps linearly to 0 over one grid step;
    above the support it saturates at 1.
    """
    step = float(cdf.xs[1] - cdf.xs[0])
    xs_ext = np.concatenate(([cdf.xs[0] - step], cdf.xs))
    ps_ext = np.concatenate(([0.0], cdf.ps))
    out = np.interp(np.asarray(x, dtype=np.float64), xs_ext, ps_ext)
    return _match_scalar(out, x)


def zscore_standardize(vol: Volume) -> Volume:
    """Standardize foreground to mean 0 and population std 1.

    Statistics are computed over foreground voxels only; background voxels
    keep the background value.  Idempotent up to floating-point rounding.
    """
    mask = vol.voxels != vol.background_value
    fg = vol.voxels[mask]
    if fg.size == 0:
        raise AllBackground("no foreground voxels to standardize")
    mean = float(fg.mean())
    std = float(fg.std())
    if std == 0.0:
        raise DegenerateConstant("foreground standard deviation is zero")
    out = vol.voxels.copy()
    out[mask] = (fg - mean) / std
    return vol.with_voxels(out)


def average_cdfs(cdfs, grid_size: int = DEFAULT_GRID_SIZE) -> EmpiricalCdf:
    """Equal-weight pointwise mean of CDFs on a shared intensity grid.

    The grid spans the union of the input supports; the result is monotone
    and renormalized so its last probability is exactly 1.
    """
    cdfs = list(cdfs)
    if not cdfs:
        raise EmptyInput("average_cdfs needs at least one CDF")
    if grid_size < 2:
        raise ValueError(f"grid_size must be at least 2, got {grid_size}")
    lo = min(float(c.xs[0]) for c in cdfs)
    hi = max(float(c.xs[-1]) for c in cdfs)
    xs = np.linspace(lo, hi, grid_size)
    stack = np.stack([cdf_value(c, xs) for c in cdfs])
    # canonical summation order keeps the mean bitwise invariant to the
    # ordering of the input list
    stack = np.sort(stack, axis=0)
    ps = stack.mean(axis=0)
    ps = np.maximum.accumulate(ps)
    ps = ps / ps[-1]
    return EmpiricalCdf(xs, ps, n_samples=sum(c.n_samples for c in cdfs))


def ks_distance(a: EmpiricalCdf, b: EmpiricalCdf) -> float:
    """Kolmogorov-Smirnov distance between two piecewise-linear CDFs.

    Both curves are piecewise linear, so the maximum vertical gap is attained
    at a grid knot (including the one-step ramp knots below each support).
    """
    ramps = [a.xs[0] - (a.xs[1] - a.xs[0]), b.xs[0] - (b.xs[1] - b.xs[0])]
    knots = np.unique(np.concatenate([a.xs, b.xs, ramps]))
    return float(np.abs(cdf_value(a, knots) - cdf_value(b, knots)).max())
