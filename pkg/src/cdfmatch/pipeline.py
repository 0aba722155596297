"""Harmonization orchestration: single volumes, multi-channel exams, batches,
and the baseline comparison harness.

The per-volume recipe is: estimate the image CDF, fit the dual-scaling
parameters against the template, compose the monotone mapping (with tail
shrinking toward the clip range), and apply it voxel-wise.  Reports carry the
fit, pre/post KS distances to the template, and a config hash; serialized
reports omit wall time so identical runs stay bitwise identical.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cdf import (DEFAULT_GRID_SIZE, Volume, build_cdf, ks_distance, quantile,
                  zscore_standardize)
from .errors import ChannelMismatch, DegenerateConstant, EmptyInput
from .fit import FitConfig, FitResult, fit_cdf
from .template import TemplateCdf
from .transform import (DualScaleParams, IntensityLut, TailSpec, apply_lut,
                        compose_lut, lut_ds)

METHOD_PERCENTILE_STRETCH = "percentile_stretch"
METHOD_ZSCORE = "zscore"
METHOD_CDF_MATCH = "cdf_match"
ALL_METHODS = (METHOD_PERCENTILE_STRETCH, METHOD_ZSCORE, METHOD_CDF_MATCH)


@dataclass(frozen=True)
class HarmonizeOptions:
    """Per-run knobs for the harmonization pipeline."""

    fit: FitConfig = field(default_factory=FitConfig)
    grid_size: int = DEFAULT_GRID_SIZE
    exclude_background: bool = True
    preserve_background: bool = True
    clip_outputs: bool = True
    bits: int | None = None
    frozen_params: DualScaleParams | None = None

    def to_dict(self) -> dict:
        return {"fit": self.fit.to_dict(),
                "grid_size": int(self.grid_size),
                "exclude_background": self.exclude_background,
                "preserve_background": self.preserve_background,
                "clip_outputs": self.clip_outputs,
                "bits": self.bits,
                "frozen_params": (self.frozen_params.to_dict()
                                  if self.frozen_params is not None else None)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ChannelReport:
    """Per-channel outcome: fit, KS distances, composed mapping, timing."""

    channel: str
    fit: FitResult
    pre_ks: float
    post_ks: float
    lut: IntensityLut
    wall_time_s: float

    def to_dict(self, include_timing: bool = False) -> dict:
        # timing stays out of serialized artifacts so reruns compare bitwise
        doc = {"channel": self.channel, "fit": self.fit.to_dict(),
               "pre_ks": self.pre_ks, "post_ks": self.post_ks,
               "lut": self.lut.to_dict()}
        if include_timing:
            doc["wall_time_s"] = self.wall_time_s
        return doc


@dataclass(frozen=True)
class HarmonizeJob:
    """A multi-channel exam: one input volume per channel plus its templates."""

    inputs: tuple
    templates: tuple
    options: HarmonizeOptions = field(default_factory=HarmonizeOptions)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "templates", tuple(self.templates))
        available = {t.channel for t in self.templates}
        for vol in self.inputs:
            if vol.channel not in available:
                raise ChannelMismatch(
                    f"no template for channel {vol.channel!r} "
                    f"(have {sorted(available)})")


@dataclass(frozen=True)
class HarmonizeReport:
    """Aggregated per-channel reports plus the configuration hash."""

    entries: tuple
    config_hash: str

    def to_dict(self, include_timing: bool = False) -> dict:
        return {"config_hash": self.config_hash,
                "entries": [e.to_dict(include_timing) for e in self.entries]}


def _frozen_fit(image_cdf, template, params: DualScaleParams,
                config: FitConfig) -> FitResult:
    grid = config.percentile_grid
    qi = np.asarray(quantile(image_cdf, grid))
    qt = np.asarray(quantile(template.cdf, grid))
    residual = float(np.sqrt(np.mean((np.asarray(lut_ds(qi, params)) - qt) ** 2)))
    return FitResult(params, residual, iterations=0, converged=True)


# erf tail shrinking is built for long overshoots; below this fraction of
# the tail target range the hard clamp handles the sliver instead, which
# distorts proportionately while the erf squeeze would bend the whole tail
TAIL_SQUEEZE_GATE = 0.05


def _template_tails(params: DualScaleParams, template: TemplateCdf,
                    domain: tuple[float, float]) -> TailSpec:
    """Tail spec for one image, in post-dual-scaling coordinates.

    A tail fires only when the mapped extremes materially overshoot the clip
    range (already-conforming data passes through so repeated harmonization
    stays near identity).  The squeeze reuses the template's build-time
    source ranges when recorded, so images bend exactly like the template
    did; erf saturation keeps any input inside the clip range regardless.
    """
    if template.clip is None:
        return TailSpec.disabled()
    clip_lo, clip_hi = template.clip
    c = template.controls
    v_min = float(lut_ds(domain[0], params))
    v_max = float(lut_ds(domain[1], params))
    top = v_max - clip_hi > TAIL_SQUEEZE_GATE * (clip_hi - c.t_T)
    bottom = clip_lo - v_min > TAIL_SQUEEZE_GATE * (c.t_B - clip_lo)
    src_max = template.provenance.get("tail_source_max")
    src_min = template.provenance.get("tail_source_min")
    return TailSpec(v_T=c.t_T, v_max=float(src_max) if src_max is not None else v_max,
                    v_clipT=clip_hi,
                    v_B=c.t_B, v_min=float(src_min) if src_min is not None else v_min,
                    v_clipB=clip_lo,
                    enabled_top=top, enabled_bottom=bottom)


def _quantize(vol: Volume, template: TemplateCdf, bits: int) -> Volume:
    if template.clip is not None:
        lo, hi = template.clip
    else:
        lo, hi = 0.0, float(2 ** bits - 1)
    vox = np.rint(np.clip(vol.voxels, lo, hi))  # ties round to even
    mask = vol.voxels == vol.background_value
    vox[mask] = vol.background_value
    return vol.with_voxels(vox)


def harmonize(vol: Volume, template: TemplateCdf,
              options: HarmonizeOptions | None = None) -> tuple[Volume, ChannelReport]:
    """Harmonize one volume against a template.

    Steps: image CDF -> parameter fit -> composed monotone LUT (tails toward
    the template clip range) -> voxel-wise mapping -> optional integer
    quantization.  Never emits a non-monotone mapping: composition fails
    loudly instead.
    """
    options = options or HarmonizeOptions()
    started = time.perf_counter()
    image_cdf = build_cdf(vol, exclude_background=options.exclude_background,
                          grid_size=options.grid_size)
    pre_ks = ks_distance(image_cdf, template.cdf)
    if options.frozen_params is not None:
        fit = _frozen_fit(image_cdf, template, options.frozen_params, options.fit)
    else:
        fit = fit_cdf(image_cdf, template, options.fit)
    domain = image_cdf.support
    if options.clip_outputs and template.clip is not None:
        tails = _template_tails(fit.params, template, domain)
        if ((tails.enabled_top or tails.enabled_bottom)
                and options.frozen_params is None):
            # refine against the composed map so the squeeze does not push
            # already-matched quantiles away from the template
            fit = fit_cdf(image_cdf, template, options.fit, tails=tails,
                          initial=fit.params)
        lut = compose_lut(fit.params, tails, domain, clip=template.clip)
    else:
        lut = compose_lut(fit.params, TailSpec.disabled(), domain)
    out = apply_lut(vol, lut, preserve_background=options.preserve_background)
    if options.bits is not None:
        out = _quantize(out, template, options.bits)
    post_cdf = build_cdf(out, exclude_background=options.exclude_background,
                         grid_size=options.grid_size)
    post_ks = ks_distance(post_cdf, template.cdf)
    entry = ChannelReport(vol.channel, fit, pre_ks, post_ks, lut,
                          wall_time_s=time.perf_counter() - started)
    return out, entry


def harmonize_exam(job: HarmonizeJob) -> tuple[list[Volume], HarmonizeReport]:
    """Harmonize every channel of an exam against its own template."""
    by_channel = {t.channel: t for t in job.templates}
    outputs, entries = [], []
    for vol in job.inputs:
        out, entry = harmonize(vol, by_channel[vol.channel], job.options)
        outputs.append(out)
        entries.append(entry)
    return outputs, HarmonizeReport(tuple(entries), job.options.hash())


def harmonize_batch(volumes, template: TemplateCdf,
                    options: HarmonizeOptions | None = None,
                    workers: int = 1) -> list[tuple[Volume, ChannelReport]]:
    """Harmonize independent volumes, optionally across a thread pool.

    Results come back in input order regardless of completion order.
    """
    volumes = list(volumes)
    options = options or HarmonizeOptions()
    if workers <= 1 or len(volumes) <= 1:
        return [harmonize(v, template, options) for v in volumes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda v: harmonize(v, template, options), volumes))


# ---------------------------------------------------------------------------
# baseline methods and the comparison harness


def percentile_stretch(vol: Volume, target: tuple[float, float],
                       lo_p: float = 0.01, hi_p: float = 0.99) -> Volume:
    """Affine map of the [Q(lo_p), Q(hi_p)] foreground span onto ``target``.

    Values beyond the anchor percentiles clamp to the target ends; background
    voxels pass through unchanged.
    """
    mask = vol.voxels != vol.background_value
    fg = vol.voxels[mask]
    q_lo, q_hi = np.quantile(fg, [lo_p, hi_p])
    if q_hi <= q_lo:
        raise DegenerateConstant("percentile anchors collapse")
    t_lo, t_hi = (float(target[0]), float(target[1]))
    scale = (t_hi - t_lo) / (q_hi - q_lo)
    out = vol.voxels.copy()
    out[mask] = np.clip(t_lo + (fg - q_lo) * scale, t_lo, t_hi)
    return vol.with_voxels(out)


@dataclass(frozen=True)
class MethodMetrics:
    """One row of the comparison table."""

    method: str
    mean_pairwise_ks: float
    mean_ks_to_template: float | None
    mean_range_utilization: float

    def to_dict(self) -> dict:
        return {"method": self.method,
                "mean_pairwise_ks": self.mean_pairwise_ks,
                "mean_ks_to_template": self.mean_ks_to_template,
                "mean_range_utilization": self.mean_range_utilization}


def _stretch_target(template: TemplateCdf) -> tuple[float, float]:
    return template.clip if template.clip is not None else template.cdf.support


def _apply_method(vol: Volume, method: str, template: TemplateCdf,
                  options: HarmonizeOptions) -> Volume:
    if method == METHOD_PERCENTILE_STRETCH:
        return percentile_stretch(vol, _stretch_target(template))
    if method == METHOD_ZSCORE:
        return zscore_standardize(vol)
    if method == METHOD_CDF_MATCH:
        return harmonize(vol, template, options)[0]
    raise ValueError(f"unknown method {method!r}, expected one of {ALL_METHODS}")


def _range_utilization(vol: Volume) -> float:
    fg = vol.foreground()
    full = float(fg.max() - fg.min())
    if full == 0.0:
        return 0.0
    q_lo, q_hi = np.quantile(fg, [0.01, 0.99])
    return float((q_hi - q_lo) / full)


def evaluate_cohort(volumes, template: TemplateCdf, methods=ALL_METHODS,
                    options: HarmonizeOptions | None = None) -> list[MethodMetrics]:
    """Compare harmonization methods on a cohort.

    For each method: harmonize every volume, then report the mean pairwise KS
    distance between the harmonized CDFs, the mean KS distance to the
    template (CDF matching only), and the mean bulk range utilization
    (Q99 - Q01 over the full output span).
    """
    volumes = list(volumes)
    if len(volumes) < 2:
        raise EmptyInput("cohort evaluation needs at least two volumes")
    options = options or HarmonizeOptions()
    rows = []
    for method in methods:
        outs = [_apply_method(v, method, template, options) for v in volumes]
        cdfs = [build_cdf(o, exclude_background=options.exclude_background,
                          grid_size=options.grid_size) for o in outs]
        pairs = [ks_distance(cdfs[i], cdfs[j])
                 for i in range(len(cdfs)) for j in range(i + 1, len(cdfs))]
        ks_to_template = None
        if method == METHOD_CDF_MATCH:
            ks_to_template = float(np.mean([ks_distance(c, template.cdf)
                                            for c in cdfs]))
        rows.append(MethodMetrics(
            method=method,
            mean_pairwise_ks=float(np.mean(pairs)),
            mean_ks_to_template=ks_to_template,
            mean_range_utilization=float(np.mean([_range_utilization(o)
                                                  for o in outs]))))
    return rows
