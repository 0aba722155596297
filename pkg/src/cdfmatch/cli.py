"""Command-line interface.

Subcommands: ``template build``, ``harmonize``, ``synth``, ``inspect``,
``eval``.  A shared JSON config file supplies defaults; command-line flags
override file values which override built-in defaults, and the effective
configuration is echoed into every report.  Diagnostics go to stderr;
machine-readable outputs go to files only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cdf import build_cdf
from .errors import CdfMatchError, UsageError
from .fit import FitConfig
from .io import (SynthSpec, emit_cdf_plot, emit_lut_plot, generate_synthetic,
                 load_lut, read_volume, save_lut, write_cdf_csv, write_volume)
from .pipeline import (ALL_METHODS, METHOD_CDF_MATCH, METHOD_PERCENTILE_STRETCH,
                       METHOD_ZSCORE, HarmonizeOptions, evaluate_cohort,
                       harmonize)
from .template import (DEFAULT_CLIP, DEFAULT_CONTROLS, ControlPoints,
                       build_template, load_template, save_template)


CONFIG_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64

_METHOD_ALIASES = {"stretch": METHOD_PERCENTILE_STRETCH,
                   "zscore": METHOD_ZSCORE,
                   "cdf": METHOD_CDF_MATCH}

log = logging.getLogger("cdfmatch")


class NoConvergence(CdfMatchError):
    """Fit hit the iteration cap; the produced item is still attached."""

    def __init__(self, message: str, item: dict | None = None):
        super().__init__(message)
        self.item = item


def _capture(fn, path):
    """Run one item, returning (item, error_message); item survives a
    convergence failure because the output was still written."""
    try:
        return fn(path), None
    except NoConvergence as exc:
        return exc.item, str(exc)
    except (CdfMatchError, OSError) as exc:
        return None, str(exc)


@dataclass(frozen=True)
class AppConfig:
    """Effective run configuration (defaults < config file < flags)."""

    controls: ControlPoints = DEFAULT_CONTROLS
    clip: tuple[float, float] | None = DEFAULT_CLIP
    grid_size: int = 1024
    fit: FitConfig = field(default_factory=FitConfig)
    workers: int = 1
    log_level: str = "info"

    def to_dict(self) -> dict:
        return {"version": CONFIG_SCHEMA_VERSION,
                "controls": self.controls.to_dict(),
                "clip": list(self.clip) if self.clip is not None else None,
                "grid_size": self.grid_size,
                "fit": self.fit.to_dict(),
                "workers": self.workers,
                "log_level": self.log_level}


def _parse_clip(text: str) -> tuple[float, float] | None:
    if text.lower() == "none":
        return None
    try:
        lo, hi = text.split(":")
        return (float(lo), float(hi))
    except ValueError as exc:
        raise UsageError(f"clip must look like 'LO:HI' or 'none', got {text!r}") from exc


def _load_controls_file(path) -> ControlPoints:
    try:
        doc = json.loads(Path(path).read_text())
        return ControlPoints.from_dict(doc)
    except OSError as exc:
        raise UsageError(f"cannot read control points from {path}: {exc}") from exc
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"malformed control-points file {path}: {exc}") from exc


def _resolve_config(args) -> AppConfig:
    cfg = AppConfig()
    file_doc = {}
    if getattr(args, "config", None):
        try:
            file_doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        version = file_doc.get("version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise UsageError(f"unsupported config schema version {version!r}")

    try:
        if "controls" in file_doc:
            cfg = replace(cfg, controls=ControlPoints.from_dict(file_doc["controls"]))
        if "clip" in file_doc:
            clip = file_doc["clip"]
            cfg = replace(cfg, clip=tuple(clip) if clip is not None else None)
        if "grid_size" in file_doc:
            cfg = replace(cfg, grid_size=int(file_doc["grid_size"]))
        if "fit" in file_doc:
            cfg = replace(cfg, fit=FitConfig.from_dict(file_doc["fit"]))
        if "workers" in file_doc:
            cfg = replace(cfg, workers=int(file_doc["workers"]))
        if "log_level" in file_doc:
            cfg = replace(cfg, log_level=str(file_doc["log_level"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed config file {args.config}: {exc}") from exc

    # flags win over file values
    if getattr(args, "controls", None):
        cfg = replace(cfg, controls=_load_controls_file(args.controls))
    if getattr(args, "clip", None):
        cfg = replace(cfg, clip=_parse_clip(args.clip))
    if getattr(args, "grid_size", None):
        cfg = replace(cfg, grid_size=args.grid_size)
    if getattr(args, "workers", None):
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "log_level", None):
        cfg = replace(cfg, log_level=args.log_level)
    # the config file may lower or raise verbosity; flags already applied
    log.setLevel(getattr(logging, cfg.log_level.upper(), logging.INFO))
    return cfg


def _discover_inputs(spec: str) -> list[Path]:
    path = Path(spec)
    if path.is_dir():
        found = sorted(path.glob("*.raw"))
        if not found:
            raise UsageError(f"no .raw volumes found in {path}")
        return found
    if path.is_file():
        return [path]
    raise UsageError(f"input {spec!r} is neither a file nor a directory")


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_template(args) -> int:
    if args.template_cmd != "build":
        raise UsageError("usage: cdfmatch template build ...")
    cfg = _resolve_config(args)
    cohort = [read_volume(p) for p in args.inputs]
    template = build_template(cohort, controls=cfg.controls, clip=cfg.clip,
                              config=cfg.fit, grid_size=cfg.grid_size,
                              channel=args.channel)
    save_template(template, args.out)
    log.info("wrote template for channel %r from %d volumes to %s",
             template.channel, len(cohort), args.out)
    return EXIT_OK


def _cmd_harmonize(args) -> int:
    cfg = _resolve_config(args)
    template = load_template(args.template)
    options = HarmonizeOptions(fit=cfg.fit, grid_size=cfg.grid_size,
                               preserve_background=args.preserve_background,
                               bits=args.bits)
    inputs = _discover_inputs(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = args.dtype or ("u16" if args.bits else "f32")

    def process(path: Path) -> dict:
        vol = read_volume(path)
        out_vol, entry = harmonize(vol, template, options)
        out_path = out_dir / path.name
        write_volume(out_vol, out_path, dtype=dtype)
        lut_path = out_dir / (path.stem + ".lut.json")
        save_lut(entry.lut, lut_path)
        log.info("harmonized %s: pre-KS %.4f -> post-KS %.4f (%.2fs)",
                 path.name, entry.pre_ks, entry.post_ks, entry.wall_time_s)
        item = {"input": path.name, "output": out_path.name,
                "lut_file": lut_path.name}
        item.update(entry.to_dict())
        meta_path = out_dir / (path.stem + ".meta.json")
        meta_path.write_text(json.dumps(item, sort_keys=True, indent=1) + "\n")
        if not entry.fit.converged:
            raise NoConvergence(f"fit did not converge for {path.name}", item)
        return item

    items, failures = [], []
    # results are merged in input order regardless of completion order
    if cfg.workers > 1 and len(inputs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_capture, process, p) for p in inputs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_capture(process, p) for p in inputs]

    for path, (item, error) in zip(inputs, outcomes):
        if item is not None:
            items.append(item)
        if error is not None:
            failures.append({"input": path.name, "error": error})
            if not args.best_effort:
                log.error("failed on %s: %s", path.name, error)
                return EXIT_FAILURE
            log.warning("continuing past %s: %s", path.name, error)

    if args.report:
        report = {"version": 1, "config": cfg.to_dict(),
                  "config_hash": options.hash(), "items": items,
                  "failures": failures}
        Path(args.report).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    return EXIT_PARTIAL if failures else EXIT_OK


def _cmd_synth(args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read synth spec {args.spec}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"synth spec {args.spec} is not valid JSON: {exc}") from exc
    spec = SynthSpec.from_dict(doc)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    vol = generate_synthetic(spec)
    write_volume(vol, args.out, dtype=args.dtype)
    log.info("wrote synthetic volume %s (dims %s, seed %d)", args.out,
             spec.dims, spec.seed)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    cfg = _resolve_config(args)
    if args.cdf:
        vol = read_volume(args.cdf)
        cdf = build_cdf(vol, exclude_background=args.exclude_background,
                        grid_size=cfg.grid_size)
        write_cdf_csv(cdf, args.out)
        if args.plot:
            label = vol.channel or Path(args.cdf).stem
            emit_cdf_plot([(label, cdf)], args.plot,
                          style={"title": f"CDF of {Path(args.cdf).name}"})
    else:
        lut = load_lut(args.lut)
        xs = np.linspace(lut.domain[0], lut.domain[1], args.points)
        ys = np.asarray(lut.apply(xs))
        lines = ["input,output"]
        lines.extend(f"{float(x)!r},{float(y)!r}" for x, y in zip(xs, ys))
        Path(args.out).write_text("\n".join(lines) + "\n")
        if args.plot:
            emit_lut_plot(lut, args.plot, points=args.points,
                          style={"title": f"Mapping {Path(args.lut).name}"})
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    template = load_template(args.template)
    options = HarmonizeOptions(fit=cfg.fit, grid_size=cfg.grid_size)
    methods = []
    for name in args.methods.split(","):
        name = name.strip()
        if name not in _METHOD_ALIASES and name not in ALL_METHODS:
            raise UsageError(f"unknown method {name!r}; choose from "
                             f"{sorted(_METHOD_ALIASES)}")
        methods.append(_METHOD_ALIASES.get(name, name))
    volumes = [read_volume(p) for p in _discover_inputs(args.input)]
    rows = evaluate_cohort(volumes, template, methods=methods, options=options)
    lines = ["method,mean_pairwise_ks,mean_ks_to_template,mean_range_utilization"]
    for row in rows:
        tpl = "" if row.mean_ks_to_template is None else repr(row.mean_ks_to_template)
        lines.append(f"{row.method},{row.mean_pairwise_ks!r},{tpl},"
                     f"{row.mean_range_utilization!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    log.info("wrote metrics for %d methods to %s", len(rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage-failure code (64)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON config file with shared defaults")
    parser.add_argument("--grid-size", type=int, help="CDF grid size")
    parser.add_argument("--workers", type=int, help="worker threads for batches")
    parser.add_argument("--log-level", choices=["debug", "info", "warning", "error"],
                        help="diagnostic verbosity (stderr)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdfmatch",
                     description="CDF-matching image intensity harmonization")
    parser.add_argument(
        "--version", action="version",
        version=f"cdfmatch {__version__} (config schema {CONFIG_SCHEMA_VERSION}, "
                f"template schema 1)")
    sub = parser.add_subparsers(dest="command")

    p_template = sub.add_parser("template", help="template CDF operations")
    tsub = p_template.add_subparsers(dest="template_cmd")
    p_build = tsub.add_parser("build", help="build a template from a cohort")
    p_build.add_argument("--channel", help="channel label for the template")
    p_build.add_argument("--controls", help="JSON file with the three control points")
    p_build.add_argument("--clip", help="clip range 'LO:HI' or 'none'")
    p_build.add_argument("--out", required=True, help="output template JSON")
    p_build.add_argument("inputs", nargs="+", help="training volumes (.raw)")
    _add_config_flags(p_build)
    p_build.set_defaults(func=_cmd_template)
    p_template.set_defaults(func=_cmd_template, template_cmd=None)

    p_harm = sub.add_parser("harmonize", help="harmonize volumes against a template")
    p_harm.add_argument("--template", required=True, help="template JSON file")
    p_harm.add_argument("--in", dest="input", required=True,
                        help="input volume or directory of .raw volumes")
    p_harm.add_argument("--out", required=True, help="output directory")
    p_harm.add_argument("--report", help="write a JSON report here")
    p_harm.add_argument("--bits", type=int, help="quantize outputs to this bit depth")
    p_harm.add_argument("--preserve-background", action=argparse.BooleanOptionalAction,
                        default=True, help="copy background voxels through unchanged")
    p_harm.add_argument("--best-effort", action="store_true",
                        help="continue past per-item failures (exit 2)")
    p_harm.add_argument("--dtype", choices=["u8", "u16", "i16", "f32"],
                        help="output dtype (default: u16 with --bits, else f32)")
    _add_config_flags(p_harm)
    p_harm.set_defaults(func=_cmd_harmonize)

    p_synth = sub.add_parser("synth", help="generate a synthetic volume")
    p_synth.add_argument("--spec", required=True, help="synthetic spec JSON")
    p_synth.add_argument("--seed", type=int, help="override the spec seed")
    p_synth.add_argument("--out", required=True, help="output volume path")
    p_synth.add_argument("--dtype", default="f32", choices=["u8", "u16", "i16", "f32"])
    _add_config_flags(p_synth)
    p_synth.set_defaults(func=_cmd_synth)

    p_inspect = sub.add_parser("inspect", help="dump a CDF or LUT as CSV/SVG")
    group = p_inspect.add_mutually_exclusive_group(required=True)
    group.add_argument("--cdf", help="volume whose CDF to inspect")
    group.add_argument("--lut", help="LUT JSON to inspect")
    p_inspect.add_argument("--out", required=True, help="output CSV path")
    p_inspect.add_argument("--plot", help="also write an SVG plot here")
    p_inspect.add_argument("--points", type=int, default=512,
                           help="LUT sample count")
    p_inspect.add_argument("--exclude-background",
                           action=argparse.BooleanOptionalAction, default=True)
    _add_config_flags(p_inspect)
    p_inspect.set_defaults(func=_cmd_inspect)

    p_eval = sub.add_parser("eval", help="compare harmonization methods")
    p_eval.add_argument("--template", required=True)
    p_eval.add_argument("--in", dest="input", required=True,
                        help="directory of .raw volumes (or one file)")
    p_eval.add_argument("--methods", default="stretch,zscore,cdf",
                        help="comma-separated subset of stretch,zscore,cdf")
    p_eval.add_argument("--out", required=True, help="output metrics CSV")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def run(argv=None) -> int:
    """Entry point returning a process exit code."""
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    level = getattr(args, "log_level", None) or "info"
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level.upper()),
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return int(args.func(args))
    except UsageError as exc:
        print(f"cdfmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CdfMatchError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
