"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from cdfmatch import (EmpiricalCdf, LesionSpec, MixtureComponent,
                      ScannerEffect, SynthSpec, Volume, build_cdf,
                      build_template, generate_synthetic, quantile)

# a T2-like base distribution: two tissue modes plus a heavy bright tail
T2_COMPONENTS = (
    MixtureComponent("gaussian", 0.45, 120.0, 30.0),
    MixtureComponent("gaussian", 0.45, 230.0, 50.0),
    MixtureComponent("lognormal", 0.10, 5.6, 0.5),
)


def t2_spec(seed: int, dims=(24, 24, 24), scanner: ScannerEffect | None = None,
            lesions: LesionSpec | None = None, channel: str = "T2") -> SynthSpec:
    return SynthSpec(components=T2_COMPONENTS, dims=dims,
                     scanner=scanner or ScannerEffect(),
                     lesions=lesions or LesionSpec(),
                     channel=channel, seed=seed)


def scanner_effect(i: int) -> ScannerEffect:
    """Deterministic multi-scanner variation: gain, offset, gamma, tail weight."""
    return ScannerEffect(gain=0.6 * 1.07 ** i,
                         offset=10.0 * (i % 5),
                         gamma=0.9 + 0.03 * (i % 8),
                         tail_weight=0.6 + 0.12 * (i % 7))


def scanner_cohort(n: int, dims=(24, 24, 24), seed0: int = 100) -> list[Volume]:
    return [generate_synthetic(t2_spec(seed0 + i, dims=dims,
                                       scanner=scanner_effect(i)))
            for i in range(n)]


def volume_from_values(values, channel: str = "", background: float = 0.0) -> Volume:
    values = np.asarray(values, dtype=np.float64).ravel()
    return Volume((values.size, 1, 1), values, channel=channel,
                  background_value=background)


def cdf_from_samples(samples, grid_size: int = 1024) -> EmpiricalCdf:
    return build_cdf(volume_from_values(samples), exclude_background=False,
                     grid_size=grid_size)


def sample_from_cdf(cdf: EmpiricalCdf, n: int, seed: int) -> np.ndarray:
    """Inverse-transform sampling from a piecewise-linear CDF."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(1e-12, 1.0, n)
    return np.asarray(quantile(cdf, u))


@pytest.fixture(scope="session")
def template_12bit():
    """Template from 9 heterogeneous T2-like volumes, published 12-bit config."""
    cohort = scanner_cohort(9)
    return build_template(cohort)
