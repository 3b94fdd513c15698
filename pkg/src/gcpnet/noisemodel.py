"""Heteroscedastic Gaussian noise synthesis for raw bursts.

The model is shot noise plus read noise: a clean raw value x is observed
as y = x + n with n ~ N(0, sigma_s * x + sigma_r**2). Noise maps carry
the per-pixel standard deviation of that model evaluated on the observed
(noisy) frame, which is the only signal proxy available at inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseParams:
    """Shot/read noise scales (sigma_s, sigma_r), both nonnegative."""

    sigma_s: float
    sigma_r: float

    def __post_init__(self):
        if self.sigma_s < 0 or self.sigma_r < 0:
            raise ValueError("noise scales must be nonnegative")

    def to_json(self) -> dict:
        return {"sigma_s": self.sigma_s, "sigma_r": self.sigma_r}

    @staticmethod
    def from_json(d: dict) -> "NoiseParams":
        return NoiseParams(float(d["sigma_s"]), float(d["sigma_r"]))


@dataclass(frozen=True)
class NoiseRanges:
    """Sampling ranges for training noise levels.

    Defaults are the training ranges sigma_s in [1e-4, 1e-2] and
    sigma_r in [1e-3, 10**-1.5]. ``sampling_law`` is "log_uniform"
    (uniform exponent) or "uniform" (uniform value).
    """

    s_lo: float = 1e-4
    s_hi: float = 1e-2
    r_lo: float = 1e-3
    r_hi: float = 10.0 ** -1.5
    sampling_law: str = "log_uniform"

    def __post_init__(self):
        # lo == hi is tolerated as a degenerate (constant) range; zero is
        # allowed only under the uniform law (log-uniform needs lo > 0).
        if not (0 <= self.s_lo <= self.s_hi) or not (0 <= self.r_lo <= self.r_hi):
            raise ValueError("ranges must satisfy 0 <= lo <= hi")
        if self.sampling_law not in ("log_uniform", "uniform"):
            raise ValueError(f"unknown sampling law {self.sampling_law!r}")
        if self.sampling_law == "log_uniform" and (self.s_lo <= 0 or self.r_lo <= 0):
            raise ValueError("log_uniform sampling needs positive lower bounds")

    def to_json(self) -> dict:
        return {"s_lo": self.s_lo, "s_hi": self.s_hi, "r_lo": self.r_lo,
                "r_hi": self.r_hi, "sampling_law": self.sampling_law}

    @staticmethod
    def from_json(d: dict) -> "NoiseRanges":
        return NoiseRanges(d["s_lo"], d["s_hi"], d["r_lo"], d["r_hi"],
                           d.get("sampling_law", "log_uniform"))


def apply_noise(clean: np.ndarray, params: NoiseParams, seed: int) -> np.ndarray:
    """Add heteroscedastic Gaussian noise to a clean raw array.

    Deterministic for a given seed. The output is intentionally not
    clamped; noise may push values below zero.
    """
    clean = np.asarray(clean)
    if np.min(clean) < 0:
        raise ValueError("apply_noise requires a nonnegative clean signal")
    rng = np.random.Generator(np.random.PCG64(seed))
    std = np.sqrt(params.sigma_s * clean + params.sigma_r ** 2)
    return clean + std * rng.standard_normal(clean.shape).astype(clean.dtype, copy=False)


def noise_map(noisy: np.ndarray, params: NoiseParams) -> np.ndarray:
    """Per-pixel noise standard deviation, using the noisy frame as signal proxy.

    m = sqrt(sigma_s * max(y, 0) + sigma_r**2); negative observations are
    clamped so the variance never drops below the read-noise floor.
    """
    noisy = np.asarray(noisy)
    return np.sqrt(params.sigma_s * np.maximum(noisy, 0.0) + params.sigma_r ** 2)


def _draw(rng: np.random.Generator, lo: float, hi: float, law: str) -> float:
    if lo == hi:
        return float(lo)
    if law == "log_uniform":
        return float(10.0 ** rng.uniform(np.log10(lo), np.log10(hi)))
    return float(rng.uniform(lo, hi))


def sample_noise_params(ranges: NoiseRanges, seed: int) -> NoiseParams:
    """Draw one (sigma_s, sigma_r) pair from the configured ranges, per seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return sample_noise_params_rng(ranges, rng)


def sample_noise_params_rng(ranges: NoiseRanges,
                            rng: np.random.Generator) -> NoiseParams:
    """Same as :func:`sample_noise_params` but consuming an existing generator."""
    s = _draw(rng, ranges.s_lo, ranges.s_hi, ranges.sampling_law)
    r = _draw(rng, ranges.r_lo, ranges.r_hi, ranges.sampling_law)
    return NoiseParams(s, r)
