"""Camera color pipeline simulation and Bayer mosaic handling.

The forward transform ``process`` maps radiometrically linear RGB to sRGB
(white balance, color correction matrix, gamma compression) and
``unprocess`` inverts it stage by stage. The pair is exactly mutually
inverse on in-gamut values because no tone mapping is applied on either
side. Mosaicking, Bayer-plane packing and green-channel extraction all
assume the fixed RGGB pattern.

Images are channels-last float arrays: sRGB / linear RGB are (2H, 2W, 3),
Bayer planes are (2H, 2W), packed raw is (H, W, 4) with channel order
(R, Gr, Gb, B).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

#: Index of the four RGGB sites inside a 2x2 Bayer block, as (row, col).
RGGB_SITES = ((0, 0), (0, 1), (1, 0), (1, 1))

#: Channel order of packed raw arrays.
PACKED_CHANNELS = ("R", "Gr", "Gb", "B")

GREEN_CHANNELS = (1, 2)
RED_BLUE_CHANNELS = (0, 3)


class ConfigurationError(ValueError):
    """Raised when ISP parameters are structurally invalid."""


@dataclass(frozen=True)
class GammaCurve:
    """Transfer curve used for gamma compression, strictly monotone on [0,1].

    ``kind`` is either "srgb_standard" (the piecewise sRGB curve) or
    "pure_power" with the stated exponent e, compressing with v**(1/e).
    """

    kind: str = "srgb_standard"
    exponent: float | None = None

    def __post_init__(self):
        if self.kind == "srgb_standard":
            if self.exponent is not None:
                raise ConfigurationError("srgb_standard takes no exponent")
        elif self.kind == "pure_power":
            if self.exponent is None or self.exponent <= 0:
                raise ConfigurationError("pure_power needs a positive exponent")
        else:
            raise ConfigurationError(f"unknown gamma curve kind: {self.kind!r}")

    @staticmethod
    def srgb() -> "GammaCurve":
        return GammaCurve("srgb_standard")

    @staticmethod
    def pure_power(exponent: float) -> "GammaCurve":
        return GammaCurve("pure_power", float(exponent))

    def compress(self, v: np.ndarray) -> np.ndarray:
        """Linear -> display, defined on [0, 1]."""
        v = np.asarray(v)
        if self.kind == "pure_power":
            return np.power(v, 1.0 / self.exponent)
        out = np.where(v <= 0.0031308, 12.92 * v,
                       1.055 * np.power(np.maximum(v, 1e-12), 1.0 / 2.4) - 0.055)
        return out

    def compress_deriv(self, v: np.ndarray) -> np.ndarray:
        """d compress / dv on (0, 1]; finite one-sided value used at 0."""
        v = np.asarray(v)
        if self.kind == "pure_power":
            e = 1.0 / self.exponent
            return e * np.power(np.maximum(v, 1e-12), e - 1.0)
        lin = np.full_like(v, 12.92)
        pw = (1.055 / 2.4) * np.power(np.maximum(v, 1e-12), 1.0 / 2.4 - 1.0)
        return np.where(v <= 0.0031308, lin, pw)

    def expand(self, s: np.ndarray) -> np.ndarray:
        """Display -> linear; exact inverse of :meth:`compress` on [0, 1]."""
        s = np.asarray(s)
        if self.kind == "pure_power":
            return np.power(s, self.exponent)
        return np.where(s <= 0.04045, s / 12.92,
                        np.power((s + 0.055) / 1.055, 2.4))

    def to_json(self) -> dict:
        return {"kind": self.kind, "exponent": self.exponent}

    @staticmethod
    def from_json(d: dict) -> "GammaCurve":
        return GammaCurve(d["kind"], d.get("exponent"))


def _identity_ccm() -> np.ndarray:
    return np.eye(3, dtype=np.float64)


@dataclass(frozen=True)
class IspParams:
    """White-balance gains, color correction matrix and gamma curve.

    Defaults follow the artifact convention: the green gain is the lowest
    so the green channel is the brightest in the sensor (linear) domain.
    """

    wb_gains: tuple[float, float, float] = (2.0, 1.0, 1.7)
    ccm: np.ndarray = field(default_factory=_identity_ccm)
    gamma: GammaCurve = field(default_factory=GammaCurve.srgb)

    def __post_init__(self):
        gains = np.asarray(self.wb_gains, dtype=np.float64)
        if gains.shape != (3,) or not np.all(gains > 0):
            raise ConfigurationError("wb_gains must be 3 positive reals")
        ccm = np.asarray(self.ccm, dtype=np.float64)
        if ccm.shape != (3, 3):
            raise ConfigurationError("ccm must be a 3x3 matrix")
        if not np.all(np.isfinite(ccm)) or np.linalg.cond(ccm) > 1e8:
            raise ConfigurationError("ccm must be finitely conditioned (invertible)")
        object.__setattr__(self, "wb_gains", tuple(float(g) for g in gains))
        object.__setattr__(self, "ccm", ccm)

    @property
    def ccm_inv(self) -> np.ndarray:
        return np.linalg.inv(self.ccm)

    @property
    def linear_max(self) -> float:
        """Upper clamp of the linear domain, 1 / min(wb_gains)."""
        return 1.0 / min(self.wb_gains)

    def to_json(self) -> dict:
        return {
            "wb_gains": list(self.wb_gains),
            "ccm": np.asarray(self.ccm).tolist(),
            "gamma": self.gamma.to_json(),
        }

    @staticmethod
    def from_json(d: dict) -> "IspParams":
        return IspParams(tuple(d["wb_gains"]), np.asarray(d["ccm"]),
                         GammaCurve.from_json(d["gamma"]))


DEFAULT_ISP = IspParams()


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    return img


def process(linear: np.ndarray, isp: IspParams = DEFAULT_ISP) -> np.ndarray:
    """Linear RGB -> sRGB: white balance, CCM, gamma compression.

    Negative inputs are clamped to 0, the post-CCM signal is clamped to
    [0, 1] before the (monotone, endpoint-fixing) gamma curve, so the
    output lies in [0, 1]. Differentiable with subgradient 0 at clamps;
    see :func:`process_vjp`.
    """
    linear = _check_rgb(linear)
    gains = np.asarray(isp.wb_gains, dtype=linear.dtype)
    x = np.maximum(linear, 0.0) * gains
    x = x @ np.asarray(isp.ccm, dtype=linear.dtype).T
    x = np.clip(x, 0.0, 1.0)
    return isp.gamma.compress(x)


def process_vjp(linear: np.ndarray, isp: IspParams,
                cotangent: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of :func:`process` at ``linear``.

    Returns d<cotangent, process(linear)> / d linear with subgradient 0
    wherever a clamp is active.
    """
    linear = _check_rgb(linear)
    gains = np.asarray(isp.wb_gains, dtype=linear.dtype)
    ccm = np.asarray(isp.ccm, dtype=linear.dtype)
    x0 = np.maximum(linear, 0.0) * gains
    x1 = x0 @ ccm.T
    inside = (x1 > 0.0) & (x1 < 1.0)
    x1c = np.clip(x1, 0.0, 1.0)
    g = np.asarray(cotangent) * isp.gamma.compress_deriv(x1c)
    g = np.where(inside, g, 0.0)
    g = g @ ccm
    g = g * gains
    return np.where(linear > 0.0, g, 0.0)


def unprocess(srgb: np.ndarray, isp: IspParams = DEFAULT_ISP) -> np.ndarray:
    """sRGB -> linear RGB: inverse gamma, inverse CCM, inverse white balance.

    The output is clamped to [0, 1/min(wb_gains)], the radiometric range
    reachable by :func:`process`.
    """
    srgb = _check_rgb(srgb)
    if np.min(srgb) < -1e-6 or np.max(srgb) > 1.0 + 1e-6:
        raise ValueError("unprocess expects sRGB values in [0, 1]")
    x = isp.gamma.expand(np.clip(srgb, 0.0, 1.0))
    x = x @ np.asarray(isp.ccm_inv, dtype=srgb.dtype).T
    x = x / np.asarray(isp.wb_gains, dtype=srgb.dtype)
    return np.clip(x, 0.0, isp.linear_max)


def _check_even(h: int, w: int) -> None:
    if h % 2 or w % 2:
        raise ValueError(f"Bayer pattern requires even spatial dims, got {h}x{w}")


def mosaic(linear: np.ndarray) -> np.ndarray:
    """Sample a linear RGB image (2H, 2W, 3) onto an RGGB Bayer plane (2H, 2W)."""
    linear = _check_rgb(linear)
    h, w, _ = linear.shape
    _check_even(h, w)
    plane = np.empty((h, w), dtype=linear.dtype)
    plane[0::2, 0::2] = linear[0::2, 0::2, 0]
    plane[0::2, 1::2] = linear[0::2, 1::2, 1]
    plane[1::2, 0::2] = linear[1::2, 0::2, 1]
    plane[1::2, 1::2] = linear[1::2, 1::2, 2]
    return plane


def pack_bayer(plane: np.ndarray) -> np.ndarray:
    """Rearrange a Bayer plane (2H, 2W) into packed raw (H, W, 4), order (R, Gr, Gb, B)."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D Bayer plane, got shape {plane.shape}")
    h, w = plane.shape
    _check_even(h, w)
    return np.stack([plane[i::2, j::2] for i, j in RGGB_SITES], axis=-1)


def unpack_bayer(packed: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`pack_bayer`."""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[-1] != 4:
        raise ValueError(f"expected packed raw (H, W, 4), got {packed.shape}")
    h, w, _ = packed.shape
    plane = np.empty((2 * h, 2 * w), dtype=packed.dtype)
    for c, (i, j) in enumerate(RGGB_SITES):
        plane[i::2, j::2] = packed[:, :, c]
    return plane


def extract_green(packed: np.ndarray, packed_map: np.ndarray):
    """Select the two green sub-images (Gr, Gb) of a packed raw and its noise map."""
    return packed[:, :, list(GREEN_CHANNELS)], packed_map[:, :, list(GREEN_CHANNELS)]


def extract_red_blue(packed: np.ndarray, packed_map: np.ndarray):
    """Select the (R, B) sub-images; the guide source for the RB ablation."""
    return packed[:, :, list(RED_BLUE_CHANNELS)], packed_map[:, :, list(RED_BLUE_CHANNELS)]


# Bilinear CFA interpolation kernels. Green sites are filled from the
# 4-neighbourhood; red/blue from the sparse quarter-density plane.
_K_GREEN = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0
_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0


def demosaic_bilinear(packed: np.ndarray) -> np.ndarray:
    """Bilinear demosaic of packed raw (H, W, 4) to linear RGB (2H, 2W, 3).

    The reference baseline used by training sanity checks; not part of the
    restoration network.
    """
    plane = unpack_bayer(packed)
    h, w = plane.shape
    rgb = np.zeros((h, w, 3), dtype=plane.dtype)
    masks = np.zeros((h, w, 3), dtype=plane.dtype)
    rgb[0::2, 0::2, 0] = plane[0::2, 0::2]
    rgb[0::2, 1::2, 1] = plane[0::2, 1::2]
    rgb[1::2, 0::2, 1] = plane[1::2, 0::2]
    rgb[1::2, 1::2, 2] = plane[1::2, 1::2]
    masks[0::2, 0::2, 0] = 1.0
    masks[0::2, 1::2, 1] = 1.0
    masks[1::2, 0::2, 1] = 1.0
    masks[1::2, 1::2, 2] = 1.0
    out = np.empty_like(rgb)
    for c, k in ((0, _K_RB), (1, _K_GREEN), (2, _K_RB)):
        num = scipy.ndimage.convolve(rgb[:, :, c], k, mode="mirror")
        den = scipy.ndimage.convolve(masks[:, :, c], k, mode="mirror")
        out[:, :, c] = num / np.maximum(den, 1e-12)
    return out
