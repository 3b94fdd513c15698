"""Reconstruction losses in linear and sRGB space.

The robust penalty is implemented exactly as one global norm under one
square root, sqrt(||a - b||^2 + eps^2); a conventional per-pixel mean
variant is available behind ``per_pixel=True`` for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nnprim import engine as en
from .rawproc import DEFAULT_ISP, IspParams, process


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-3
    srgb_weight: float = 1.0      # trade-off between the linear and sRGB terms
    isp: IspParams = field(default_factory=lambda: DEFAULT_ISP)
    per_pixel: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.srgb_weight < 0:
            raise ValueError("srgb_weight must be nonnegative")


def _is_tensor(x) -> bool:
    return isinstance(x, en.Tensor)


def charbonnier(a, b, eps: float = 1e-3, per_pixel: bool = False):
    """sqrt(||a - b||^2 + eps^2); a Tensor when either input is one."""
    if _is_tensor(a) or _is_tensor(b):
        at, bt = en.as_tensor(a), en.as_tensor(b)
        if at.shape != bt.shape:
            raise ValueError(f"shape mismatch: {at.shape} vs {bt.shape}")
        d = en.sub(at, bt)
        if per_pixel:
            return en.mean_all(en.sqrt(en.add_const(en.square(d), eps * eps)))
        return en.sqrt(en.add_const(en.sum_all(en.square(d)), eps * eps))
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    if per_pixel:
        return float(np.mean(np.sqrt(d * d + eps * eps)))
    return float(np.sqrt(np.sum(d * d) + eps * eps))


def _to_nchw_tensor(x) -> en.Tensor:
    """Accept (B, 3, H, W) tensors/arrays or a single (H, W, 3) array."""
    if _is_tensor(x):
        return x
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[-1] == 3:
        return en.Tensor(np.moveaxis(x, -1, 0)[None])
    return en.Tensor(x)


def loss_linear(pred, gt, cfg: LossConfig):
    return charbonnier(pred, gt, cfg.epsilon, cfg.per_pixel)


def loss_srgb(pred, gt, cfg: LossConfig):
    """Charbonnier distance after the linear->sRGB transform of both images."""
    if _is_tensor(pred) or _is_tensor(gt):
        pt = _to_nchw_tensor(pred)
        gtt = _to_nchw_tensor(gt)
        return charbonnier(en.isp_process(pt, cfg.isp),
                           en.isp_process(gtt, cfg.isp),
                           cfg.epsilon, cfg.per_pixel)
    return charbonnier(process(np.asarray(pred), cfg.isp),
                       process(np.asarray(gt), cfg.isp),
                       cfg.epsilon, cfg.per_pixel)


def total_loss(pred, gt, cfg: LossConfig):
    """linear term + srgb_weight * sRGB term."""
    lin = loss_linear(pred, gt, cfg)
    sr = loss_srgb(pred, gt, cfg)
    if _is_tensor(lin):
        return en.add(lin, en.scale(sr, cfg.srgb_weight))
    return lin + cfg.srgb_weight * sr


def total_loss_components(pred, gt, cfg: LossConfig):
    """(total, linear, srgb) sharing one graph; used by the training loop."""
    lin = loss_linear(pred, gt, cfg)
    sr = loss_srgb(pred, gt, cfg)
    if _is_tensor(lin):
        return en.add(lin, en.scale(sr, cfg.srgb_weight)), lin, sr
    return lin + cfg.srgb_weight * sr, lin, sr
