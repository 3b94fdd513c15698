"""The burst restoration network and its ablation variants.

Dataflow: a green-channel branch extracts guide features from the noisy
green sub-images and their noise maps; a per-frame intra-frame stack of
guided attention blocks models each frame; an inter-frame module aligns
all frames to the reference with modulated deformable convolutions whose
offsets are estimated (by default) from the cleaner green features across
a 3-level pyramid with a ConvLSTM temporal regularizer; a merge module
fuses the aligned features, upsamples 2x with guided modulation and runs
a 3-scale U-Net down to the full-resolution linear RGB prediction.

Spatial contract: packed raw inputs (B, N, 4, H, W) with H, W divisible
by 4 map to linear RGB (B, 3, 2H, 2W).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .nnprim import engine as en
from .nnprim import blocks as nb
from .nnprim.blocks import (Conv2d, ConvTranspose2d, ConvLSTMCell, DeformConv2d,
                            GCABlock, AdaptiveUpsample, Module, ModuleList,
                            ResidualBlock, lrelu)
from .rawproc import GREEN_CHANNELS, RED_BLUE_CHANNELS

CHECKPOINT_MAGIC = b"GCPN1"

#: Widths tuned once against the parameter/FLOP budget, then frozen.
LSTM_HIDDEN = 16
DEFORM_GROUPS = 8
DEFORM_K = 3
UNET_BOTTLENECK_BLOCKS = 7


class NanError(RuntimeError):
    """A network stage produced non-finite values."""

    def __init__(self, stage: str):
        super().__init__(f"non-finite values produced by {stage}")
        self.stage = stage


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 5
    base_width: int = 64
    gg_units: int = 4
    pyramid_levels: int = 3
    use_lstm: bool = True
    use_multiscale_offset: bool = True
    use_gcp_offset: bool = True
    use_gcp_upsample: bool = True
    use_interf: bool = True
    guide_source: str = "green"
    stage_layout: str = "one_stage"
    unet_scales: int = 3

    def __post_init__(self):
        if self.frames < 1 or self.frames % 2 == 0:
            raise ValueError("frames must be odd (center reference)")
        if not 0 <= self.gg_units <= 5:
            raise ValueError("gg_units must lie in 0..5")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.guide_source not in ("green", "red_blue"):
            raise ValueError(f"unknown guide_source {self.guide_source!r}")
        if self.stage_layout not in ("one_stage", "de_dm", "dm_de"):
            raise ValueError(f"unknown stage_layout {self.stage_layout!r}")
        if self.unet_scales != 3:
            raise ValueError("the merge U-Net is fixed at 3 scales")

    @property
    def gca_blocks(self) -> int:
        # One guided block per GG unit; without guidance the stack keeps
        # its default depth of four residual+attention blocks.
        return self.gg_units if self.gg_units >= 1 else 4

    @property
    def ref_index(self) -> int:
        return self.frames // 2

    @property
    def needs_gcp_branch(self) -> bool:
        return (self.gg_units > 0 or self.use_gcp_offset
                or self.use_gcp_upsample)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "frames", "base_width", "gg_units", "pyramid_levels", "use_lstm",
            "use_multiscale_offset", "use_gcp_offset", "use_gcp_upsample",
            "use_interf", "guide_source", "stage_layout", "unet_scales")}

    @staticmethod
    def from_json(d: dict) -> "ModelConfig":
        return ModelConfig(**d)

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class BurstInput:
    """A single burst: frames/maps are (N, H, W, 4) channels-last arrays."""

    frames: np.ndarray
    maps: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.maps = np.asarray(self.maps)
        if self.frames.shape != self.maps.shape or self.frames.ndim != 4 \
                or self.frames.shape[-1] != 4:
            raise ValueError("frames and maps must both be (N, H, W, 4)")
        if np.min(self.maps) < 0:
            raise ValueError("noise maps must be nonnegative")

    @property
    def ref_index(self) -> int:
        return self.frames.shape[0] // 2

    def to_batch(self) -> tuple[np.ndarray, np.ndarray]:
        """Channels-first (1, N, 4, H, W) copies for the network."""
        f = np.moveaxis(self.frames, -1, 1)[None].astype(np.float32)
        m = np.moveaxis(self.maps, -1, 1)[None].astype(np.float32)
        return np.ascontiguousarray(f), np.ascontiguousarray(m)


@dataclass
class ForwardResult:
    rgb: en.Tensor
    denoised_raw: en.Tensor | None = None
    frame_rgb: list | None = None


class GcpBranch(Module):
    """Guide feature extractor over (guide channels, their noise maps)."""

    def __init__(self, cfg: ModelConfig):
        c = cfg.base_width
        self.first = Conv2d(4, c)
        self.guide_convs = ModuleList([Conv2d(c, c) for _ in range(cfg.gg_units)])
        self.pyr = ModuleList([Conv2d(c, c, stride=2)
                               for _ in range(cfg.pyramid_levels - 1)])

    def __call__(self, x):
        h = lrelu(self.first(x))
        guides = []
        for conv in self.guide_convs:
            h = lrelu(conv(h))
            guides.append(h)
        pyramid = [h]
        for conv in self.pyr:
            pyramid.append(lrelu(conv(pyramid[-1])))
        return guides, h, pyramid


class IntraFrame(Module):
    """Per-frame feature modeling: initial conv then guided attention blocks."""

    def __init__(self, cfg: ModelConfig):
        c = cfg.base_width
        self.m0 = Conv2d(8, c)
        self.blocks = ModuleList([
            GCABlock(c, guided=(cfg.gg_units > 0))
            for _ in range(cfg.gca_blocks)])
        self.pyr = ModuleList([Conv2d(c, c, stride=2)
                               for _ in range(cfg.pyramid_levels - 1)])

    def __call__(self, y, m, guides):
        f = self.m0(en.concat([y, m], axis=1))
        for i, blk in enumerate(self.blocks):
            f = blk(f, guides[i] if guides else None)
        pyramid = [f]
        for conv in self.pyr:
            pyramid.append(lrelu(conv(pyramid[-1])))
        return f, pyramid


class InterFrameScale(Module):
    """Per-scale machinery of the alignment module."""

    def __init__(self, cfg: ModelConfig, coarsest: bool, finest_chain: bool):
        c = cfg.base_width
        field_ch = DEFORM_GROUPS * 3 * DEFORM_K * DEFORM_K
        self.field_ch = field_ch
        self.g_if = Conv2d(2 * c, c)
        if cfg.use_lstm:
            self.lstm = ConvLSTMCell(c, LSTM_HIDDEN)
            self.g_h = Conv2d(c + LSTM_HIDDEN, c)
        else:
            self.lstm = None
        self.multiscale = cfg.use_multiscale_offset and not coarsest
        if self.multiscale:
            self.proj = Conv2d(field_ch, c, k=1, pad=0)
            self.g2 = Conv2d(2 * c, c)
        else:
            self.g2 = Conv2d(c, c)
        self.g1 = Conv2d(c, field_ch, k=1, pad=0, zero_init=True)
        self.dcn = DeformConv2d(c, groups=DEFORM_GROUPS, k=DEFORM_K)
        # Fuses this scale's aligned feature with the upsampled coarser one.
        self.fuse = Conv2d(2 * c, c) if finest_chain else None


def _slice_frame(t_all: en.Tensor, b: int, n: int, i: int) -> en.Tensor:
    """Select frame ``i`` from a frame-batched (B*N, ...) tensor -> (B, ...)."""
    rest = t_all.shape[1:]
    v = en.reshape(t_all, (b, n) + rest)
    return en.reshape(en.narrow(v, 1, i, 1), (b,) + rest)


def _stack_frames(parts: list[en.Tensor]) -> en.Tensor:
    """Inverse of :func:`_slice_frame`: N x (B, ...) -> (B*N, ...)."""
    b = parts[0].shape[0]
    rest = parts[0].shape[1:]
    expanded = [en.reshape(p, (b, 1) + rest) for p in parts]
    return en.reshape(en.concat(expanded, axis=1), (b * len(parts),) + rest)


class InterFrame(Module):
    """Pyramidal deformable alignment with LSTM-regularized offset features.

    All frames ride in the batch dimension; only the temporal LSTM scan is
    sequential.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        s = cfg.pyramid_levels
        self.scales = ModuleList([
            InterFrameScale(cfg, coarsest=(i == s - 1), finest_chain=(i < s - 1))
            for i in range(s)])

    def __call__(self, feat_pyr_all, guide_pyr_all, b: int, n: int, ref: int):
        cfg = self.cfg
        src = guide_pyr_all if cfg.use_gcp_offset else feat_pyr_all
        aligned_prev = None
        field_prev = None
        for s in range(cfg.pyramid_levels - 1, -1, -1):
            sc = self.scales[s]
            cur = src[s]
            ref_tiled = en.repeat_batch(_slice_frame(cur, b, n, ref), n)
            fi = sc.g_if(en.concat([cur, ref_tiled], axis=1))
            if sc.lstm is not None:
                hs = []
                state = None
                for t in range(n):
                    fit = _slice_frame(fi, b, n, t)
                    if state is None:
                        state = sc.lstm.init_state(b, fit.shape[2], fit.shape[3],
                                                   dtype=fit.dtype)
                    h_t, c_t = sc.lstm(fit, state)
                    state = (h_t, c_t)
                    hs.append(h_t)
                h_all = _stack_frames(hs)
                fi = lrelu(sc.g_h(en.concat([fi, h_all], axis=1)))
            if sc.multiscale:
                up = _upsample_field(field_prev, sc.field_ch)
                o = lrelu(sc.g2(en.concat([fi, sc.proj(up)], axis=1)))
            else:
                o = lrelu(sc.g2(fi))
            raw_field = sc.g1(o)
            field_prev = raw_field
            offsets, masks = nb.split_offset_field(
                raw_field, DEFORM_GROUPS, DEFORM_K * DEFORM_K)
            hat = lrelu(sc.dcn(feat_pyr_all[s], offsets, masks))
            if sc.fuse is not None:
                hat = lrelu(sc.fuse(en.concat(
                    [hat, en.upsample_bilinear2x(aligned_prev)], axis=1)))
            aligned_prev = hat
        return aligned_prev


def _upsample_field(raw_field, field_ch: int):
    """Upsample a raw offset/mask field 2x; offset channels scale with resolution."""
    up = en.upsample_bilinear2x(raw_field)
    n_off = field_ch // 3 * 2
    off = en.scale(en.narrow(up, 1, 0, n_off), 2.0)
    logits = en.narrow(up, 1, n_off, field_ch - n_off)
    return en.concat([off, logits], axis=1)


class UNet3(Module):
    """Three-scale U-Net with strided-conv downsampling and transposed-conv
    upsampling; most capacity sits in the bottleneck residual stack."""

    def __init__(self, c: int):
        w0, w1, w2 = c, 2 * c, 4 * c
        self.enc1 = Conv2d(w0, w0)
        self.down1 = Conv2d(w0, w1, stride=2)
        self.enc2 = Conv2d(w1, w1)
        self.down2 = Conv2d(w1, w2, stride=2)
        self.bott = ModuleList([ResidualBlock(w2)
                                for _ in range(UNET_BOTTLENECK_BLOCKS)])
        self.up2 = ConvTranspose2d(w2, w1)
        self.dec2 = Conv2d(2 * w1, w1)
        self.up1 = ConvTranspose2d(w1, w0)
        self.dec1 = Conv2d(2 * w0, w0)

    def __call__(self, x):
        e1 = lrelu(self.enc1(x))
        e2 = lrelu(self.enc2(lrelu(self.down1(e1))))
        b = lrelu(self.down2(e2))
        for blk in self.bott:
            b = blk(b)
        d2 = lrelu(self.dec2(en.concat([self.up2(b), e2], axis=1)))
        d1 = lrelu(self.dec1(en.concat([self.up1(d2), e1], axis=1)))
        return d1


class MergeModule(Module):
    """Aggregate aligned features, guided 2x upsampling, U-Net, RGB head."""

    def __init__(self, cfg: ModelConfig):
        c = cfg.base_width
        self.m_m = Conv2d(cfg.frames * c, c)
        if cfg.stage_layout == "de_dm":
            self.denoise_head = Conv2d(c, 4)
            self.re_embed = Conv2d(4, c)
        else:
            self.denoise_head = None
        self.adaptive = AdaptiveUpsample(c, guided=cfg.use_gcp_upsample)
        self.unet = UNet3(c)
        self.out_conv = Conv2d(c, 3)

    def __call__(self, merged_features, guide_final):
        fm = self.m_m(merged_features)
        denoised = None
        if self.denoise_head is not None:
            # Two-stage de->dm: the denoised raw is the sole input of the
            # demosaicking half.
            denoised = self.denoise_head(fm)
            fm = lrelu(self.re_embed(denoised))
        up = self.adaptive(fm, guide_final)
        rgb = self.out_conv(self.unet(up))
        return rgb, denoised


class DemosaicHead(Module):
    """Per-frame noisy demosaicking head for the dm_de two-stage variant."""

    def __init__(self, c: int):
        self.up = ConvTranspose2d(c, c)
        self.out = Conv2d(c, 3)

    def __call__(self, f):
        return self.out(lrelu(self.up(f)))


class GcpNet(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        if cfg.needs_gcp_branch:
            self.gcp = GcpBranch(cfg)
        else:
            self.gcp = None
        self.intra = IntraFrame(cfg)
        self.inter = InterFrame(cfg) if cfg.use_interf else None
        self.merge = MergeModule(cfg)
        if cfg.stage_layout == "dm_de":
            self.dm_head = DemosaicHead(cfg.base_width)
        else:
            self.dm_head = None

    # -- forward -----------------------------------------------------------

    def __call__(self, frames, maps) -> ForwardResult:
        return self.forward(frames, maps)

    def forward(self, frames, maps) -> ForwardResult:
        """frames/maps: (B, N, 4, H, W) arrays or Tensors; H, W divisible by 4."""
        frames_t = en.as_tensor(frames)
        maps_t = en.as_tensor(maps)
        b, n, c4, h, w = frames_t.shape
        cfg = self.cfg
        if n != cfg.frames or c4 != 4:
            raise ValueError(f"burst shape {frames_t.shape} does not match "
                             f"config frames={cfg.frames}")
        if h % 4 or w % 4:
            raise ValueError("H and W must be divisible by 4")
        guide_idx = GREEN_CHANNELS if cfg.guide_source == "green" \
            else RED_BLUE_CHANNELS

        # All per-frame modules share weights; frames ride in the batch dim.
        y_all = en.reshape(frames_t, (b * n, 4, h, w))
        m_all = en.reshape(maps_t, (b * n, 4, h, w))

        guides_all: list = []
        guide_final_ref = None
        guide_pyr_all = None
        if self.gcp is not None:
            parts = [en.narrow(y_all, 1, ch, 1) for ch in guide_idx]
            parts += [en.narrow(m_all, 1, ch, 1) for ch in guide_idx]
            gin = en.concat(parts, axis=1)
            guides_all, final_all, guide_pyr_all = self.gcp(gin)
            guide_final_ref = _slice_frame(final_all, b, n, cfg.ref_index)
            _check_finite(guide_final_ref, "gcp branch")

        f_all, feat_pyr_all = self.intra(
            y_all, m_all, guides_all if cfg.gg_units > 0 else [])
        _check_finite(f_all, "intra-frame module")

        frame_rgb = None
        if self.dm_head is not None:
            head_all = self.dm_head(f_all)
            frame_rgb = [_slice_frame(head_all, b, n, t) for t in range(n)]

        if self.inter is not None:
            aligned_all = self.inter(feat_pyr_all, guide_pyr_all, b, n,
                                     cfg.ref_index)
            _check_finite(aligned_all, "inter-frame module")
        else:
            aligned_all = f_all

        merged = en.reshape(aligned_all, (b, n * cfg.base_width, h, w))
        rgb, denoised = self.merge(merged, guide_final_ref)
        _check_finite(rgb, "merge module")
        return ForwardResult(rgb=rgb, denoised_raw=denoised, frame_rgb=frame_rgb)

    def predict_burst(self, burst: BurstInput) -> np.ndarray:
        """Inference on one burst; returns (2H, 2W, 3) linear RGB, clamped at 0."""
        f, m = burst.to_batch()
        with en.no_grad():
            out = self.forward(f, m).rgb.data[0]
        return np.maximum(np.moveaxis(out, 0, -1), 0.0)


def _check_finite(t: en.Tensor, stage: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NanError(stage)


def build_model(cfg: ModelConfig) -> GcpNet:
    return GcpNet(cfg)


# ---------------------------------------------------------------------------
# Parameter / FLOP accounting
# ---------------------------------------------------------------------------

def count_params_flops(cfg: ModelConfig, height: int = 64, width: int = 64):
    """Exact parameter count and analytic FLOPs for an N-frame forward pass.

    FLOPs follow the multiply-accumulate convention (2 FLOPs per MAC) for
    every convolution, counted at its output resolution (input resolution
    for transposed convs); deformable sampling adds 9*K*C FLOPs per output
    position for interpolation and mask modulation. Pointwise
    nonlinearities and attention rescaling are not counted. Default
    geometry is 5 packed frames of 64x64x4, i.e. Bayer frames of 128x128,
    reconstructing 128x128x3 RGB.
    """
    model = build_model(cfg)
    params = model.param_count()

    flops = 0.0
    n = cfg.frames
    s_levels = cfg.pyramid_levels

    def conv_fl(cin, cout, hw, k=3):
        return 2.0 * k * k * cin * cout * hw

    hw = {0: height * width}
    for s in range(1, s_levels):
        hw[s] = hw[s - 1] // 4
    hw_rgb = 4 * height * width

    c = cfg.base_width
    if cfg.needs_gcp_branch:
        per = conv_fl(4, c, hw[0]) + cfg.gg_units * conv_fl(c, c, hw[0])
        for s in range(1, s_levels):
            per += conv_fl(c, c, hw[s])
        flops += n * per

    per = conv_fl(8, c, hw[0])
    mid = max(c // 4, 1)
    for _ in range(cfg.gca_blocks):
        if cfg.gg_units > 0:
            per += 2 * conv_fl(c, c, hw[0])          # gamma/beta convs
        per += 4 * conv_fl(c, c, hw[0])              # two residual blocks
        per += 2.0 * (c * mid + mid * c)             # channel attention 1x1s
        per += conv_fl(c, mid, hw[0]) + conv_fl(mid, 1, hw[0])  # spatial attn
    for s in range(1, s_levels):
        per += conv_fl(c, c, hw[s])
    flops += n * per

    if cfg.use_interf:
        field_ch = DEFORM_GROUPS * 3 * DEFORM_K * DEFORM_K
        kk = DEFORM_K * DEFORM_K
        for s in range(s_levels):
            per = conv_fl(2 * c, c, hw[s])                      # g_if
            if cfg.use_lstm:
                per += conv_fl(c + LSTM_HIDDEN, 4 * LSTM_HIDDEN, hw[s])
                per += conv_fl(c + LSTM_HIDDEN, c, hw[s])       # g_h
            coarsest = s == s_levels - 1
            if cfg.use_multiscale_offset and not coarsest:
                per += conv_fl(field_ch, c, hw[s], k=1)         # proj
                per += conv_fl(2 * c, c, hw[s])                 # g2
            else:
                per += conv_fl(c, c, hw[s])
            per += conv_fl(c, field_ch, hw[s], k=1)             # g1
            per += conv_fl(c, c, hw[s])                         # dcn weights
            per += 9.0 * kk * c * hw[s]                         # sampling
            if not coarsest:
                per += conv_fl(2 * c, c, hw[s])                 # fuse
            flops += n * per

    flops += conv_fl(n * c, c, hw[0])                           # merge conv
    if cfg.stage_layout == "de_dm":
        flops += conv_fl(c, 4, hw[0]) + conv_fl(4, c, hw[0])
    if cfg.stage_layout == "dm_de":
        flops += n * (conv_fl(c, c, hw[0]) + conv_fl(c, 3, hw_rgb))
    flops += conv_fl(c, c, hw[0])                               # up_feat tconv
    if cfg.use_gcp_upsample:
        flops += conv_fl(c, c, hw[0])                           # up_guide tconv
        flops += 2 * conv_fl(c, c, hw_rgb)                      # gamma/beta
    w0, w1, w2 = c, 2 * c, 4 * c
    u_hw = {0: hw_rgb, 1: hw_rgb // 4, 2: hw_rgb // 16}
    flops += conv_fl(w0, w0, u_hw[0])                           # enc1
    flops += conv_fl(w0, w1, u_hw[1])                           # down1
    flops += conv_fl(w1, w1, u_hw[1])                           # enc2
    flops += conv_fl(w1, w2, u_hw[2])                           # down2
    flops += UNET_BOTTLENECK_BLOCKS * 2 * conv_fl(w2, w2, u_hw[2])
    flops += conv_fl(w2, w1, u_hw[2])                           # up2 tconv
    flops += conv_fl(2 * w1, w1, u_hw[1])                       # dec2
    flops += conv_fl(w1, w0, u_hw[1])                           # up1 tconv
    flops += conv_fl(2 * w0, w0, u_hw[0])                       # dec1
    flops += conv_fl(w0, 3, u_hw[0])                            # out conv
    return params, flops


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: GcpNet, step: int = 0,
                    extra: dict | None = None) -> None:
    """Versioned container: magic, JSON header, raw tensors in header order."""
    names = []
    blobs = []
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        names.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format_version": 1,
        "config": model.cfg.to_json(),
        "step": int(step),
        "tensors": names,
        "extra": extra or {},
    }
    hj = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hj)))
        fh.write(hj)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Returns (model, step, extra); raises on a bad magic string."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: invalid checkpoint magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        state = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            state[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape)
    cfg = ModelConfig.from_json(header["config"])
    model = build_model(cfg)
    model.load_state_dict(state)
    return model, header["step"], header.get("extra", {})
