"""Initialization, optimization and the training loop.

Training is deterministic given the configured seed: per-step sample
seeds derive from (seed, step, slot), the optimizer is a single logical
thread, and two runs with the same configuration produce identical loss
curves on the same machine.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import data as gdata
from . import losses as glosses
from . import rawproc
from .losses import LossConfig
from .model import GcpNet, ModelConfig, NanError, build_model, save_checkpoint
from .nnprim import engine as en
from .nnprim.blocks import LRELU_SLOPE
from .noisemodel import NoiseRanges
from .rawproc import IspParams


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, sample_seed: int):
        super().__init__(
            f"non-finite loss at step {step}; replay with sample seed {sample_seed}")
        self.step = step
        self.sample_seed = sample_seed


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    patch_size: int = 64          # packed raw patch; RGB target is 2x
    lr0: float = 4e-4
    betas: tuple[float, float] = (0.9, 0.99)
    adam_eps: float = 1e-8
    total_steps: int = 20_000
    seed: int = 0
    noise_ranges: NoiseRanges = field(default_factory=NoiseRanges)
    frames: int = 5
    log_every: int = 50
    checkpoint_every: int = 2000
    pretrain_steps: int = 0       # dm_de: demosaicking pretrain phase

    def __post_init__(self):
        if self.patch_size % 2:
            raise ValueError("patch size must be even")
        if self.lr0 <= 0 or self.total_steps < 1:
            raise ValueError("lr0 must be positive and total_steps >= 1")


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """0.5 * lr0 * (1 + cos(pi * step / total)): lr0 at 0, zero at total."""
    if not 0 <= step <= total:
        raise ValueError("step must lie in [0, total]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total))


def init_params(model: GcpNet, seed: int) -> GcpNet:
    """Variance-scaling init: conv weights ~ N(0, 2 / (fan_in*(1+slope^2))),
    biases zero, offset-predicting heads zero (identity deformation field)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x1817])))
    gain = 2.0 / (1.0 + LRELU_SLOPE ** 2)
    for name, p in sorted(model.named_parameters()):
        if getattr(p, "zero_init", False):
            p.data = np.zeros_like(p.data)
        elif getattr(p, "fan_in", None):
            std = math.sqrt(gain / p.fan_in)
            p.data = (std * rng.standard_normal(p.data.shape)) \
                .astype(p.data.dtype)
        else:
            p.data = np.zeros_like(p.data)
    return model


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, betas=(0.9, 0.99), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        if lr == 0.0:
            # Parameters must not move at zero learning rate; moments are
            # frozen too so a zero-lr step is a true no-op.
            return
        b1, b2 = self.b1, self.b2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)) \
                .astype(p.data.dtype, copy=False)


class BurstSampler:
    """Draws training bursts from a clip source, deterministically per step."""

    def __init__(self, source, isp: IspParams, ranges: NoiseRanges,
                 frames: int, patch_raw: int, seed: int):
        self.source = source
        self.isp = isp
        self.ranges = ranges
        self.frames = frames
        self.patch_rgb = 2 * patch_raw
        self.seed = seed
        self._clips = source.clip_ids()

    def sample_seed(self, step: int, slot: int) -> int:
        ss = np.random.SeedSequence([self.seed, step, slot, 0xB1257])
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)

    def sample(self, step: int, slot: int, frame_gt: bool = False,
               zero_noise: bool = False) -> gdata.TrainSample:
        sd = self.sample_seed(step, slot)
        rng = np.random.Generator(np.random.PCG64(sd))
        clip = self._clips[int(rng.integers(len(self._clips)))]
        frames = self.source.frames(clip)
        t_max = frames.shape[0] - self.frames
        if t_max < 0:
            raise ValueError(f"clip {clip} shorter than {self.frames} frames")
        t0 = int(rng.integers(t_max + 1))
        window = frames[t0:t0 + self.frames]
        ranges = self.ranges
        if zero_noise:
            ranges = NoiseRanges(0.0, 0.0, 0.0, 0.0, "uniform")
        return gdata.synthesize_sample(window, self.isp, ranges,
                                       seed=int(rng.integers(2 ** 62)),
                                       patch=self.patch_rgb,
                                       frame_gt=frame_gt)


def _batch_tensors(samples):
    frames = np.stack([np.moveaxis(s.frames, -1, 1) for s in samples])
    maps = np.stack([np.moveaxis(s.maps, -1, 1) for s in samples])
    gt = np.stack([np.moveaxis(s.gt, -1, 0) for s in samples])
    return (np.ascontiguousarray(frames, dtype=np.float32),
            np.ascontiguousarray(maps, dtype=np.float32),
            np.ascontiguousarray(gt, dtype=np.float32))


def _stage_losses(model: GcpNet, out, gt_b, samples, loss_cfg: LossConfig):
    """Total/linear/srgb losses plus stage-specific intermediate terms."""
    total, lin, sr = glosses.total_loss_components(out.rgb, en.Tensor(gt_b),
                                                  loss_cfg)
    if out.denoised_raw is not None:
        clean_packed = np.stack([
            np.moveaxis(rawproc.pack_bayer(rawproc.mosaic(s.gt.astype(np.float64))),
                        -1, 0)
            for s in samples]).astype(np.float32)
        inter = glosses.charbonnier(out.denoised_raw, en.Tensor(clean_packed),
                                    loss_cfg.epsilon, loss_cfg.per_pixel)
        total = en.add(total, inter)
    return total, lin, sr


def train_loop(model: GcpNet, tcfg: TrainConfig, loss_cfg: LossConfig,
               sampler: BurstSampler, out_dir=None, fixed_samples=None,
               quiet: bool = True, start_step: int = 0, probe_at=(),
               probes: dict | None = None):
    """Optimize the model; returns the metrics log as a list of dicts.

    ``fixed_samples`` bypasses the sampler with a fixed list of
    TrainSamples, cycled deterministically (used by overfit checks).
    ``start_step`` resumes the deterministic sample stream mid-schedule
    (replay from a checkpoint). ``probe_at`` asks for the full fixed-set
    loss to be recorded in ``probes`` after those step counts complete.
    Writes metrics.csv and periodic checkpoints when ``out_dir`` is given.
    """
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    opt = Adam(model.parameters(), betas=tcfg.betas, eps=tcfg.adam_eps)
    metrics = []
    probe_at = set(probe_at)
    pretrain = tcfg.pretrain_steps if model.cfg.stage_layout == "dm_de" else 0

    for step in range(start_step, tcfg.total_steps):
        lr = cosine_lr(step, tcfg.total_steps, tcfg.lr0)
        in_pretrain = step < pretrain
        if fixed_samples is not None:
            idx = [(step * tcfg.batch_size + i) % len(fixed_samples)
                   for i in range(tcfg.batch_size)]
            samples = [fixed_samples[i] for i in idx]
            sample_seed = idx[0]
        else:
            samples = [sampler.sample(step, i, frame_gt=in_pretrain,
                                      zero_noise=in_pretrain)
                       for i in range(tcfg.batch_size)]
            sample_seed = sampler.sample_seed(step, 0)
        frames_b, maps_b, gt_b = _batch_tensors(samples)

        model.zero_grad()
        try:
            out = model.forward(frames_b, maps_b)
            if in_pretrain:
                # Single-frame demosaicking supervision on the per-frame heads.
                assert out.frame_rgb is not None
                terms = None
                for t, head_out in enumerate(out.frame_rgb):
                    tgt = np.stack([np.moveaxis(s.frame_gt[t], -1, 0)
                                    for s in samples]).astype(np.float32)
                    term = glosses.charbonnier(head_out, en.Tensor(tgt),
                                               loss_cfg.epsilon)
                    terms = term if terms is None else en.add(terms, term)
                total = en.scale(terms, 1.0 / len(out.frame_rgb))
                lin = sr = total
            else:
                total, lin, sr = _stage_losses(model, out, gt_b, samples,
                                               loss_cfg)
        except NanError as exc:
            raise TrainingDiverged(step, sample_seed) from exc
        loss_val = float(total.data)
        if not np.isfinite(loss_val):
            raise TrainingDiverged(step, sample_seed)
        total.backward()
        opt.step(lr)

        row = {"step": step, "lr": lr, "loss_linear": float(lin.data),
               "loss_srgb": float(sr.data), "loss_total": loss_val}
        metrics.append(row)
        if (step + 1) in probe_at and probes is not None \
                and fixed_samples is not None:
            probes[step + 1] = full_set_loss(model, fixed_samples, loss_cfg)
        if not quiet and step % tcfg.log_every == 0:
            print(f"step {step:6d} lr {lr:.2e} loss {loss_val:.5f}")
        if out_dir is not None and tcfg.checkpoint_every > 0 \
                and (step + 1) % tcfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"step{step + 1:07d}.gcpn"),
                            model, step=step + 1)

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "final.gcpn"), model,
                        step=tcfg.total_steps)
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["step", "lr", "loss_linear",
                                               "loss_srgb", "loss_total"])
            w.writeheader()
            w.writerows(metrics)
    return metrics


def full_set_loss(model: GcpNet, samples, loss_cfg: LossConfig) -> float:
    """Loss over a whole fixed sample set (used by overfit checks)."""
    vals = []
    for s in samples:
        frames_b, maps_b, gt_b = _batch_tensors([s])
        with en.no_grad():
            out = model.forward(frames_b, maps_b)
            total, _, _ = _stage_losses(model, out, gt_b, [s], loss_cfg)
        vals.append(float(total.data))
    return float(np.mean(vals))


def make_fixed_bursts(n_bursts: int = 4, patch_raw: int = 32, frames: int = 5,
                      seed: int = 0, isp: IspParams | None = None,
                      ranges: NoiseRanges | None = None):
    """A small fixed training set of synthesized bursts (overfit checks)."""
    isp = isp or rawproc.DEFAULT_ISP
    ranges = ranges or NoiseRanges()
    source = gdata.SyntheticClipSource(n_clips=n_bursts, n_frames=frames,
                                       height=4 * patch_raw,
                                       width=4 * patch_raw, seed=seed)
    samples = []
    for i, clip_id in enumerate(source.clip_ids()):
        samples.append(gdata.synthesize_sample(
            source.frames(clip_id), isp, ranges, seed=seed + 977 * i,
            patch=2 * patch_raw))
    return samples


def trainset_psnr(model: GcpNet, samples, isp: IspParams) -> float:
    """Mean gamma-corrected PSNR of model outputs over a fixed sample set."""
    from . import evaluation as geval
    from .model import BurstInput

    vals = []
    for s in samples:
        burst = BurstInput(s.frames, s.maps)
        pred = model.predict_burst(burst)
        vals.append(_gamma_psnr(pred, s.gt, isp))
    return float(np.mean(vals))


def baseline_psnr(samples, isp: IspParams) -> float:
    """Mean PSNR of the bilinear-demosaic-of-noisy-reference baseline."""
    vals = []
    for s in samples:
        ref = s.frames[s.ref_index].astype(np.float64)
        pred = rawproc.demosaic_bilinear(np.maximum(ref, 0.0))
        vals.append(_gamma_psnr(pred, s.gt, isp))
    return float(np.mean(vals))


def _gamma_psnr(pred_linear, gt_linear, isp: IspParams) -> float:
    from . import evaluation as geval

    pred = rawproc.process(np.clip(np.asarray(pred_linear, dtype=np.float64),
                                   0.0, None), isp)
    gt = rawproc.process(np.asarray(gt_linear, dtype=np.float64), isp)
    return geval.psnr(np.clip(pred, 0, 1), np.clip(gt, 0, 1))
