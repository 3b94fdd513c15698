"""End to end at toy scale: synthesize, train, evaluate, restore.

Uses a narrow model and a few dozen steps so the whole story runs in
about a minute on a laptop; the acceptance suite runs the real thing.
"""

import os
import tempfile

import numpy as np

from gcpnet import data, evaluation, tensorio
from gcpnet.losses import LossConfig
from gcpnet.model import BurstInput, ModelConfig, build_model
from gcpnet.noisemodel import NoiseRanges
from gcpnet.rawproc import IspParams, process
from gcpnet.training import (BurstSampler, TrainConfig, baseline_psnr,
                             full_set_loss, init_params, make_fixed_bursts,
                             train_loop, trainset_psnr)

isp = IspParams()
cfg = ModelConfig(frames=3, base_width=16, gg_units=2, pyramid_levels=2)
tcfg = TrainConfig(batch_size=1, patch_size=24, lr0=1e-3, total_steps=120,
                   frames=3, seed=0, checkpoint_every=0)

print("synthesizing four fixed noisy bursts (high noise level)...")
high = NoiseRanges(6.4e-3, 6.4e-3, 2e-2, 2e-2, "uniform")
bursts = make_fixed_bursts(n_bursts=4, patch_raw=24, frames=3, seed=0,
                           isp=isp, ranges=high)
print(f"  burst frames {bursts[0].frames.shape}, target {bursts[0].gt.shape}")

model = init_params(build_model(cfg), seed=0)
loss_cfg = LossConfig(isp=isp)
start = full_set_loss(model, bursts, loss_cfg)
print(f"\ntraining {tcfg.total_steps} steps on the fixed set "
      f"(start loss {start:.3f})...")
metrics = train_loop(model, tcfg, loss_cfg, None, fixed_samples=bursts)
end = full_set_loss(model, bursts, loss_cfg)
print(f"  loss: {start:.3f} -> {end:.3f}")

model_db = trainset_psnr(model, bursts, isp)
base_db = baseline_psnr(bursts, isp)
print(f"  train PSNR {model_db:.2f} dB vs bilinear-demosaic baseline "
      f"{base_db:.2f} dB")

print("\nevaluating at both standard noise settings...")
src = data.SyntheticClipSource(n_clips=2, n_frames=4, height=48, width=48,
                               seed=3)
reports = {}
for setting in (evaluation.HIGH, evaluation.LOW):
    reports[setting.name] = evaluation.evaluate(
        model, src, setting, isp, n_frames=3, max_windows=1,
        model_label="tiny-model-N3")
print(evaluation.paper_layout_table(reports))

out_dir = tempfile.mkdtemp(prefix="gcpnet_demo_")
burst = BurstInput(bursts[0].frames, bursts[0].maps)
restored = model.predict_burst(burst)
png = os.path.join(out_dir, "restored.png")
tensorio.write_png16(png, process(restored, isp))
print(f"\nrestored the first burst to a 16-bit PNG: {png}")
