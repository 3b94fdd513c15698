"""Burst raw joint denoising and demosaicking guided by the green channel.

A numpy library covering the full desk-scale pipeline: invertible camera
color simulation, heteroscedastic raw noise synthesis, the guided burst
restoration network with hand-verified gradients, training, evaluation
and the ablation harness.
"""

from .rawproc import (GammaCurve, IspParams, demosaic_bilinear, extract_green,
                      mosaic, pack_bayer, process, unpack_bayer, unprocess)
from .noisemodel import (NoiseParams, NoiseRanges, apply_noise, noise_map,
                         sample_noise_params)
from .snr import ChannelSnrReport, channel_snr, snr_report
from .model import (BurstInput, ModelConfig, count_params_flops, build_model,
                    load_checkpoint, save_checkpoint)
from .losses import LossConfig, charbonnier, loss_srgb, total_loss
from .training import (Adam, BurstSampler, TrainConfig, cosine_lr,
                       init_params, train_loop)
from .evaluation import (HIGH, LOW, EvalSetting, OraclePredictor, evaluate,
                         paper_layout_table, psnr, run_ablation, ssim)
from .data import (DirectoryClipSource, SyntheticClipSource, TrainSample,
                   synthesize_sample)

__version__ = "0.1.0"
