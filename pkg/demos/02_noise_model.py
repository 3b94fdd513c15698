"""The raw noise model and why the green channel wins.

Shot noise scales with the signal and read noise does not: the variance
at a pixel with clean value x is sigma_s*x + sigma_r**2. Brighter
channels therefore enjoy better SNR, and after inverse white balance the
green channel is the brightest one on the sensor.
"""

import numpy as np

from gcpnet import data, rawproc, snr
from gcpnet.noisemodel import NoiseParams, NoiseRanges, apply_noise, \
    noise_map, sample_noise_params

high = NoiseParams(6.4e-3, 2e-2)   # the published "high" evaluation setting
low = NoiseParams(2.5e-3, 1e-2)    # the published "low" setting

print("Empirical variance vs the model sigma_s*x + sigma_r^2 (1e6 samples):")
for name, p in (("high", high), ("low", low)):
    for x in (0.0, 0.5, 1.0):
        clean = np.full(10 ** 6, x)
        noisy = apply_noise(clean, p, seed=1)
        target = p.sigma_s * x + p.sigma_r ** 2
        print(f"  {name:4s} x={x:3.1f}: measured {np.var(noisy - clean):.3e} "
              f"vs model {target:.3e}")

print("\nNoise maps use the observed frame as signal proxy:")
m = noise_map(np.array([0.0, 0.5, 1.0, -0.2]), high)
print(f"  y = [0, 0.5, 1, -0.2] -> m = {np.round(m, 5)}  "
      "(negatives clamp to the read floor)")

print("\nTraining noise levels are drawn log-uniformly:")
ranges = NoiseRanges()
draws = [sample_noise_params(ranges, seed=i) for i in range(5)]
for d in draws:
    print(f"  sigma_s={d.sigma_s:.2e}  sigma_r={d.sigma_r:.2e}")

print("\nGreen-channel SNR dominance over 20 synthetic scenes (high noise):")
images = [data.synthetic_srgb_image(seed=i) for i in range(20)]
report = snr.snr_report(images, rawproc.IspParams(), high, seed=0)
for rec in report.ordered_by_green()[:3]:
    print(f"  {rec.image_id}: R {rec.snr_r:5.2f} dB  G {rec.snr_g:5.2f} dB  "
          f"B {rec.snr_b:5.2f} dB")
print("  ...")
print(f"  green is strictly the best channel in "
      f"{report.green_max_fraction:.0%} of images")
