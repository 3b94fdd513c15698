"""The simulated camera color pipeline, end to end and back.

Walks one image from display sRGB down to the sensor's linear domain,
onto the Bayer grid, into packed raw planes, and back up again, checking
the exactness of each stage along the way.
"""

import numpy as np

from gcpnet import data, rawproc

isp = rawproc.IspParams()
print("Default pipeline parameters:")
print(f"  white-balance gains (R, G, B): {isp.wb_gains}")
print(f"  gamma curve: {isp.gamma.kind}")
print("  note the green gain is the lowest: dividing by the gains during")
print("  unprocessing makes green the brightest channel on the sensor.\n")

srgb = data.synthetic_srgb_image(seed=7, h=64, w=64)
print(f"sRGB test image: shape {srgb.shape}, range "
      f"[{srgb.min():.3f}, {srgb.max():.3f}]")

linear = rawproc.unprocess(srgb, isp)
means = linear.mean(axis=(0, 1))
print(f"linear (sensor) image: per-channel means R={means[0]:.3f} "
      f"G={means[1]:.3f} B={means[2]:.3f}  <- green brightest")

back = rawproc.process(linear, isp)
print(f"roundtrip process(unprocess(x)): max |err| = "
      f"{np.max(np.abs(back - srgb)):.2e}  (in-gamut values invert exactly)\n")

plane = rawproc.mosaic(linear)
packed = rawproc.pack_bayer(plane)
unpacked = rawproc.unpack_bayer(packed)
print(f"mosaic: {linear.shape} -> Bayer plane {plane.shape}")
print(f"pack:   {plane.shape} -> packed raw {packed.shape}, channels "
      f"{rawproc.PACKED_CHANNELS}")
print(f"pack/unpack bit-exact: {np.array_equal(unpacked, plane)}")

green, _ = rawproc.extract_green(packed, packed)
print(f"green sub-images: {green.shape} (the network's guidance source)\n")

demosaic = rawproc.demosaic_bilinear(packed)
err = np.abs(demosaic - linear).mean()
print(f"bilinear demosaic baseline: mean |err| vs the true linear image = "
      f"{err:.4f}")
print("(this is the reference point the learned restoration must beat)")
