"""A tour of the network blocks and their closed-form behaviours.

Every gradient in these blocks is hand-written and checked against finite
differences by the test suite; here we exercise the forward semantics.
"""

import numpy as np

from gcpnet.nnprim import blocks as nb
from gcpnet.nnprim import engine as en

rng = np.random.default_rng(0)

print("== Guided modulation unit (pixel-wise scale and bias from a guide) ==")
gg = nb.GGUnit(4)
gg.conv_gamma.b.data[:] = 0.5
gg.conv_beta.b.data[:] = 0.1
f = en.Tensor(np.full((1, 4, 4, 4), 2.0))
guide = en.Tensor(np.zeros((1, 4, 4, 4)))
print(f"f=2, gamma=0.5, beta=0.1  ->  output = {gg(f, guide).data[0,0,0,0]} "
      "(0.5*2 + 0.1)")

print("\n== Channel and spatial attention ==")
ca = nb.ChannelAttention(8)
sa = nb.SpatialAttention(8)
x = en.Tensor(rng.standard_normal((1, 8, 6, 6)))
print(f"zero-initialized attention: sigmoid(0) = 0.5, so output = 0.5*input: "
      f"{np.allclose(ca(x).data, 0.5 * x.data)} / "
      f"{np.allclose(sa(x).data, 0.5 * x.data)}")

print("\n== Modulated deformable convolution ==")
h = w = 8
ramp = np.tile(np.arange(w, dtype=np.float64), (h, 1))[None, None]
offsets = np.zeros((1, 1, 1, 2, h, w))
offsets[:, :, :, 1] = 0.5              # +0.5 pixels along x
masks = np.ones((1, 1, 1, h, w))
weight = np.ones((1, 1, 1, 1))
out = en.deform_conv2d(en.Tensor(ramp), en.Tensor(offsets), en.Tensor(masks),
                       en.Tensor(weight), None, groups=1)
print("1x1 kernel, offset +0.5 on the ramp f(x)=x: "
      f"row 0 -> {np.round(out.data[0, 0, 0, :5], 2)} (x + 0.5 in the interior)")

x = rng.standard_normal((1, 8, 6, 6))
wt = rng.standard_normal((8, 8, 3, 3))
zero_offs = np.zeros((1, 2, 9, 2, 6, 6))
unit_masks = np.ones((1, 2, 9, 6, 6))
d = en.deform_conv2d(en.Tensor(x), en.Tensor(zero_offs), en.Tensor(unit_masks),
                     en.Tensor(wt), None, groups=2)
c = en.conv2d(en.Tensor(x), en.Tensor(wt), None)
print(f"zero offsets + unit masks degenerate to a standard convolution: "
      f"max |diff| = {np.max(np.abs(d.data - c.data)):.2e}")

print("\n== Convolutional LSTM cell ==")
cell = nb.ConvLSTMCell(4, 3)
c0 = rng.standard_normal((1, 3, 5, 5))
h1, c1 = cell(en.Tensor(rng.standard_normal((1, 4, 5, 5))),
              (en.Tensor(np.zeros((1, 3, 5, 5))), en.Tensor(c0)))
print(f"zero parameters: c' = 0.5*c0 ({np.allclose(c1.data, 0.5 * c0)}), "
      f"h' = 0.5*tanh(0.5*c0) ({np.allclose(h1.data, 0.5 * np.tanh(0.5 * c0))})")

print("\n== Guided 2x upsampling ==")
up = nb.AdaptiveUpsample(4, guided=True)
for _, p in up.named_parameters():
    p.data = 0.1 * rng.standard_normal(p.data.shape)
f = en.Tensor(rng.standard_normal((1, 4, 4, 4)))
g = en.Tensor(rng.standard_normal((1, 4, 4, 4)))
print(f"input {f.shape} -> output {up(f, g).shape} (exact 2x)")
