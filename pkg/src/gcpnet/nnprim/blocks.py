"""Network building blocks: green-guided modulation, dual attention,
modulated deformable convolution and the convolutional LSTM cell.

Blocks hold :class:`Parameter` leaves and compose engine ops; a small
``Module`` base provides named parameter traversal for the optimizer,
initialization and checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import engine as en
from .engine import Parameter, Tensor

LRELU_SLOPE = 0.1


class Module:
    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        elif isinstance(value, ModuleList):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self.__dict__.get("_params", {}).items():
            yield (f"{prefix}{name}", p)
        for name, m in self.__dict__.get("_modules", {}).items():
            yield from m.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            raise ValueError(f"state mismatch: missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{p.data.shape} vs {state[name].shape}")
            p.data = np.array(state[name])


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__setattr__("items", [])
        for m in mods:
            self.append(m)

    def append(self, m: Module):
        self.__dict__.setdefault("_modules", {})[str(len(self.items))] = m
        self.items.append(m)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


def lrelu(x: Tensor) -> Tensor:
    return en.leaky_relu(x, LRELU_SLOPE)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1,
                 pad: int | None = None, bias: bool = True,
                 zero_init: bool = False):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.w = Parameter(np.zeros((cout, cin, k, k), dtype=np.float32),
                           fan_in=cin * k * k, zero_init=zero_init)
        self.b = Parameter(np.zeros(cout, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return en.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    """Stride-2 transposed conv giving an exact 2x spatial upsampling."""

    def __init__(self, cin: int, cout: int, k: int = 3):
        self.w = Parameter(np.zeros((cin, cout, k, k), dtype=np.float32),
                           fan_in=cin * k * k)
        self.b = Parameter(np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return en.conv_transpose2d(x, self.w, self.b, stride=2, pad=1, out_pad=1)


class GGUnit(Module):
    """Pixel-wise scale-and-bias of features, modulations learned from a guide.

    Each modulation comes from one 3x3 convolution over the guide feature.
    """

    def __init__(self, channels: int):
        self.conv_gamma = Conv2d(channels, channels)
        self.conv_beta = Conv2d(channels, channels)

    def __call__(self, f: Tensor, guide: Tensor) -> Tensor:
        if f.shape[2:] != guide.shape[2:]:
            raise ValueError(f"guide {guide.shape} not aligned with {f.shape}")
        return en.add(en.mul(self.conv_gamma(guide), f), self.conv_beta(guide))


class ChannelAttention(Module):
    """Squeeze (GAP) -> two 1x1 convs -> sigmoid; rescales each channel."""

    def __init__(self, channels: int, reduction: int = 4):
        mid = max(channels // reduction, 1)
        self.conv1 = Conv2d(channels, mid, k=1, pad=0)
        self.conv2 = Conv2d(mid, channels, k=1, pad=0)

    def weights(self, f: Tensor) -> Tensor:
        z = en.global_avg_pool(f)
        return en.sigmoid(self.conv2(lrelu(self.conv1(z))))

    def __call__(self, f: Tensor) -> Tensor:
        return en.mul(f, self.weights(f))


class SpatialAttention(Module):
    """Two convolutions + sigmoid produce an (H, W) map; no pooling involved."""

    def __init__(self, channels: int, reduction: int = 4):
        mid = max(channels // reduction, 1)
        self.conv1 = Conv2d(channels, mid)
        self.conv2 = Conv2d(mid, 1)

    def weights(self, f: Tensor) -> Tensor:
        return en.sigmoid(self.conv2(lrelu(self.conv1(f))))

    def __call__(self, f: Tensor) -> Tensor:
        return en.mul(f, self.weights(f))


class ResidualBlock(Module):
    def __init__(self, channels: int):
        self.conv1 = Conv2d(channels, channels)
        self.conv2 = Conv2d(channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return en.add(x, self.conv2(lrelu(self.conv1(x))))


class GCABlock(Module):
    """Guided modulation, two residual blocks, then channel + spatial attention.

    Output is f_r + f_r*z_c + f_r*z_s. With ``guided=False`` the modulation
    unit is absent and the block reduces to residual + attention.
    """

    def __init__(self, channels: int, guided: bool = True):
        if guided:
            self.gg = GGUnit(channels)
        else:
            self.gg = None
        self.res1 = ResidualBlock(channels)
        self.res2 = ResidualBlock(channels)
        self.ca = ChannelAttention(channels)
        self.sa = SpatialAttention(channels)

    def __call__(self, f: Tensor, guide: Tensor | None = None) -> Tensor:
        if self.gg is not None:
            if guide is None:
                raise ValueError("guided GCA block needs a guide feature")
            f = self.gg(f, guide)
        fr = self.res2(self.res1(f))
        zc = self.ca.weights(fr)
        zs = self.sa.weights(fr)
        return en.add(fr, en.add(en.mul(fr, zc), en.mul(fr, zs)))


class DeformConv2d(Module):
    """Modulated deformable 3x3 convolution; the field comes from the caller."""

    def __init__(self, channels: int, groups: int = 8, k: int = 3):
        self.groups = groups
        self.k = k
        self.w = Parameter(np.zeros((channels, channels, k, k), dtype=np.float32),
                           fan_in=channels * k * k)
        self.b = Parameter(np.zeros(channels, dtype=np.float32))

    def __call__(self, x: Tensor, offsets: Tensor, masks: Tensor) -> Tensor:
        return en.deform_conv2d(x, offsets, masks, self.w, self.b,
                                groups=self.groups)


def split_offset_field(raw: Tensor, groups: int, k: int):
    """Split a raw field (B, G*3K, H, W) into offsets and sigmoid masks.

    Layout: first G*2K channels are (dy, dx) pairs per group and tap, the
    remaining G*K channels are mask logits.
    """
    b, ch, h, w = raw.shape
    if ch != groups * 3 * k:
        raise ValueError(f"field channels {ch} != groups*3K = {groups * 3 * k}")
    off = en.narrow(raw, 1, 0, groups * 2 * k)
    logits = en.narrow(raw, 1, groups * 2 * k, groups * k)
    offsets = en.reshape(off, (b, groups, k, 2, h, w))
    masks = en.sigmoid(en.reshape(logits, (b, groups, k, h, w)))
    return offsets, masks


class ConvLSTMCell(Module):
    """Convolutional LSTM: gates from one conv over [x, h]."""

    def __init__(self, in_channels: int, hidden: int):
        self.hidden = hidden
        self.gates = Conv2d(in_channels + hidden, 4 * hidden)

    def init_state(self, b: int, h: int, w: int, dtype=np.float32):
        z = np.zeros((b, self.hidden, h, w), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def __call__(self, x: Tensor, state) -> tuple[Tensor, Tensor]:
        h_prev, c_prev = state
        if x.shape[2:] != h_prev.shape[2:]:
            raise ValueError("LSTM state not aligned with input")
        g = self.gates(en.concat([x, h_prev], axis=1))
        hid = self.hidden
        i = en.sigmoid(en.narrow(g, 1, 0, hid))
        f = en.sigmoid(en.narrow(g, 1, hid, hid))
        o = en.sigmoid(en.narrow(g, 1, 2 * hid, hid))
        cand = en.tanh(en.narrow(g, 1, 3 * hid, hid))
        c = en.add(en.mul(f, c_prev), en.mul(i, cand))
        h = en.mul(o, en.tanh(c))
        return h, c


class AdaptiveUpsample(Module):
    """2x upsampling by transposed conv, optionally modulated by a guide.

    With a guide: both streams are upsampled by their own transposed convs
    and the feature stream is scaled/shifted pixel-wise by modulations
    computed from the upsampled guide, mirroring the guided unit.
    """

    def __init__(self, channels: int, guided: bool = True):
        self.up_feat = ConvTranspose2d(channels, channels)
        if guided:
            self.up_guide = ConvTranspose2d(channels, channels)
            self.conv_gamma = Conv2d(channels, channels)
            self.conv_beta = Conv2d(channels, channels)
        else:
            self.up_guide = None

    def __call__(self, f: Tensor, guide: Tensor | None = None) -> Tensor:
        up = self.up_feat(f)
        if self.up_guide is None:
            return up
        if guide is None:
            raise ValueError("guided upsampling needs a guide feature")
        if guide.shape[2:] != f.shape[2:]:
            raise ValueError("guide must share the pre-upsampling resolution")
        gu = self.up_guide(guide)
        return en.add(en.mul(self.conv_gamma(gu), up), self.conv_beta(gu))
