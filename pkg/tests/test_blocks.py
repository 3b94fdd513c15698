"""Behavioral and gradient tests of the network building blocks."""

import numpy as np
import pytest

from gcpnet.nnprim import engine as en
from gcpnet.nnprim import blocks as nb


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def init_module(mod, seed=0, std=0.3):
    g = rng(seed)
    for _, p in sorted(mod.named_parameters()):
        p.data = (std * g.standard_normal(p.data.shape)).astype(np.float64)
    return mod


def grad_check_module(mod, inputs, out_fn, rtol=1e-3, eps=1e-6, seed=99):
    """FD check of input and parameter gradients through a module call."""
    tensors = [en.Tensor(a.copy(), requires_grad=True) for a in inputs]
    out = out_fn(mod, *tensors)
    r = rng(seed).standard_normal(out.shape)
    en.sum_all(en.mul(out, en.Tensor(r))).backward()

    def loss():
        with en.no_grad():
            o = out_fn(mod, *[en.Tensor(t.data) for t in tensors])
        return float(np.sum(o.data * r))

    checks = [(f"input{i}", t.data, t.grad) for i, t in enumerate(tensors)]
    checks += [(n, p.data, p.grad) for n, p in mod.named_parameters()]
    for name, arr, analytic in checks:
        assert analytic is not None, f"no grad for {name}"
        flat = arr.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss()
            flat[j] = orig - eps
            dn = loss()
            flat[j] = orig
            num[j] = (up - dn) / (2 * eps)
        ana = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-4)
        rel = np.max(np.abs(ana - num) / denom)
        assert rel < rtol, f"{name}: rel err {rel:.2e}"


class TestGGUnit:
    def test_identity_modulation(self):
        # Bias trick: gamma conv -> constant 1, beta conv -> constant 0.
        gg = nb.GGUnit(4)
        gg.conv_gamma.b.data[:] = 1.0
        f = rng(0).standard_normal((1, 4, 6, 6))
        guide = rng(1).standard_normal((1, 4, 6, 6))
        out = gg(en.Tensor(f), en.Tensor(guide))
        assert np.array_equal(out.data, f)

    def test_zero_gamma_drops_f(self):
        gg = nb.GGUnit(4)
        gg.conv_beta.b.data[:] = 0.25
        ga = gg(en.Tensor(rng(2).standard_normal((1, 4, 6, 6))),
                en.Tensor(np.zeros((1, 4, 6, 6))))
        gb = gg(en.Tensor(rng(3).standard_normal((1, 4, 6, 6))),
                en.Tensor(np.zeros((1, 4, 6, 6))))
        assert np.allclose(ga.data, 0.25) and np.allclose(gb.data, 0.25)

    def test_constant_fields_formula(self):
        # f=2, gamma=0.5, beta=0.1 -> 1.1 everywhere.
        gg = nb.GGUnit(2)
        gg.conv_gamma.b.data[:] = 0.5
        gg.conv_beta.b.data[:] = 0.1
        out = gg(en.Tensor(np.full((1, 2, 4, 4), 2.0)),
                 en.Tensor(np.zeros((1, 2, 4, 4))))
        assert np.allclose(out.data, 1.1)

    def test_spatial_mismatch_rejected(self):
        gg = nb.GGUnit(2)
        with pytest.raises(ValueError):
            gg(en.Tensor(np.zeros((1, 2, 4, 4))), en.Tensor(np.zeros((1, 2, 8, 8))))

    def test_gradients(self):
        gg = init_module(nb.GGUnit(3), seed=5)
        f = rng(6).standard_normal((1, 3, 5, 5))
        guide = rng(7).standard_normal((1, 3, 5, 5))
        grad_check_module(gg, [f, guide], lambda m, a, b: m(a, b))


class TestChannelAttention:
    def test_zero_init_halves(self):
        ca = nb.ChannelAttention(8)
        f = rng(0).standard_normal((2, 8, 5, 5))
        out = ca(en.Tensor(f))
        assert np.allclose(out.data, 0.5 * f)

    def test_zero_input(self):
        ca = init_module(nb.ChannelAttention(8), seed=1)
        out = ca(en.Tensor(np.zeros((1, 8, 4, 4))))
        assert np.allclose(out.data, 0.0)

    def test_spatial_permutation_equivariance(self):
        ca = init_module(nb.ChannelAttention(4), seed=2)
        f = rng(3).standard_normal((1, 4, 4, 4))
        perm = rng(4).permutation(16)
        fp = f.reshape(1, 4, -1)[:, :, perm].reshape(f.shape)
        a = ca(en.Tensor(f)).data.reshape(1, 4, -1)[:, :, perm]
        b = ca(en.Tensor(fp)).data.reshape(1, 4, -1)
        assert np.allclose(a, b, atol=1e-12)

    def test_weights_in_open_interval(self):
        ca = init_module(nb.ChannelAttention(8), seed=5)
        z = ca.weights(en.Tensor(rng(6).standard_normal((1, 8, 6, 6)))).data
        assert np.all(z > 0) and np.all(z < 1)

    def test_gradients(self):
        ca = init_module(nb.ChannelAttention(4), seed=7)
        grad_check_module(ca, [rng(8).standard_normal((1, 4, 4, 4))],
                          lambda m, a: m(a))


class TestSpatialAttention:
    def test_zero_init_halves(self):
        sa = nb.SpatialAttention(8)
        f = rng(0).standard_normal((2, 8, 5, 5))
        assert np.allclose(sa(en.Tensor(f)).data, 0.5 * f)

    def test_zero_input(self):
        sa = init_module(nb.SpatialAttention(8), seed=1)
        assert np.allclose(sa(en.Tensor(np.zeros((1, 8, 4, 4)))).data, 0.0)

    def test_map_range(self):
        sa = init_module(nb.SpatialAttention(8), seed=2)
        z = sa.weights(en.Tensor(rng(3).standard_normal((1, 8, 6, 6)))).data
        assert z.shape == (1, 1, 6, 6)
        assert np.all(z > 0) and np.all(z < 1)

    def test_gradients(self):
        sa = init_module(nb.SpatialAttention(4), seed=4)
        grad_check_module(sa, [rng(5).standard_normal((1, 4, 4, 4))],
                          lambda m, a: m(a))


class TestGCABlock:
    def test_zero_attention_doubles_residual(self):
        # Attention convs at zero give z_c = z_s = 0.5, so out = 2 * f_r.
        blk = nb.GCABlock(4, guided=True)
        g = rng(0)
        for conv in (blk.gg.conv_gamma, blk.gg.conv_beta,
                     blk.res1.conv1, blk.res1.conv2,
                     blk.res2.conv1, blk.res2.conv2):
            conv.w.data = (0.2 * g.standard_normal(conv.w.data.shape))
        f = g.standard_normal((1, 4, 6, 6))
        guide = g.standard_normal((1, 4, 6, 6))
        fe = blk.gg(en.Tensor(f), en.Tensor(guide))
        fr = blk.res2(blk.res1(fe))
        out = blk(en.Tensor(f), en.Tensor(guide))
        assert np.allclose(out.data, 2.0 * fr.data, atol=1e-12)

    def test_output_shape(self):
        blk = init_module(nb.GCABlock(6, guided=True), seed=1)
        f = rng(2).standard_normal((2, 6, 8, 8))
        guide = rng(3).standard_normal((2, 6, 8, 8))
        assert blk(en.Tensor(f), en.Tensor(guide)).shape == f.shape

    def test_unguided_reduces_to_residual_attention(self):
        blk = init_module(nb.GCABlock(4, guided=False), seed=4)
        f = rng(5).standard_normal((1, 4, 6, 6))
        fr = blk.res2(blk.res1(en.Tensor(f)))
        zc = blk.ca.weights(fr)
        zs = blk.sa.weights(fr)
        # Same association order as the block: fr + (fr*zc + fr*zs).
        expect = fr.data + (fr.data * zc.data + fr.data * zs.data)
        assert np.array_equal(blk(en.Tensor(f)).data, expect)

    def test_guided_needs_guide(self):
        blk = nb.GCABlock(4, guided=True)
        with pytest.raises(ValueError):
            blk(en.Tensor(np.zeros((1, 4, 4, 4))))

    def test_gradients(self):
        blk = init_module(nb.GCABlock(4, guided=True), seed=6)
        f = rng(7).standard_normal((1, 4, 6, 6))
        guide = rng(8).standard_normal((1, 4, 6, 6))
        grad_check_module(blk, [f, guide], lambda m, a, b: m(a, b),
                          rtol=1e-3)


class TestConvLSTM:
    def test_zero_params_formula(self):
        # sigmoid(0) = 0.5, tanh(0) = 0: c' = 0.5 c0, h' = 0.5 tanh(0.5 c0).
        cell = nb.ConvLSTMCell(4, 3)
        x = rng(0).standard_normal((1, 4, 5, 5))
        c0 = rng(1).standard_normal((1, 3, 5, 5))
        h0 = np.zeros((1, 3, 5, 5))
        h1, c1 = cell(en.Tensor(x), (en.Tensor(h0), en.Tensor(c0)))
        assert np.allclose(c1.data, 0.5 * c0)
        assert np.allclose(h1.data, 0.5 * np.tanh(0.5 * c0))

    def test_zero_everything(self):
        cell = nb.ConvLSTMCell(2, 2)
        h0, c0 = cell.init_state(1, 4, 4)
        h1, c1 = cell(en.Tensor(np.zeros((1, 2, 4, 4))), (h0, c0))
        assert np.all(h1.data == 0.0) and np.all(c1.data == 0.0)

    def test_state_shapes_preserved(self):
        cell = init_module(nb.ConvLSTMCell(4, 3), seed=2)
        state = cell.init_state(2, 6, 6)
        x = rng(3).standard_normal((2, 4, 6, 6))
        for _ in range(3):
            state = cell(en.Tensor(x), state)
            assert state[0].shape == (2, 3, 6, 6)
            assert state[1].shape == (2, 3, 6, 6)

    def test_gradients_through_two_steps(self):
        cell = init_module(nb.ConvLSTMCell(3, 2), seed=4)

        def run(m, x1, x2):
            state = m.init_state(1, 4, 4, dtype=np.float64)
            state = m(x1, state)
            h, _ = m(x2, state)
            return h

        grad_check_module(cell, [rng(5).standard_normal((1, 3, 4, 4)),
                                 rng(6).standard_normal((1, 3, 4, 4))], run)


class TestAdaptiveUpsample:
    def test_output_doubles(self):
        up = init_module(nb.AdaptiveUpsample(4, guided=True), seed=0)
        f = rng(1).standard_normal((1, 4, 4, 4))
        g = rng(2).standard_normal((1, 4, 4, 4))
        assert up(en.Tensor(f), en.Tensor(g)).shape == (1, 4, 8, 8)

    def test_identity_modulation_is_plain_upsampling(self):
        up = init_module(nb.AdaptiveUpsample(4, guided=True), seed=3)
        up.conv_gamma.w.data[:] = 0.0
        up.conv_gamma.b.data[:] = 1.0
        up.conv_beta.w.data[:] = 0.0
        up.conv_beta.b.data[:] = 0.0
        f = rng(4).standard_normal((1, 4, 4, 4))
        g = rng(5).standard_normal((1, 4, 4, 4))
        guided = up(en.Tensor(f), en.Tensor(g)).data
        plain = up.up_feat(en.Tensor(f)).data
        assert np.allclose(guided, plain, atol=1e-12)

    def test_unguided_has_fewer_params(self):
        a = nb.AdaptiveUpsample(8, guided=True).param_count()
        b = nb.AdaptiveUpsample(8, guided=False).param_count()
        assert b < a

    def test_gradients(self):
        up = init_module(nb.AdaptiveUpsample(3, guided=True), seed=6)
        f = rng(7).standard_normal((1, 3, 4, 4))
        g = rng(8).standard_normal((1, 3, 4, 4))
        grad_check_module(up, [f, g], lambda m, a, b: m(a, b))


class TestDeformBlocks:
    def test_split_offset_field_shapes(self):
        raw = en.Tensor(rng(0).standard_normal((2, 2 * 27, 6, 6)))
        offs, masks = nb.split_offset_field(raw, groups=2, k=9)
        assert offs.shape == (2, 2, 9, 2, 6, 6)
        assert masks.shape == (2, 2, 9, 6, 6)
        assert np.all(masks.data > 0) and np.all(masks.data < 1)

    def test_split_rejects_wrong_channels(self):
        with pytest.raises(ValueError):
            nb.split_offset_field(en.Tensor(np.zeros((1, 5, 4, 4))), 2, 9)

    def test_deform_conv_module_zero_field(self):
        dcn = init_module(nb.DeformConv2d(8, groups=2), seed=1)
        x = rng(2).standard_normal((1, 8, 6, 6))
        offs = en.Tensor(np.zeros((1, 2, 9, 2, 6, 6)))
        masks = en.Tensor(np.ones((1, 2, 9, 6, 6)))
        out = dcn(en.Tensor(x), offs, masks)
        ref = en.conv2d(en.Tensor(x), dcn.w, dcn.b, stride=1, pad=1)
        assert np.max(np.abs(out.data - ref.data)) < 1e-5


class TestModuleSystem:
    def test_named_parameters_and_state_roundtrip(self):
        blk = init_module(nb.GCABlock(4), seed=0)
        names = [n for n, _ in blk.named_parameters()]
        assert "gg.conv_gamma.w" in names and "sa.conv2.b" in names
        state = {k: v.copy() for k, v in blk.state_dict().items()}
        blk2 = nb.GCABlock(4)
        blk2.load_state_dict(state)
        for (na, pa), (nb_, pb) in zip(blk.named_parameters(),
                                       blk2.named_parameters()):
            assert na == nb_ and np.array_equal(pa.data, pb.data)

    def test_load_rejects_mismatch(self):
        blk = nb.GCABlock(4)
        state = blk.state_dict()
        state.pop(next(iter(state)))
        with pytest.raises(ValueError):
            nb.GCABlock(4).load_state_dict(state)
