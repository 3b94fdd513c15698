import numpy as np
import pytest

from gcpnet import rawproc
from gcpnet.rawproc import (ConfigurationError, GammaCurve, IspParams, mosaic,
                            pack_bayer, process, process_vjp, unpack_bayer,
                            unprocess)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


IDENTITY = IspParams(wb_gains=(1.0, 1.0, 1.0))


class TestIspParams:
    def test_defaults_green_gain_lowest(self):
        isp = IspParams()
        assert isp.wb_gains[1] == min(isp.wb_gains)

    def test_rejects_nonpositive_gains(self):
        with pytest.raises(ConfigurationError):
            IspParams(wb_gains=(1.0, 0.0, 1.0))

    def test_rejects_singular_ccm(self):
        ccm = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0]])
        with pytest.raises(ConfigurationError):
            IspParams(ccm=ccm)

    def test_json_roundtrip(self):
        isp = IspParams(wb_gains=(1.9, 1.0, 1.6),
                        gamma=GammaCurve.pure_power(2.2))
        back = IspParams.from_json(isp.to_json())
        assert back.wb_gains == isp.wb_gains
        assert back.gamma == isp.gamma


class TestProcessUnprocess:
    def test_white_fixed_point_pure_power(self):
        isp = IspParams(wb_gains=(1.0, 1.0, 1.0),
                        gamma=GammaCurve.pure_power(2.2))
        ones = np.ones((2, 2, 3))
        assert np.allclose(unprocess(ones, isp), 1.0)
        assert np.allclose(process(ones, isp), 1.0)

    def test_mid_gray_srgb_inverse(self):
        # Direct evaluation of the standard inverse transfer function.
        expected = ((0.5 + 0.055) / 1.055) ** 2.4
        out = unprocess(np.full((2, 2, 3), 0.5), IDENTITY)
        assert np.allclose(out, expected, atol=1e-6)
        assert abs(expected - 0.2140) < 5e-4

    def test_mid_gray_forward(self):
        out = process(np.full((2, 2, 3), ((0.5 + 0.055) / 1.055) ** 2.4), IDENTITY)
        assert np.allclose(out, 0.5, atol=1e-4)

    def test_zeros_map_to_zeros(self):
        z = np.zeros((4, 4, 3))
        assert np.all(process(z, IspParams()) == 0.0)

    @pytest.mark.parametrize("gamma", [GammaCurve.srgb(),
                                       GammaCurve.pure_power(2.2),
                                       GammaCurve.pure_power(1.0)])
    def test_roundtrip_grid(self, gamma):
        # Roundtrip oracle over a grid of 10^3 sRGB values.
        isp = IspParams(wb_gains=(2.0, 1.0, 1.7), gamma=gamma)
        vals = np.linspace(0.0, 1.0, 10)
        grid = np.stack(np.meshgrid(vals, vals, vals), axis=-1).reshape(-1, 1, 3)
        back = process(unprocess(grid, isp), isp)
        assert np.max(np.abs(back - grid)) < 1e-4

    def test_roundtrip_other_direction(self):
        isp = IspParams()
        g = rng(3)
        # In-gamut means per-channel linear values below 1/wb_gain.
        caps = 1.0 / np.asarray(isp.wb_gains)
        linear = (g.random((8, 8, 3)) * 0.97 + 0.001) * caps
        again = unprocess(process(linear, isp), isp)
        assert np.max(np.abs(again - linear)) < 1e-4

    def test_unprocess_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            unprocess(np.full((2, 2, 3), 1.5), IDENTITY)

    def test_monotone_per_channel_identity_wb(self):
        xs = np.linspace(0, 1, 64)
        img = np.stack([xs, xs, xs], axis=-1)[None]
        out = process(unprocess(img, IDENTITY), IDENTITY)
        for c in range(3):
            assert np.all(np.diff(out[0, :, c]) >= -1e-12)

    def test_process_gradient_matches_fd(self):
        # Central-difference oracle at f64 on a 4x4x3 random image.
        isp = IspParams(wb_gains=(2.0, 1.0, 1.7),
                        ccm=np.array([[0.9, 0.05, 0.05],
                                      [0.1, 0.8, 0.1],
                                      [0.0, 0.1, 0.9]]))
        g = rng(7)
        x = 0.02 + 0.4 * g.random((4, 4, 3))
        cot = g.standard_normal((4, 4, 3))
        analytic = process_vjp(x, isp, cot)
        eps = 1e-6
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp = x.copy(); xp[idx] += eps
            xm = x.copy(); xm[idx] -= eps
            numeric[idx] = np.sum((process(xp, isp) - process(xm, isp)) * cot) \
                / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-3


class TestMosaicPack:
    def test_constant_gray(self):
        img = np.full((4, 4, 3), 0.37)
        assert np.allclose(mosaic(img), 0.37)

    def test_pure_red(self):
        img = np.zeros((4, 4, 3))
        img[:, :, 0] = 1.0
        plane = mosaic(img)
        assert np.all(plane[0::2, 0::2] == 1.0)
        plane[0::2, 0::2] = 0.0
        assert np.all(plane == 0.0)

    def test_2x2_block_rggb(self):
        img = np.zeros((2, 2, 3))
        img[0, 0] = (1, 9, 9)
        img[0, 1] = (9, 2, 9)
        img[1, 0] = (9, 3, 9)
        img[1, 1] = (9, 9, 4)
        assert mosaic(img).tolist() == [[1, 2], [3, 4]]

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            mosaic(np.zeros((3, 4, 3)))

    def test_pack_definition(self):
        plane = np.array([[1.0, 2.0], [3.0, 4.0]])
        packed = pack_bayer(plane)
        assert packed.shape == (1, 1, 4)
        assert packed[0, 0].tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_pack_unpack_bit_exact(self):
        plane = rng(1).random((64, 64))
        assert np.array_equal(unpack_bayer(pack_bayer(plane)), plane)

    def test_pack_constant(self):
        packed = pack_bayer(np.full((8, 8), 0.25))
        for c in range(4):
            assert np.all(packed[:, :, c] == 0.25)

    def test_mosaic_idempotent_under_resampling(self):
        g = rng(2)
        img = g.random((8, 8, 3))
        plane = mosaic(img)
        # Scatter the Bayer samples back into an RGB canvas, then re-mosaic.
        canvas = np.zeros_like(img)
        canvas[0::2, 0::2, 0] = plane[0::2, 0::2]
        canvas[0::2, 1::2, 1] = plane[0::2, 1::2]
        canvas[1::2, 0::2, 1] = plane[1::2, 0::2]
        canvas[1::2, 1::2, 2] = plane[1::2, 1::2]
        assert np.array_equal(mosaic(canvas), plane)


class TestExtract:
    def test_green_selection(self):
        packed = np.arange(16, dtype=float).reshape(2, 2, 4)
        m = packed * 0.1
        g, gm = rawproc.extract_green(packed, m)
        assert np.array_equal(g, packed[:, :, 1:3])
        assert np.array_equal(gm, m[:, :, 1:3])

    def test_green_of_pure_red_is_zero(self):
        img = np.zeros((4, 4, 3))
        img[:, :, 0] = 1.0
        packed = pack_bayer(mosaic(img))
        g, _ = rawproc.extract_green(packed, packed)
        assert np.all(g == 0.0)

    def test_shapes(self):
        packed = np.zeros((64, 64, 4))
        g, gm = rawproc.extract_green(packed, packed)
        assert g.shape == (64, 64, 2) and gm.shape == (64, 64, 2)


class TestDemosaicBilinear:
    def test_constant_input(self):
        packed = pack_bayer(mosaic(np.full((8, 8, 3), 0.5)))
        out = rawproc.demosaic_bilinear(packed)
        assert out.shape == (8, 8, 3)
        assert np.allclose(out, 0.5, atol=1e-12)

    def test_preserves_sampled_sites(self):
        g = rng(4)
        img = g.random((8, 8, 3))
        plane = mosaic(img)
        out = rawproc.demosaic_bilinear(pack_bayer(plane))
        assert np.allclose(out[0::2, 0::2, 0], plane[0::2, 0::2])
        assert np.allclose(out[1::2, 1::2, 2], plane[1::2, 1::2])
