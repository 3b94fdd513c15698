import numpy as np
import pytest

from gcpnet import data, evaluation
from gcpnet.evaluation import (HIGH, LOW, AblationSpec, OraclePredictor,
                               ablation_csv, ablation_table, evaluate,
                               frames_spec, gg_units_spec, interf_spec,
                               paper_layout_table, psnr, run_ablation, ssim,
                               stage_spec, tiled_predict)
from gcpnet.losses import LossConfig
from gcpnet.model import BurstInput, ModelConfig, build_model
from gcpnet.noisemodel import NoiseRanges
from gcpnet.rawproc import IspParams
from gcpnet.training import TrainConfig, init_params

ISP = IspParams()


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestPsnr:
    def test_identical_capped(self):
        a = rng(0).random((16, 16))
        assert psnr(a, a.copy()) == 100.0

    def test_known_mse(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE = 0.01 -> 20 dB
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_constant_shift_invariance(self):
        g = rng(1)
        a = 0.3 + 0.2 * g.random((8, 8))
        b = 0.3 + 0.2 * g.random((8, 8))
        assert abs(psnr(a, b) - psnr(a + 0.1, b + 0.1)) < 1e-9


class TestSsim:
    def test_identical_is_one(self):
        a = rng(0).random((32, 32))
        assert ssim(a, a.copy()) == 1.0

    def test_heavy_noise_below_half(self):
        g = rng(1)
        a = np.full((64, 64), 0.5)
        b = np.clip(a + 0.8 * g.standard_normal((64, 64)), 0, 1)
        assert ssim(a, b) < 0.5

    def test_symmetry(self):
        g = rng(2)
        a, b = g.random((32, 32)), g.random((32, 32))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_rgb_is_channel_mean(self):
        g = rng(3)
        a, b = g.random((32, 32, 3)), g.random((32, 32, 3))
        per = np.mean([ssim(a[:, :, c], b[:, :, c]) for c in range(3)])
        assert abs(ssim(a, b) - per) < 1e-12


def small_source(seed=0, n_clips=2, n_frames=4, size=32):
    return data.SyntheticClipSource(n_clips=n_clips, n_frames=n_frames,
                                    height=size, width=size, seed=seed)


class TestEvaluate:
    def test_oracle_scores_maxima(self):
        rep = evaluate(OraclePredictor(), small_source(), HIGH, ISP,
                       n_frames=3, max_windows=1)
        for c in rep.clips:
            assert c.psnr == 100.0
            assert c.ssim == 1.0

    def test_deterministic(self):
        cfg = ModelConfig(frames=3, base_width=8, gg_units=1, pyramid_levels=2)
        model = init_params(build_model(cfg), seed=0)
        a = evaluate(model, small_source(), LOW, ISP, n_frames=3, max_windows=1)
        b = evaluate(model, small_source(), LOW, ISP, n_frames=3, max_windows=1)
        assert [(c.psnr, c.ssim) for c in a.clips] \
            == [(c.psnr, c.ssim) for c in b.clips]

    def test_short_clip_skipped_with_warning(self):
        src = small_source(n_frames=2)
        with pytest.warns(UserWarning, match="skipped"):
            with pytest.raises(ValueError):
                evaluate(OraclePredictor(), src, HIGH, ISP, n_frames=5)

    def test_csv(self, tmp_path):
        rep = evaluate(OraclePredictor(), small_source(), HIGH, ISP,
                       n_frames=3, max_windows=1)
        p = tmp_path / "eval.csv"
        rep.write_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "clip,psnr,ssim,n_windows"
        assert lines[-1].startswith("Average,")


class TestTiling:
    def test_tiled_matches_untiled_psnr_on_256(self):
        # The stated invariant geometry: a 256x256 test frame, 16px overlap.
        cfg = ModelConfig(frames=3, base_width=8, gg_units=1, pyramid_levels=2)
        model = init_params(build_model(cfg), seed=1)
        src = small_source(seed=2, n_clips=1, n_frames=3, size=512)
        window = src.frames("clip000")
        burst, gt = evaluation.synthesize_eval_burst(window, ISP, HIGH.params,
                                                     seed=0)
        assert burst.frames.shape[1:3] == (256, 256)
        full = model.predict_burst(burst)
        tiled = tiled_predict(model, burst, tile=160, overlap=16)
        from gcpnet.rawproc import process
        gt_s = process(gt, ISP)
        p_full = psnr(np.clip(process(np.clip(full, 0, None), ISP), 0, 1),
                      np.clip(gt_s, 0, 1))
        p_tiled = psnr(np.clip(process(np.clip(tiled, 0, None), ISP), 0, 1),
                       np.clip(gt_s, 0, 1))
        assert abs(p_full - p_tiled) < 1e-4

    def test_tile_geometry_validation(self):
        cfg = ModelConfig(frames=3, base_width=8, gg_units=1, pyramid_levels=2)
        model = build_model(cfg)
        burst = BurstInput(np.zeros((3, 16, 16, 4), dtype=np.float32),
                           np.zeros((3, 16, 16, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            tiled_predict(model, burst, tile=30, overlap=8)
        with pytest.raises(ValueError):
            tiled_predict(model, burst, tile=16, overlap=8)


class TestPaperLayout:
    def test_both_settings_and_statement(self):
        reports = {}
        for setting in (HIGH, LOW):
            reports[setting.name] = evaluate(OraclePredictor(), small_source(),
                                             setting, ISP, n_frames=3,
                                             max_windows=1,
                                             model_label="model-N3")
        table = paper_layout_table(reports)
        assert "High noise level" in table
        assert "Low noise level" in table
        assert "Average" in table
        assert "100.00/1.0000" in table
        assert "NOT" in table and "desk scale" in table
        assert "32.30" in table  # the published full-budget reference figure


TINY_TRAIN = TrainConfig(batch_size=1, patch_size=16, total_steps=2,
                         frames=3, seed=0, checkpoint_every=0,
                         noise_ranges=NoiseRanges())
TINY_BASE = ModelConfig(frames=3, base_width=8, gg_units=1, pyramid_levels=2)


class TestAblationSpecs:
    def test_gg_units_columns(self):
        names = [v.name for v in gg_units_spec().variants]
        assert names == ["0", "1", "2", "3", "4", "5",
                         "4 (w/o GCP upsampling)", "using RB to guide"]
        assert len(names) == 8

    def test_interf_columns(self):
        names = [v.name for v in interf_spec().variants]
        assert names == ["w/o GCP", "w/o Inter", "w/o MS", "w/o LSTM", "full"]

    def test_stage_and_frames(self):
        assert [v.name for v in stage_spec().variants] \
            == ["DE + DM", "DM + DE", "JDD (one stage)"]
        assert [v.name for v in frames_spec().variants] \
            == ["N=1", "N=3", "N=5", "N=7"]

    def test_every_spec_has_full_row(self):
        for builder in (gg_units_spec, stage_spec, interf_spec, frames_spec):
            assert any(v.is_full for v in builder().variants)


class TestRunAblation:
    def test_interf_table_runs_and_deltas(self, tmp_path):
        rows = run_ablation(interf_spec(), TINY_BASE, TINY_TRAIN, LossConfig(),
                            small_source(), ISP, settings=(HIGH,),
                            max_windows=1)
        names = [r.name for r in rows]
        assert "full" in names
        full = next(r for r in rows if r.is_full)
        assert full.delta["high"] == 0.0
        for r in rows:
            assert not r.diverged
            assert "high" in r.psnr
        text = ablation_table(interf_spec(), rows)
        assert "w/o LSTM" in text and "[full]" in text
        p = tmp_path / "ablation.csv"
        ablation_csv(rows, p)
        assert p.read_text().startswith("variant,is_full,params,diverged")

    def test_frames_table_adjusts_frame_count(self):
        spec = AblationSpec("frames", tuple(
            v for v in frames_spec().variants if v.name in ("N=1", "N=5")))
        rows = run_ablation(spec, TINY_BASE, TINY_TRAIN, LossConfig(),
                            small_source(n_frames=6), ISP, settings=(LOW,),
                            max_windows=1)
        assert len(rows) == 2
        assert all("low" in r.psnr for r in rows)
