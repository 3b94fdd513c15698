"""Command-line entry points and the run-configuration schema.

Every command is replayable from its config plus seed alone, mutates no
inputs, exits 0 on success and writes a machine-readable JSON error to
stderr on failure. The data root comes from the config (``data`` key),
overridable by the GCPNET_DATA environment variable; the built-in
``synthetic[:NxTxS]`` root generates procedural clips so no external data
is required.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys

import numpy as np

from . import data as gdata
from . import evaluation as geval
from . import snr as gsnr
from . import tensorio
from .losses import LossConfig
from .model import (BurstInput, ModelConfig, build_model, load_checkpoint,
                    save_checkpoint)
from .noisemodel import NoiseParams, NoiseRanges
from .rawproc import GammaCurve, IspParams, process
from .training import BurstSampler, TrainConfig, init_params, train_loop

SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "data": "synthetic:4x8x96",
    "out": "runs/out",
    "isp": {
        "wb_gains": [2.0, 1.0, 1.7],
        "ccm": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        "gamma": {"kind": "srgb_standard", "exponent": None},
    },
    "model": ModelConfig().to_json(),
    "train": {
        "batch_size": 2,
        "patch_size": 64,
        "lr0": 4e-4,
        "betas": [0.9, 0.99],
        "adam_eps": 1e-8,
        "total_steps": 20000,
        "log_every": 50,
        "checkpoint_every": 2000,
        "pretrain_steps": 0,
        "noise_ranges": {"s_lo": 1e-4, "s_hi": 1e-2, "r_lo": 1e-3,
                         "r_hi": 10.0 ** -1.5, "sampling_law": "log_uniform"},
    },
    "loss": {"epsilon": 1e-3, "srgb_weight": 1.0, "per_pixel": False},
    "eval": {"noise_level": "high", "tile": 64, "overlap": 16,
             "max_windows": 2},
    "synth": {"count": 4, "zero_noise": False},
}


class ConfigError(ValueError):
    pass


def _merge_strict(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge_strict(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key.path=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key: {key}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {key}")
    node[parts[-1]] = value


def load_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        cfg = _merge_strict(cfg, user)
    for assignment in args.set or []:
        _apply_set(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if getattr(args, "frames", None) is not None:
        cfg["model"]["frames"] = args.frames
    if getattr(args, "noise_level", None) is not None:
        cfg["eval"]["noise_level"] = args.noise_level
    if os.environ.get("GCPNET_DATA"):
        cfg["data"] = os.environ["GCPNET_DATA"]
    return cfg


def _isp_from(cfg: dict) -> IspParams:
    c = cfg["isp"]
    return IspParams(tuple(c["wb_gains"]), np.asarray(c["ccm"]),
                     GammaCurve(c["gamma"]["kind"], c["gamma"]["exponent"]))


def _ranges_from(cfg: dict) -> NoiseRanges:
    return NoiseRanges.from_json(cfg["train"]["noise_ranges"])


def _model_cfg_from(cfg: dict) -> ModelConfig:
    return ModelConfig.from_json(cfg["model"])


def _train_cfg_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(batch_size=t["batch_size"], patch_size=t["patch_size"],
                       lr0=t["lr0"], betas=tuple(t["betas"]),
                       adam_eps=t["adam_eps"], total_steps=t["total_steps"],
                       seed=cfg["seed"], noise_ranges=_ranges_from(cfg),
                       frames=cfg["model"]["frames"], log_every=t["log_every"],
                       checkpoint_every=t["checkpoint_every"],
                       pretrain_steps=t["pretrain_steps"])


def _loss_cfg_from(cfg: dict) -> LossConfig:
    l = cfg["loss"]
    return LossConfig(epsilon=l["epsilon"], srgb_weight=l["srgb_weight"],
                      isp=_isp_from(cfg), per_pixel=l["per_pixel"])


def _source_from(cfg: dict):
    root = cfg["data"]
    if isinstance(root, str) and root.startswith("synthetic"):
        spec = root.partition(":")[2] or "4x8x96"
        n_clips, n_frames, size = (int(v) for v in spec.split("x"))
        return gdata.SyntheticClipSource(n_clips=n_clips, n_frames=n_frames,
                                         height=size, width=size,
                                         seed=cfg["seed"])
    return gdata.DirectoryClipSource(root)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args)
    isp = _isp_from(cfg)
    source = _source_from(cfg)
    out_root = cfg["out"]
    ranges = _ranges_from(cfg)
    if args.zero_noise or cfg["synth"]["zero_noise"]:
        ranges = NoiseRanges(0.0, 0.0, 0.0, 0.0, "uniform")
    n = cfg["synth"]["count"]
    frames = cfg["model"]["frames"]
    patch = 2 * cfg["train"]["patch_size"]
    clip_ids = source.clip_ids()
    os.makedirs(out_root, exist_ok=True)
    for i in range(n):
        burst_dir = os.path.join(out_root, f"burst{i:04d}")
        try:
            ss = np.random.SeedSequence([cfg["seed"], i, 0xDA7A])
            rng = np.random.Generator(np.random.PCG64(ss))
            clip = clip_ids[int(rng.integers(len(clip_ids)))]
            all_frames = source.frames(clip)
            t_max = all_frames.shape[0] - frames
            if t_max < 0:
                raise ValueError(f"clip {clip} shorter than {frames} frames")
            t0 = int(rng.integers(t_max + 1))
            sample = gdata.synthesize_sample(
                all_frames[t0:t0 + frames], isp, ranges,
                seed=int(rng.integers(2 ** 62)), patch=patch)
            gdata.write_burst(burst_dir, sample, isp, seed=cfg["seed"])
        except Exception:
            # Never leave a half-written burst behind.
            shutil.rmtree(burst_dir, ignore_errors=True)
            raise
    print(f"wrote {n} bursts under {out_root}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    mcfg = _model_cfg_from(cfg)
    tcfg = _train_cfg_from(cfg)
    model = init_params(build_model(mcfg), seed=cfg["seed"])
    sampler = BurstSampler(_source_from(cfg), _isp_from(cfg),
                           tcfg.noise_ranges, frames=mcfg.frames,
                           patch_raw=tcfg.patch_size, seed=cfg["seed"])
    train_loop(model, tcfg, _loss_cfg_from(cfg), sampler,
               out_dir=cfg["out"], quiet=args.quiet)
    print(f"training complete; artifacts under {cfg['out']}")
    return 0


def _checkpoint_model(args, cfg):
    if getattr(args, "oracle", False):
        return geval.OraclePredictor(), "oracle"
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required (or --oracle)")
    model, _, _ = load_checkpoint(args.checkpoint)
    return model, f"model-N{model.cfg.frames}"


def cmd_eval(args) -> int:
    cfg = load_config(args)
    isp = _isp_from(cfg)
    model, label = _checkpoint_model(args, cfg)
    source = _source_from(cfg)
    n_frames = model.cfg.frames if hasattr(model, "cfg") \
        else cfg["model"]["frames"]
    levels = [cfg["eval"]["noise_level"]] if args.noise_level else ["high", "low"]
    os.makedirs(cfg["out"], exist_ok=True)
    reports = {}
    for level in levels:
        setting = geval.SETTINGS[level]
        rep = geval.evaluate(model, source, setting, isp, n_frames=n_frames,
                             seed=cfg["seed"], tile=cfg["eval"]["tile"],
                             overlap=cfg["eval"]["overlap"],
                             max_windows=cfg["eval"]["max_windows"],
                             model_label=label)
        rep.write_csv(os.path.join(cfg["out"], f"eval_{level}.csv"))
        reports[level] = rep
    table = geval.paper_layout_table(reports)
    with open(os.path.join(cfg["out"], "eval_table.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    spec = geval.ABLATION_SPECS[args.table]()
    rows = geval.run_ablation(
        spec, _model_cfg_from(cfg), _train_cfg_from(cfg), _loss_cfg_from(cfg),
        _source_from(cfg), _isp_from(cfg),
        settings=(geval.HIGH, geval.LOW), seed=cfg["seed"],
        eval_seed=cfg["seed"], max_windows=cfg["eval"]["max_windows"])
    os.makedirs(cfg["out"], exist_ok=True)
    geval.ablation_csv(rows, os.path.join(cfg["out"],
                                          f"ablation_{args.table}.csv"))
    table = geval.ablation_table(spec, rows)
    with open(os.path.join(cfg["out"], f"ablation_{args.table}.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_infer(args) -> int:
    cfg = load_config(args)
    if not args.burst:
        raise ConfigError("--burst DIR is required")
    frames, maps, _gt, meta = gdata.read_burst(args.burst)
    isp = IspParams.from_json(meta["isp"]) if "isp" in meta else _isp_from(cfg)
    model, _ = _checkpoint_model(args, cfg)
    burst = BurstInput(frames, maps)
    if isinstance(model, geval.OraclePredictor):
        raise ConfigError("infer needs a real checkpoint")
    h, w = frames.shape[1:3]
    tile = cfg["eval"]["tile"]
    if h > tile or w > tile:
        linear = geval.tiled_predict(model, burst, tile=tile,
                                     overlap=cfg["eval"]["overlap"])
    else:
        linear = model.predict_burst(burst)
    srgb = process(np.clip(linear, 0.0, None), isp)
    os.makedirs(cfg["out"], exist_ok=True)
    out_png = os.path.join(cfg["out"], "restored.png")
    tensorio.write_png16(out_png, srgb)
    tensorio.write_tensor(os.path.join(cfg["out"], "restored_linear.gcpb"),
                          linear.astype(np.float32))
    print(f"wrote {out_png}")
    return 0


def cmd_snr(args) -> int:
    cfg = load_config(args)
    level = cfg["eval"]["noise_level"]
    params = geval.SETTINGS[level].params
    count = args.images or 20
    images = [(f"img{i:03d}", gdata.synthetic_srgb_image(seed=cfg["seed"] + i))
              for i in range(count)]
    os.makedirs(cfg["out"], exist_ok=True)
    csv_path = os.path.join(cfg["out"], "snr_report.csv")
    rep = gsnr.snr_report(images, _isp_from(cfg), params, seed=cfg["seed"],
                          csv_path=csv_path)
    frac = rep.green_max_fraction
    print(f"green channel is the best SNR in {frac:.0%} of {count} images "
          f"({level} noise); report: {csv_path}")
    return 0


def save_default_config(path) -> None:
    with open(path, "w") as fh:
        json.dump(DEFAULT_CONFIG, fh, indent=2, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gcpnet",
        description="Burst raw joint denoising/demosaicking harness")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, frames=False, noise=False, checkpoint=False):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        help="override any config field")
        if frames:
            sp.add_argument("--frames", type=int, default=None)
        if noise:
            sp.add_argument("--noise-level", choices=("high", "low"),
                            default=None, dest="noise_level")
        if checkpoint:
            sp.add_argument("--checkpoint", default=None)
            sp.add_argument("--oracle", action="store_true",
                            help="pipeline check: 'predict' the ground truth")

    sp = sub.add_parser("synth", help="write a synthetic burst dataset")
    common(sp, frames=True)
    sp.add_argument("--zero-noise", action="store_true", dest="zero_noise")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", help="train a model")
    common(sp, frames=True)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, frames=True, noise=True, checkpoint=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="run an ablation table")
    common(sp, frames=True)
    sp.add_argument("--table", required=True,
                    choices=tuple(geval.ABLATION_SPECS))
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("infer", help="restore a stored burst")
    common(sp, checkpoint=True)
    sp.add_argument("--burst", help="directory holding frames/maps tensors")
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("snr", help="per-channel SNR report on synthetic raws")
    common(sp, noise=True)
    sp.add_argument("--images", type=int, default=None)
    sp.set_defaults(fn=cmd_snr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all
        err = {"error": str(exc), "type": type(exc).__name__}
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
