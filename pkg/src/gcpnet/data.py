"""Clip sources and burst synthesis.

A clip source yields short sRGB frame sequences; ``synthesize_sample``
turns an N-frame window into one training sample: unprocess to linear
RGB, take an aligned even-anchored crop, mosaic + pack each frame, draw
one noise level for the burst, add noise and build noise maps. The clean
linear RGB of the center frame is the target.

Two sources ship: a directory layout (one subdirectory of PNG frames per
clip) and a procedural generator of smooth moving textures so every part
of the harness runs without external data.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import noisemodel, rawproc, tensorio
from .noisemodel import NoiseParams, NoiseRanges
from .rawproc import IspParams


@dataclass
class TrainSample:
    """One synthesized burst: frames/maps are (N, H, W, 4), gt is (2H, 2W, 3).

    ``frame_gt`` (N, 2H, 2W, 3) carries every frame's clean linear RGB and
    is only populated when a caller needs per-frame supervision.
    """

    frames: np.ndarray
    maps: np.ndarray
    gt: np.ndarray
    noise: NoiseParams
    frame_gt: np.ndarray | None = None

    @property
    def ref_index(self) -> int:
        return self.frames.shape[0] // 2


def _smooth_field(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    """Low-frequency random field in [0, 1] via bilinear upsampling of coarse noise."""
    coarse = rng.random((cells, cells))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    y0 = np.clip(ys.astype(int), 0, cells - 2)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (a * (1 - ty) * (1 - tx) + b * (1 - ty) * tx
            + c * ty * (1 - tx) + d * ty * tx)


def synthetic_srgb_image(seed: int, h: int = 128, w: int = 128) -> np.ndarray:
    """A smooth, naturalistic sRGB test image in [0.04, 0.96].

    Shared luminance structure plus mild per-channel casts, so channel
    statistics resemble a lit natural scene rather than independent noise.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    luma = _smooth_field(rng, h, w, 6)
    detail = _smooth_field(rng, h, w, 24)
    base = 0.75 * luma + 0.25 * detail
    img = np.empty((h, w, 3))
    for c in range(3):
        cast = 0.85 + 0.3 * rng.random()
        tint = 0.12 * (_smooth_field(rng, h, w, 4) - 0.5)
        img[:, :, c] = base * cast + tint
    return np.clip(0.04 + 0.88 * img, 0.0, 1.0)


class SyntheticClipSource:
    """Procedurally generated clips: a large texture panned by a constant drift."""

    def __init__(self, n_clips: int = 4, n_frames: int = 8, height: int = 96,
                 width: int = 96, seed: int = 0, max_shift: int = 2):
        self.n_frames = n_frames
        self.height = height
        self.width = width
        self._specs = []
        root = np.random.SeedSequence([seed, 0x5C1195])
        for i, ss in enumerate(root.spawn(n_clips)):
            self._specs.append((f"clip{i:03d}", ss))
        self.max_shift = max_shift

    def clip_ids(self) -> list[str]:
        return [name for name, _ in self._specs]

    def frames(self, clip_id: str) -> np.ndarray:
        for name, ss in self._specs:
            if name == clip_id:
                break
        else:
            raise KeyError(clip_id)
        rng = np.random.Generator(np.random.PCG64(ss))
        pad = self.max_shift * (self.n_frames + 1)
        big = synthetic_srgb_image(int(rng.integers(2 ** 31)),
                                   self.height + 2 * pad, self.width + 2 * pad)
        dy = int(rng.integers(-self.max_shift, self.max_shift + 1))
        dx = int(rng.integers(-self.max_shift, self.max_shift + 1))
        out = np.empty((self.n_frames, self.height, self.width, 3))
        for t in range(self.n_frames):
            y0 = pad + t * dy
            x0 = pad + t * dx
            out[t] = big[y0:y0 + self.height, x0:x0 + self.width]
        return out


class DirectoryClipSource:
    """Clips stored as subdirectories of PNG frames, sorted by filename."""

    def __init__(self, root):
        self.root = str(root)
        if not os.path.isdir(self.root):
            raise FileNotFoundError(f"clip directory not found: {self.root}")
        self._clips = sorted(
            d for d in os.listdir(self.root)
            if os.path.isdir(os.path.join(self.root, d))
        )
        if not self._clips:
            raise FileNotFoundError(f"no clip subdirectories under {self.root}")

    def clip_ids(self) -> list[str]:
        return list(self._clips)

    def frames(self, clip_id: str) -> np.ndarray:
        d = os.path.join(self.root, clip_id)
        names = sorted(n for n in os.listdir(d) if n.lower().endswith(".png"))
        if not names:
            raise FileNotFoundError(f"no PNG frames in {d}")
        imgs = [tensorio.read_png(os.path.join(d, n)) for n in names]
        return np.stack(imgs, axis=0)


def synthesize_sample(clip_frames: np.ndarray, isp: IspParams,
                      ranges: NoiseRanges, seed: int, patch: int = 128,
                      frame_gt: bool = False) -> TrainSample:
    """Build one training sample from N consecutive sRGB frames.

    ``patch`` is the RGB patch size; the packed raw frames are patch/2 on
    each side. Crops are anchored to even pixels so the RGGB phase is
    preserved. Deterministic for a given seed.
    """
    clip_frames = np.asarray(clip_frames)
    n, h, w, _ = clip_frames.shape
    if patch % 2:
        raise ValueError("patch size must be even")
    if h < patch or w < patch:
        raise ValueError(f"frames ({h}x{w}) smaller than patch {patch}")
    rng = np.random.Generator(np.random.PCG64(seed))
    y0 = 2 * int(rng.integers(0, (h - patch) // 2 + 1))
    x0 = 2 * int(rng.integers(0, (w - patch) // 2 + 1))
    params = noisemodel.sample_noise_params_rng(ranges, rng)
    frame_seeds = rng.integers(0, 2 ** 62, size=n)

    frames = np.empty((n, patch // 2, patch // 2, 4), dtype=np.float32)
    maps = np.empty_like(frames)
    gt = None
    gts = np.empty((n, patch, patch, 3), dtype=np.float32) if frame_gt else None
    for t in range(n):
        crop = clip_frames[t, y0:y0 + patch, x0:x0 + patch]
        linear = rawproc.unprocess(crop, isp)
        if t == n // 2:
            gt = linear.astype(np.float32)
        if gts is not None:
            gts[t] = linear
        clean = rawproc.pack_bayer(rawproc.mosaic(linear))
        noisy = noisemodel.apply_noise(clean, params, seed=int(frame_seeds[t]))
        frames[t] = noisy
        maps[t] = noisemodel.noise_map(noisy, params)
    return TrainSample(frames, maps, gt, params, frame_gt=gts)


def write_burst(out_dir, sample: TrainSample, isp: IspParams, seed: int) -> None:
    """Write one synthesized burst: GCPB tensors plus a JSON sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    tensorio.write_tensor(os.path.join(out_dir, "frames.gcpb"), sample.frames)
    tensorio.write_tensor(os.path.join(out_dir, "maps.gcpb"), sample.maps)
    tensorio.write_tensor(os.path.join(out_dir, "gt.gcpb"), sample.gt)
    sidecar = {
        "noise": sample.noise.to_json(),
        "isp": isp.to_json(),
        "seed": seed,
        "ref_index": int(sample.ref_index),
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def read_burst(burst_dir):
    """Read back a burst written by :func:`write_burst`.

    Returns (frames, maps, gt or None, sidecar dict).
    """
    frames = tensorio.read_tensor(os.path.join(burst_dir, "frames.gcpb"))
    maps = tensorio.read_tensor(os.path.join(burst_dir, "maps.gcpb"))
    gt_path = os.path.join(burst_dir, "gt.gcpb")
    gt = tensorio.read_tensor(gt_path) if os.path.exists(gt_path) else None
    with open(os.path.join(burst_dir, "meta.json")) as fh:
        meta = json.load(fh)
    return frames, maps, gt, meta
