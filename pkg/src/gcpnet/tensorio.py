"""On-disk formats: the GCPB binary tensor container and 16-bit PNG images.

GCPB layout (little-endian throughout): magic b"GCPB", version u16, rank
u8, then rank dims as u32, then the payload as float32 row-major. The
format is deliberately trivial so other toolchains can read it bit-exactly.

16-bit RGB PNGs are written with a small built-in encoder (Pillow has no
16-bit-per-channel RGB mode); everything else goes through Pillow.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np
from PIL import Image

GCPB_MAGIC = b"GCPB"
GCPB_VERSION = 1

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(GCPB_MAGIC)
        fh.write(struct.pack("<HB", GCPB_VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GCPB_MAGIC:
            raise ValueError(f"{path}: bad tensor magic {magic!r}")
        version, rank = struct.unpack("<HB", fh.read(3))
        if version != GCPB_VERSION:
            raise ValueError(f"{path}: unsupported GCPB version {version}")
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        payload = fh.read()
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated payload ({len(payload)} != {expected})")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def _png_chunk(tag: bytes, body: bytes) -> bytes:
    return (struct.pack(">I", len(body)) + tag + body
            + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF))


def write_png16(path, srgb: np.ndarray) -> None:
    """Write an sRGB image in [0, 1] as a 16-bit PNG (stored value = round(v*65535))."""
    arr = np.clip(np.asarray(srgb, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 65535.0).astype(">u2")
    if data.ndim == 2:
        color_type, h, w = 0, *data.shape
    elif data.ndim == 3 and data.shape[-1] == 3:
        color_type, h, w = 2, data.shape[0], data.shape[1]
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got {data.shape}")
    rows = data.reshape(h, -1).tobytes()
    stride = data.reshape(h, -1).shape[1] * 2
    raw = b"".join(b"\x00" + rows[r * stride:(r + 1) * stride] for r in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 16, color_type, 0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(_PNG_SIG)
        fh.write(_png_chunk(b"IHDR", ihdr))
        fh.write(_png_chunk(b"IDAT", zlib.compress(raw, 6)))
        fh.write(_png_chunk(b"IEND", b""))


def _read_png16(path) -> np.ndarray | None:
    """Parse an unfiltered 16-bit gray/RGB PNG; None if it is something else."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_PNG_SIG):
        return None
    pos, ihdr, idat = len(_PNG_SIG), None, b""
    while pos < len(blob):
        (length,), tag = struct.unpack(">I", blob[pos:pos + 4]), blob[pos + 4:pos + 8]
        body = blob[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", body)
        elif tag == b"IDAT":
            idat += body
        elif tag == b"IEND":
            break
    if ihdr is None:
        return None
    w, h, depth, color_type, _, _, interlace = ihdr
    if depth != 16 or color_type not in (0, 2) or interlace != 0:
        return None
    nchan = 1 if color_type == 0 else 3
    stride = w * nchan * 2
    raw = zlib.decompress(idat)
    out = np.empty((h, w * nchan), dtype=">u2")
    for r in range(h):
        row = raw[r * (stride + 1):(r + 1) * (stride + 1)]
        if row[0] != 0:
            raise ValueError(f"{path}: unsupported PNG filter {row[0]}")
        out[r] = np.frombuffer(row[1:], dtype=">u2")
    arr = out.astype(np.float64) / 65535.0
    return arr.reshape(h, w) if nchan == 1 else arr.reshape(h, w, 3)


def read_png(path) -> np.ndarray:
    """Read a PNG as float sRGB in [0, 1]; handles 8-bit via Pillow and 16-bit directly."""
    arr = _read_png16(path)
    if arr is not None:
        return arr
    im = Image.open(path)
    if im.mode in ("I;16", "I;16B", "I"):
        return np.asarray(im, dtype=np.float64) / 65535.0
    if im.mode not in ("L", "RGB"):
        im = im.convert("RGB")
    return np.asarray(im, dtype=np.float64) / 255.0
