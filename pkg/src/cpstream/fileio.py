"""Readers and writers for flow fields, masks, depth maps and images."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, MalformedInput, TruncatedFile

FLO_MAGIC = 202021.25


@dataclass
class FlowField:
    """Dense per-pixel flow ``values[y, x] = (u, v)`` in pixels."""

    values: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[2] != 2:
            raise ValueError("flow values must have shape (H, W, 2)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("flow values must be finite")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width, 2)))


def write_flow(flow: FlowField, path):
    """Write a Middlebury ``.flo`` file (float32 payload)."""
    header = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(flow.values, dtype="<f4").tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12:
        raise TruncatedFile(f"{path}: header too short")
    magic, width, height = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise BadMagic(f"{path}: bad .flo magic {magic!r}")
    if width < 0 or height < 0:
        raise MalformedInput(f"{path}: negative dimensions")
    n = width * height * 2
    if len(data) < 12 + 4 * n:
        raise TruncatedFile(f"{path}: expected {width}x{height} flow payload")
    values = np.frombuffer(data, dtype="<f4", count=n, offset=12).reshape(height, width, 2)
    return FlowField(values.astype(np.float32))


def write_pgm(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError("PGM writer expects uint8 data")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise BadMagic(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise MalformedInput(f"{path}: 16-bit PGM not supported")
    pos += 1
    if len(data) < pos + w * h:
        raise TruncatedFile(f"{path}: expected {w}x{h} pixels")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def write_mask(path, labels):
    """Write an 8-bit label image (0 = background, k = object k) as PGM or PNG."""
    path = Path(path)
    labels = np.asarray(labels, dtype=np.uint8)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(labels, mode="L").save(path)
    else:
        write_pgm(path, labels)


def read_mask(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            return np.array(im.convert("L"), dtype=np.uint8)
    return read_pgm(path)


def write_pfm(path, data):
    """Write a float image (H, W) or (H, W, 3) as little-endian PFM, top row first in memory."""
    data = np.asarray(data, dtype="<f4")
    kind = b"PF" if data.ndim == 3 else b"Pf"
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(kind + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise BadMagic(f"{path}: not a PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        payload = f.read()
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(payload) < 4 * n:
        raise TruncatedFile(f"{path}: expected {w}x{h}x{channels} floats")
    data = np.frombuffer(payload, dtype=dtype, count=n)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_png(path, image):
    from PIL import Image

    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0
