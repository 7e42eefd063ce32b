"""File formats for score images and masks.

Score images: PFM ("Pf" grayscale, negative scale = little endian, rows
stored bottom-to-top) and a raw format (magic "CSEG" | u32 height |
u32 width, little endian | height*width little-endian f32, row-major
top-to-bottom). Floats are stored as f32 and widened to f64 in memory.

Masks: binary PGM (P5, maxval <= 255) and 8-bit grayscale PNG. Any pixel
value >= 128 reads as 1. Writers emit 0/255.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError
from .grid import LabelMask, ScoreImage

RAW_MAGIC = b"CSEG"
MASK_THRESHOLD = 128

_PFM_HEADER = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+([-+]?[0-9.eE+-]+)\s")


def read_score_image(path: str | Path) -> ScoreImage:
    """Load a score image, dispatching on magic bytes."""
    data = Path(path).read_bytes()
    if data[:4] == RAW_MAGIC:
        return _parse_raw(data)
    if data[:2] in (b"Pf", b"PF"):
        return _parse_pfm(data)
    raise FormatError(f"{path}: unrecognized score image magic {data[:4]!r}")


def write_score_image(image: ScoreImage, path: str | Path) -> None:
    """Write a score image; '.pfm' paths get PFM, everything else raw."""
    if not np.isfinite(image.values).all():
        raise DataError("refusing to write non-finite score values")
    path = Path(path)
    payload = image.values.astype("<f4")
    if path.suffix.lower() == ".pfm":
        height, width = image.values.shape
        header = f"Pf\n{width} {height}\n-1.0\n".encode()
        path.write_bytes(header + np.flipud(payload).tobytes())
    else:
        height, width = image.values.shape
        path.write_bytes(RAW_MAGIC + struct.pack("<II", height, width) + payload.tobytes())


def _parse_raw(data: bytes) -> ScoreImage:
    if len(data) < 12:
        raise FormatError("raw score file truncated before header end")
    height, width = struct.unpack("<II", data[4:12])
    if height < 1 or width < 1:
        raise FormatError(f"raw score file has empty dims {height}x{width}")
    expected = 12 + height * width * 4
    if len(data) != expected:
        raise FormatError(f"raw score payload is {len(data) - 12} bytes, expected {expected - 12}")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    return _widen(values)


def _parse_pfm(data: bytes) -> ScoreImage:
    match = _PFM_HEADER.match(data)
    if match is None:
        raise FormatError("malformed PFM header")
    if match.group(1) == b"PF":
        raise FormatError("PFM color images are not supported, expected grayscale 'Pf'")
    width, height = int(match.group(2)), int(match.group(3))
    scale = float(match.group(4))
    if width < 1 or height < 1 or scale == 0:
        raise FormatError("PFM header has empty dims or zero scale")
    payload = data[match.end():]
    if len(payload) != height * width * 4:
        raise FormatError(f"PFM payload is {len(payload)} bytes, expected {height * width * 4}")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return _widen(np.flipud(values))  # PFM rows run bottom-to-top


def _widen(values: np.ndarray) -> ScoreImage:
    if np.isnan(values).any():
        raise DataError("score payload contains NaN")
    if not np.isfinite(values).all():
        raise DataError("score payload contains non-finite values")
    return ScoreImage(values.astype(np.float64))


def read_mask(path: str | Path) -> LabelMask:
    """Load a mask from PGM or grayscale PNG; values >= 128 become 1."""
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        return _parse_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _parse_png(path)
    if data[:2] in (b"P6", b"P3"):
        raise FormatError("multi-channel PPM input, expected single-channel PGM")
    raise FormatError(f"{path}: unrecognized mask magic {data[:2]!r}")


def write_mask(mask: LabelMask, path: str | Path) -> None:
    """Write a mask as PGM, or PNG when the path ends in '.png'."""
    path = Path(path)
    raster = np.where(mask.bits, 255, 0).astype(np.uint8)
    if path.suffix.lower() == ".png":
        Image.fromarray(raster, mode="L").save(path)
    else:
        height, width = raster.shape
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode() + raster.tobytes())


def _parse_pgm(data: bytes) -> LabelMask:
    # Header is 4 whitespace-separated tokens (magic, width, height, maxval)
    # with optional '#' comments, then one whitespace byte before the raster.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise FormatError("PGM header ends inside a comment")
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"bad PGM header token {token!r}")
        tokens.append(int(token))
    pos += 1  # single whitespace separating header from raster
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise FormatError("PGM header has empty dims")
    if maxval > 255:
        raise FormatError(f"PGM maxval {maxval} exceeds 8-bit range")
    raster = data[pos:]
    if len(raster) != width * height:
        raise FormatError(f"PGM payload is {len(raster)} bytes, expected {width * height}")
    values = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return LabelMask(values >= MASK_THRESHOLD)


def _parse_png(path: str | Path) -> LabelMask:
    with Image.open(path) as img:
        if img.mode == "1":
            return LabelMask(np.asarray(img, dtype=bool))
        if img.mode != "L":
            raise FormatError(f"PNG mode {img.mode!r} is not single-channel grayscale")
        return LabelMask(np.asarray(img, dtype=np.uint8) >= MASK_THRESHOLD)
