"""Raster types and bit-exact file I/O.

Images are numpy arrays: uint8 with shape (H, W) for grayscale or (H, W, 3)
for RGB, and float32 with shape (H, W) for single-channel real-valued maps
(disparity, depth). NaN is the invalid-pixel marker in float maps.

File formats: binary PGM (P5) / PPM (P6) for byte images, grayscale PFM
("Pf", bottom-up rows, scale sign encodes endianness) for float maps.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "PnmParseError",
    "PfmParseError",
    "load_pnm",
    "save_pnm",
    "load_pfm",
    "save_pfm",
    "to_grayscale",
    "bilinear_sample",
    "pseudocolor",
    "validate_u8",
    "validate_f32",
]


class PnmParseError(ValueError):
    pass


class PfmParseError(ValueError):
    pass


def validate_u8(img: np.ndarray) -> np.ndarray:
    """Check an array is a valid uint8 image (H,W) or (H,W,3)."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got dtype {img.dtype}")
    if img.ndim == 2:
        pass
    elif img.ndim == 3 and img.shape[2] == 3:
        pass
    else:
        raise ValueError(f"expected shape (H,W) or (H,W,3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def validate_f32(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.float32 or img.ndim != 2:
        raise ValueError(f"expected float32 (H,W) image, got {img.dtype} {img.shape}")
    return img


def _read_pnm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read whitespace-separated header tokens, skipping '#' comment lines.

    Returns the tokens and the offset one byte past the final token's
    trailing whitespace byte (the PNM payload start).
    """
    tokens: list[bytes] = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i] == ord("#"):
            while i < n and buf[i] != ord("\n"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace():
            i += 1
        if i == start:
            raise PnmParseError("truncated header")
        tokens.append(buf[start:i])
        if len(tokens) == count:
            # exactly one whitespace byte separates header from payload
            if i >= n or not buf[i : i + 1].isspace():
                raise PnmParseError("missing whitespace after maxval")
            i += 1
    return tokens, i


def load_pnm(data: bytes) -> np.ndarray:
    """Parse binary PGM (P5) or PPM (P6) bytes into a uint8 image."""
    if data[:2] == b"P5":
        channels = 1
    elif data[:2] == b"P6":
        channels = 3
    else:
        raise PnmParseError(f"bad magic {data[:2]!r}, expected P5 or P6")
    tokens, offset = _read_pnm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise PnmParseError(f"non-integer header token: {exc}") from exc
    if width < 1 or height < 1:
        raise PnmParseError(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise PnmParseError(f"unsupported maxval {maxval} (only maxval <= 255)")
    if maxval < 1:
        raise PnmParseError(f"bad maxval {maxval}")
    payload = data[2 + offset :]
    need = width * height * channels
    if len(payload) < need:
        raise PnmParseError(f"truncated payload: need {need} bytes, have {len(payload)}")
    pixels = np.frombuffer(payload[:need], dtype=np.uint8)
    if channels == 1:
        return pixels.reshape(height, width).copy()
    return pixels.reshape(height, width, 3).copy()


def save_pnm(img: np.ndarray) -> bytes:
    """Serialize a uint8 image to binary PGM/PPM. Round-trips byte-exactly."""
    img = validate_u8(img)
    magic = b"P5" if img.ndim == 2 else b"P6"
    h, w = img.shape[:2]
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + img.tobytes()


def save_pfm(img: np.ndarray) -> bytes:
    """Serialize a float32 map to grayscale PFM (little-endian, bottom-up rows)."""
    img = validate_f32(img)
    h, w = img.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()


def load_pfm(data: bytes) -> np.ndarray:
    """Parse grayscale PFM bytes into a float32 map."""
    if data[:2] != b"Pf":
        raise PfmParseError(f"bad magic {data[:2]!r}, expected Pf")
    try:
        tokens, offset = _read_pnm_tokens(data[2:], 3)
        width, height = int(tokens[0]), int(tokens[1])
        scale = float(tokens[2])
    except (PnmParseError, ValueError) as exc:
        raise PfmParseError(f"bad header: {exc}") from exc
    if width < 1 or height < 1 or scale == 0.0:
        raise PfmParseError("bad dimensions or scale")
    dtype = "<f4" if scale < 0 else ">f4"
    payload = data[2 + offset :]
    need = width * height * 4
    if len(payload) < need:
        raise PfmParseError(f"size mismatch: need {need} bytes, have {len(payload)}")
    values = np.frombuffer(payload[:need], dtype=dtype).astype(np.float32)
    return values.reshape(height, width)[::-1].copy()


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    """Round half away from zero (the convention everywhere a real becomes a byte)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB image, rounded half away from zero."""
    img = validate_u8(img)
    if img.ndim != 3:
        raise ValueError("to_grayscale requires a 3-channel image")
    luma = (
        0.299 * img[:, :, 0].astype(np.float64)
        + 0.587 * img[:, :, 1]
        + 0.114 * img[:, :, 2]
    )
    return np.clip(round_half_away(luma), 0, 255).astype(np.uint8)


def bilinear_sample(img: np.ndarray, x: float, y: float) -> float:
    """Bilinear blend of the 4 pixels around (x, y); exact at lattice points."""
    h, w = img.shape[:2]
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise ValueError(f"sample ({x}, {y}) outside [0,{w - 1}]x[0,{h - 1}]")
    x0 = min(int(math.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(math.floor(y)), h - 2) if h > 1 else 0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    v00 = float(img[y0, x0])
    v01 = float(img[y0, x1])
    v10 = float(img[y1, x0])
    v11 = float(img[y1, x1])
    return (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )


def pseudocolor(disp: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Jet-style false color for a float map; NaN renders black.

    t = clamp((v-lo)/(hi-lo), 0, 1), channel c = clamp(1.5 - |4t - kc|, 0, 1)
    with kc = 3, 2, 1 for r, g, b.
    """
    disp = validate_f32(disp)
    if not hi > lo:
        raise ValueError(f"pseudocolor requires hi > lo, got lo={lo} hi={hi}")
    valid = np.isfinite(disp)
    t = np.clip((np.where(valid, disp, lo) - lo) / (hi - lo), 0.0, 1.0)
    out = np.zeros(disp.shape + (3,), dtype=np.uint8)
    for c, k in enumerate((3.0, 2.0, 1.0)):
        chan = np.clip(1.5 - np.abs(4.0 * t - k), 0.0, 1.0) * 255.0
        out[:, :, c] = np.where(valid, round_half_away(chan), 0).astype(np.uint8)
    return out
