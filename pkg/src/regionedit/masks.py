"""Edit-region masks, region-restricted MSE, and raster I/O (PGM masks, PPM images)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import FormatError, atomic_write

PGM_THRESHOLD = 128


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray  # [H, W], 0/1 float64

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.float64)
        if b.ndim != 2:
            raise ValueError(f"mask must be [H, W], got shape {b.shape}")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("mask values must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def shape(self) -> tuple:
        return self.bits.shape

    @property
    def coverage(self) -> float:
        return float(self.bits.mean())

    @property
    def is_degenerate(self) -> bool:
        return self.coverage in (0.0, 1.0)

    def complement(self) -> "Mask":
        return Mask(1.0 - self.bits)

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)

    def flat(self, channels: int) -> np.ndarray:
        """Mask broadcast over channels and flattened like an image."""
        return np.broadcast_to(self.bits, (channels, *self.bits.shape)).ravel()


def rect_mask(H: int, W: int, top: int, left: int, height: int, width: int) -> Mask:
    if height < 1 or width < 1:
        raise ValueError("rectangle must cover at least one pixel")
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise ValueError(f"rectangle ({top},{left},{height},{width}) outside {H}x{W} frame")
    bits = np.zeros((H, W))
    bits[top:top + height, left:left + width] = 1.0
    return Mask(bits)


def apply_mask(img, m: Mask) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[1:] != m.shape:
        raise ValueError(f"image {img.shape} does not match mask {m.shape}")
    return img * m.bits[None]


@dataclass(frozen=True)
class RegionMSE:
    mse_global: float
    mse_in: float | None  # None: region empty, value undefined
    mse_out: float | None


def region_mse(a, b, m: Mask) -> RegionMSE:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[1:] != m.shape:
        raise ValueError(f"image {a.shape} does not match mask {m.shape}")
    sq = (a - b) ** 2
    C = a.shape[0]
    inside = m.bits[None] == 1.0
    n_in = int(inside.sum()) * C
    n_out = sq.size - n_in
    s_in = float(np.where(inside, sq, 0.0).sum())
    s_out = float(np.where(inside, 0.0, sq).sum())
    return RegionMSE(
        mse_global=(s_in + s_out) / sq.size,
        mse_in=s_in / n_in if n_in else None,
        mse_out=s_out / n_out if n_out else None,
    )


# ---------------------------------------------------------------- PGM / PPM


def _header_tokens(data: bytes, n: int, what: str):
    """Read ``n`` whitespace-separated header tokens; return them and the raster offset."""
    tokens = []
    pos = 0
    while len(tokens) < n:
        if pos >= len(data):
            raise FormatError(f"{what}: header ends early at byte {pos}")
        c = data[pos:pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError(f"{what}: unterminated comment at byte {pos}")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append((data[start:pos], start))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"{what}: expected single whitespace after header at byte {pos}")
    return tokens, pos + 1


def _parse_raster_header(data: bytes, magic: bytes, what: str):
    toks, offset = _header_tokens(data, 4, what)
    if toks[0][0] != magic:
        raise FormatError(f"{what}: bad magic {toks[0][0]!r} at byte 0, expected {magic!r}")
    vals = []
    for (tok, at), name in zip(toks[1:], ("width", "height", "maxval")):
        if not tok.isdigit():
            raise FormatError(f"{what}: malformed {name} {tok!r} at byte {at}")
        vals.append(int(tok))
    width, height, maxval = vals
    if maxval != 255:
        raise FormatError(f"{what}: maxval {maxval} at byte {toks[3][1]} not supported (need 255)")
    if width < 1 or height < 1:
        raise FormatError(f"{what}: empty raster {width}x{height} at byte {toks[1][1]}")
    return width, height, offset


def load_mask_pgm(path) -> Mask:
    data = Path(path).read_bytes()
    what = f"mask {path}"
    width, height, off = _parse_raster_header(data, b"P5", what)
    need = width * height
    if len(data) - off < need:
        raise FormatError(f"{what}: raster truncated at byte {len(data)}, expected {off + need} bytes")
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(height, width)
    return Mask((px >= PGM_THRESHOLD).astype(np.float64))


def save_mask_pgm(m: Mask, path, comments=()):
    H, W = m.shape
    header = b"P5\n" + b"".join(f"# {c}\n".encode() for c in comments) + f"{W} {H}\n255\n".encode()
    atomic_write(path, header + (m.bits * 255).astype(np.uint8).tobytes())


def to_bytes_image(img) -> np.ndarray:
    """Map model pixels in [-1, 1] to uint8 [H, W, 3] with clamping."""
    img = np.asarray(img, dtype=np.float64)
    u8 = np.round((np.clip(img, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    if u8.shape[0] == 1:
        u8 = np.repeat(u8, 3, axis=0)
    elif u8.shape[0] != 3:
        raise ValueError(f"can only export 1- or 3-channel images, got {u8.shape[0]}")
    return np.transpose(u8, (1, 2, 0))


def save_image_ppm(img, path, comments=()):
    rgb = to_bytes_image(img)
    H, W, _ = rgb.shape
    header = b"P6\n" + b"".join(f"# {c}\n".encode() for c in comments) + f"{W} {H}\n255\n".encode()
    atomic_write(path, header + rgb.tobytes())


def load_image(path, channels: int) -> np.ndarray:
    """Read a P5/P6 raster into model pixel convention [-1, 1], shape [channels, H, W]."""
    data = Path(path).read_bytes()
    what = f"image {path}"
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{what}: bad magic {magic!r} at byte 0, expected b'P5' or b'P6'")
    width, height, off = _parse_raster_header(data, magic, what)
    depth = 1 if magic == b"P5" else 3
    need = width * height * depth
    if len(data) - off < need:
        raise FormatError(f"{what}: raster truncated at byte {len(data)}, expected {off + need} bytes")
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(height, width, depth)
    img = np.transpose(px.astype(np.float64) / 127.5 - 1.0, (2, 0, 1))
    if depth == channels:
        return img
    if depth == 3 and channels == 1:
        return img.mean(axis=0, keepdims=True)
    if depth == 1 and channels == 3:
        return np.repeat(img, 3, axis=0)
    raise ValueError(f"cannot convert {depth}-channel raster to {channels} channels")
