import logging
import re

import numpy as np

from errors import (PestKitError, InvalidDimensions, MalformedHeader, MaxvalUnsupported,
                    TruncatedData, InputError)

logger = logging.getLogger(__name__)

_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


class GrayImage:
    """8-bit grayscale raster, immutable after construction."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidDimensions(f"image must be a non-empty 2-D raster, got shape {arr.shape}")
        arr.setflags(write=False)
        self._pixels = arr

    @property
    def pixels(self):
        return self._pixels

    @property
    def width(self):
        return self._pixels.shape[1]

    @property
    def height(self):
        return self._pixels.shape[0]

    @property
    def size_bytes(self):
        return self.width * self.height

    def crop(self, x, y, w, h):
        if x < 0 or y < 0 or w < 1 or h < 1 or x + w > self.width or y + h > self.height:
            raise InvalidDimensions(f"crop ({x},{y},{w},{h}) outside {self.width}x{self.height}")
        return GrayImage(self._pixels[y:y + h, x:x + w])

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash((self.width, self.height, self._pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


# ─── PGM I/O ───────────────────────────────────────────────────────────────
def load_pgm(content):
    """Decode a binary P5 graymap with maxval 255."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _HEADER_TOKEN.match(content, pos)
        if not m:
            raise MalformedHeader("PGM header ended early")
        tokens.append(m.group(1))
        pos = m.end()

    if tokens[0] != b"P5":
        raise MalformedHeader(f"unsupported magic {tokens[0][:8]!r}, expected P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeader("non-numeric PGM dimensions") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise MaxvalUnsupported(f"maxval {maxval} unsupported, only 255 is accepted")
    if pos >= len(content) or not content[pos:pos + 1].isspace():
        raise MalformedHeader("missing whitespace after PGM maxval")
    pos += 1

    payload = content[pos:pos + width * height]
    if len(payload) < width * height:
        raise TruncatedData(f"expected {width * height} pixel bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels)


def save_pgm(img):
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    try:
        return load_pgm(data)
    except PestKitError as e:
        raise type(e)(f"{path}: {e}") from None


def write_pgm(path, img):
    with open(path, "wb") as f:
        f.write(save_pgm(img))


# ─── preprocessing ─────────────────────────────────────────────────────────
def sensor_degrade(img, sigma, seed):
    """Add clamped i.i.d. Gaussian noise, mimicking a low-cost grayscale sensor."""
    if sigma < 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=img.pixels.shape)
    out = np.floor(img.pixels.astype(np.float64) + noise + 0.5)
    return GrayImage(np.clip(out, 0, 255))


def _sample_grid(src_len, dst_len):
    # half-pixel centres, clamped to the source raster
    pos = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src_len - 1)
    return lo, hi, pos - lo


def downscale(img, new_w, new_h):
    """Bilinear downscale with half-pixel-centred sampling."""
    if not (1 <= new_w <= img.width and 1 <= new_h <= img.height):
        raise InvalidDimensions(
            f"cannot resize {img.width}x{img.height} to {new_w}x{new_h}: only downscaling is supported")
    if new_w == img.width and new_h == img.height:
        return img

    x0, x1, fx = _sample_grid(img.width, new_w)
    y0, y1, fy = _sample_grid(img.height, new_h)
    p = img.pixels.astype(np.float64)
    fx = fx[np.newaxis, :]
    fy = fy[:, np.newaxis]

    top = p[np.ix_(y0, x0)] * (1.0 - fx) + p[np.ix_(y0, x1)] * fx
    bottom = p[np.ix_(y1, x0)] * (1.0 - fx) + p[np.ix_(y1, x1)] * fx
    out = top * (1.0 - fy) + bottom * fy
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255))
