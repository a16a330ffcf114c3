"""Image I/O, the paired low/high dataset layout, cropping and synthetic degradation."""
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sdtl.errors import FormatError, InputError, ParseError

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass
class ImageBuf:
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise FormatError(f"ImageBuf needs a non-empty (H, W, 3) array, got {p.shape}")
        self.pixels = p.astype(np.uint8, copy=False)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def to_float(self):
        """(H, W, 3) float64 in [0, 1]."""
        return self.pixels.astype(np.float64) / 255.0

    def to_chw(self, dtype=np.float32):
        return np.ascontiguousarray(self.to_float().transpose(2, 0, 1)).astype(dtype)

    @classmethod
    def from_float(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8))

    @classmethod
    def from_chw(cls, arr):
        return cls.from_float(np.asarray(arr).transpose(1, 2, 0))

    def crop(self, y, x, h, w):
        return ImageBuf(self.pixels[y:y + h, x:x + w].copy())


# -- PPM -----------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_ppm(buf):
    """Parse binary PPM (P6, maxval 255)."""
    pos = 0
    header = []
    for what in ("magic", "width", "height", "maxval"):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ParseError(f"PPM header truncated while reading {what}", offset=pos)
        header.append(m.group(1))
        pos = m.end()
    if header[0] != b"P6":
        raise ParseError(f"not a binary PPM: magic {header[0]!r}", offset=0)
    try:
        width, height, maxval = (int(v) for v in header[1:])
    except ValueError:
        raise ParseError("non-integer PPM header field", offset=pos) from None
    if width <= 0 or height <= 0:
        raise ParseError(f"PPM dimensions must be positive, got {width}x{height}", offset=pos)
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} (only 8-bit, maxval 255)")
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise ParseError("missing whitespace after PPM maxval", offset=pos)
    pos += 1
    expected = width * height * 3
    actual = len(buf) - pos
    if actual < expected:
        raise ParseError(f"truncated PPM pixel data: expected {expected} bytes, got {actual}", offset=pos)
    pixels = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos)
    return ImageBuf(pixels.reshape(height, width, 3).copy())


def encode_ppm(img):
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


# -- generic load/save ---------------------------------------------------

def load_image(path):
    path = Path(path)
    buf = path.read_bytes()
    if buf[:2] == b"P6":
        return decode_ppm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    raise FormatError(f"{path}: unsupported image format (expected binary PPM or PNG)")


def _load_png(path):
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA", "L", "P"):
            raise FormatError(f"{path}: unsupported PNG mode {im.mode} (8-bit RGB expected)")
        return ImageBuf(np.asarray(im.convert("RGB")))


def save_image(path, img):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        path.write_bytes(encode_ppm(img))
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")
    else:
        raise FormatError(f"{path}: unsupported output suffix {suffix!r}")


def list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# -- datasets ------------------------------------------------------------

class PairedDataset:
    """``<root>/low/*`` and ``<root>/high/*`` paired by filename stem."""

    def __init__(self, root):
        self.root = Path(root)
        low_dir, high_dir = self.root / "low", self.root / "high"
        if not low_dir.is_dir() or not high_dir.is_dir():
            raise InputError(f"{self.root} must contain low/ and high/ subdirectories")
        lows = {p.stem: p for p in list_images(low_dir)}
        highs = {}
        for p in list_images(high_dir):
            if p.stem in highs:
                raise InputError(f"duplicate stem {p.stem!r} under {high_dir}")
            highs[p.stem] = p
        unmatched = sorted(set(lows) ^ set(highs))
        if unmatched:
            raise InputError(f"unpaired files in {self.root}: {unmatched}")
        self.pairs = [(lows[s], highs[s]) for s in sorted(lows)]

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        low_path, high_path = self.pairs[i]
        low, high = load_image(low_path), load_image(high_path)
        if low.pixels.shape != high.pixels.shape:
            raise InputError(f"{low_path.name}: low {low.pixels.shape} and high {high.pixels.shape} differ")
        return low, high

    def stem(self, i):
        return self.pairs[i][0].stem


class InMemoryPairs(list):
    """A list of (low, high) ImageBuf pairs usable wherever a PairedDataset is."""

    def stem(self, i):
        return f"{i:04d}"


def random_crop_pair(low, high, size, rng):
    """Crop the same ``size`` x ``size`` window out of both images. Returns (low, high, (y, x))."""
    if size % 4:
        raise InputError(f"crop size {size} must be divisible by 4")
    if low.pixels.shape != high.pixels.shape:
        raise InputError(f"pair sizes differ: {low.pixels.shape} vs {high.pixels.shape}")
    if low.height < size or low.width < size:
        raise InputError(f"image {low.height}x{low.width} is smaller than crop {size}")
    y = int(rng.integers(0, low.height - size + 1))
    x = int(rng.integers(0, low.width - size + 1))
    return low.crop(y, x, size, size), high.crop(y, x, size, size), (y, x)


def synth_lowlight(img, gamma=3.0, noise_sigma=0.03, rng=None):
    """Darken with ``v ** gamma`` and add Gaussian noise, clamped to [0, 1]."""
    if gamma < 1:
        raise InputError(f"gamma must be >= 1, got {gamma}")
    if noise_sigma < 0:
        raise InputError(f"noise_sigma must be >= 0, got {noise_sigma}")
    v = img.to_float() ** gamma
    if noise_sigma > 0:
        v = v + rng.normal(0.0, noise_sigma, size=v.shape)
    return ImageBuf.from_float(np.clip(v, 0.0, 1.0))


def procedural_scene(size, rng):
    """A smooth colourful test image: gradient background plus a few flat shapes."""
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    c0, c1, c2 = rng.uniform(0.2, 0.9, size=(3, 3))
    img = c0 + (c1 - c0) * xx[..., None] + (c2 - c0) * yy[..., None] * 0.5
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0.2, 0.8, size=2) * (h, w)
        r = rng.uniform(0.1, 0.3) * min(h, w)
        if rng.random() < 0.5:
            mask = (yy * max(h, w) - cy) ** 2 + (xx * max(h, w) - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy * max(h, w) - cy) < r) & (np.abs(xx * max(h, w) - cx) < r * 0.7)
        img[mask] = color
    return ImageBuf.from_float(np.clip(img, 0.0, 1.0))
