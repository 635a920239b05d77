"""
Raster I/O and the pixel-ratio dust pipeline.

The pipeline is crop -> grayscale -> background-division enhancement ->
fixed threshold -> black/white pixel count. Black pixels are dust. Images
are PGM/PPM with maxval 255 so fixtures need no external codec.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from dustsense.detection import BoundingBox
from dustsense.errors import DecodeError, DomainError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_THRESHOLD = 128
DEFAULT_RADIUS = 15
ENHANCE_MIDLEVEL = 128.0

_WS = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit image; ``pixels`` has shape (height, width) or (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8:
            raise DomainError("pixels must be uint8")
        if p.ndim not in (2, 3) or (p.ndim == 3 and p.shape[2] != 3):
            raise DomainError(f"unsupported pixel array shape {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise DomainError("image must be at least 1x1")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def __eq__(self, other):
        return isinstance(other, RasterImage) and np.array_equal(self.pixels, other.pixels)

    @classmethod
    def from_samples(cls, width: int, height: int, channels: int, samples) -> "RasterImage":
        arr = np.asarray(samples, dtype=np.int64).ravel()
        if arr.size != width * height * channels:
            raise DomainError("sample count does not match width*height*channels")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise DomainError("samples must lie in [0, 255]")
        shape = (height, width) if channels == 1 else (height, width, channels)
        return cls(arr.astype(np.uint8).reshape(shape))


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """Boolean grid; True marks a black (dust) pixel."""

    bits: np.ndarray

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def __eq__(self, other):
        return isinstance(other, BinaryImage) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class PixelReport:
    black_pixels: int
    white_pixels: int

    @property
    def total(self) -> int:
        return self.black_pixels + self.white_pixels

    @property
    def black_ratio(self) -> float:
        return self.black_pixels / self.total if self.total else 0.0


class ImageDustClass(enum.IntEnum):
    NO_DUST = 0
    MEDIUM_DUST = 1
    HEAVY_DUST = 2

    @property
    def label(self) -> str:
        return {0: "NoDust", 1: "MediumDust", 2: "HeavyDust"}[int(self)]


@dataclass(frozen=True)
class ImageClassBounds:
    medium: float = 0.02
    heavy: float = 0.22


# -- PNM codec ---------------------------------------------------------------

def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the last token.
    """
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i] in _WS:
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        if i >= n:
            raise DecodeError("truncated header")
        start = i
        while i < n and data[i] not in _WS and data[i] != ord("#"):
            i += 1
        tokens.append(data[start:i])
    return tokens, i


def decode_pnm(data: bytes) -> RasterImage:
    if len(data) < 2 or data[:1] != b"P" or data[1:2] not in b"2356":
        raise DecodeError("not a P2/P3/P5/P6 file")
    magic = data[:2].decode()
    channels = 3 if magic in ("P3", "P6") else 1
    tokens, pos = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DecodeError("malformed header") from None
    if width < 1 or height < 1:
        raise DecodeError("width and height must be positive")
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}; only 255 is accepted")
    count = width * height * channels

    if magic in ("P5", "P6"):
        if pos >= len(data) or data[pos] not in _WS:
            raise DecodeError("missing whitespace after header")
        raw = data[pos + 1:pos + 1 + count]
        if len(raw) < count:
            raise DecodeError(f"truncated raster: {len(raw)} of {count} bytes")
        samples = np.frombuffer(raw, dtype=np.uint8)
    else:
        body = re.sub(rb"#[^\r\n]*", b" ", data[pos:]).split()
        if len(body) < count:
            raise DecodeError(f"truncated raster: {len(body)} of {count} samples")
        try:
            samples = np.array([int(t) for t in body[:count]], dtype=np.int64)
        except ValueError:
            raise DecodeError("non-numeric sample") from None
        if samples.min() < 0 or samples.max() > 255:
            raise DecodeError("sample exceeds maxval")
    return RasterImage.from_samples(width, height, channels, samples)


def encode_pnm(img: RasterImage, plain: bool = False) -> bytes:
    """Canonical encoding: magic, ``W H``, maxval, each on its own line."""
    magic = {(1, False): "P5", (3, False): "P6", (1, True): "P2", (3, True): "P3"}[
        (img.channels, plain)]
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode()
    if not plain:
        return header + img.pixels.tobytes()
    rows = img.pixels.reshape(img.height, -1)
    body = "".join(" ".join(str(v) for v in row) + "\n" for row in rows.tolist())
    return header + body.encode()


def read_image(path: str | Path) -> RasterImage:
    return decode_pnm(Path(path).read_bytes())


def write_image(path: str | Path, img: RasterImage, plain: bool = False) -> None:
    Path(path).write_bytes(encode_pnm(img, plain))


# -- pixel pipeline ----------------------------------------------------------

def crop(img: RasterImage, x: int, y: int, w: int, h: int) -> RasterImage:
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise DomainError(f"crop rectangle ({x},{y},{w},{h}) outside "
                          f"{img.width}x{img.height} image")
    return RasterImage(img.pixels[y:y + h, x:x + w].copy())


def to_grayscale(img: RasterImage) -> RasterImage:
    if img.channels != 3:
        raise DomainError("grayscale conversion needs a 3-channel image")
    rgb = img.pixels.astype(np.float64)
    luma = rgb @ np.array(LUMA_WEIGHTS)
    # round half up; weights sum to 1 so white stays 255
    return RasterImage(np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8))


def box_mean(values: np.ndarray, radius: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window, clipped to the image at the borders."""
    v = values.astype(np.float64)
    h, w = v.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = v.cumsum(0).cumsum(1)
    ys, xs = np.arange(h), np.arange(w)
    y0, y1 = np.clip(ys - radius, 0, h), np.clip(ys + radius + 1, 0, h)
    x0, x1 = np.clip(xs - radius, 0, w), np.clip(xs + radius + 1, 0, w)
    sums = (integral[y1][:, x1] - integral[y0][:, x1]
            - integral[y1][:, x0] + integral[y0][:, x0])
    area = np.outer(y1 - y0, x1 - x0)
    return sums / area


def adaptive_enhance(gray: RasterImage, radius: int = DEFAULT_RADIUS) -> RasterImage:
    """Divide each pixel by its local background mean, rescaled so background -> 128.

    Evens out uneven illumination the way document scanners do. A flat image
    maps to a flat 128 image; an all-zero neighbourhood also maps to 128.
    """
    if gray.channels != 1:
        raise DomainError("enhancement needs a single-channel image")
    if radius < 1:
        raise DomainError("radius must be >= 1")
    v = gray.pixels.astype(np.float64)
    bg = box_mean(v, radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bg > 0, v / bg, 1.0)
    out = np.clip(np.floor(ratio * ENHANCE_MIDLEVEL + 0.5), 0, 255)
    return RasterImage(out.astype(np.uint8))


def denoise(gray: RasterImage, radius: int = 1) -> RasterImage:
    out = np.floor(box_mean(gray.pixels, radius) + 0.5)
    return RasterImage(np.clip(out, 0, 255).astype(np.uint8))


def binarize(gray: RasterImage, threshold: int = DEFAULT_THRESHOLD) -> BinaryImage:
    if gray.channels != 1:
        raise DomainError("binarize needs a single-channel image")
    # a sample equal to the threshold is white
    return BinaryImage(gray.pixels < threshold)


def pixel_report(bin_img: BinaryImage) -> PixelReport:
    black = int(np.count_nonzero(bin_img.bits))
    return PixelReport(black_pixels=black, white_pixels=int(bin_img.bits.size) - black)


def classify_image_dust(report: PixelReport,
                        bounds: ImageClassBounds = ImageClassBounds()) -> ImageDustClass:
    return classify_black_ratio(report.black_ratio, bounds)


def classify_black_ratio(ratio: float,
                         bounds: ImageClassBounds = ImageClassBounds()) -> ImageDustClass:
    if ratio < bounds.medium:
        return ImageDustClass.NO_DUST
    if ratio < bounds.heavy:
        return ImageDustClass.MEDIUM_DUST
    return ImageDustClass.HEAVY_DUST


def connected_components(bin_img: BinaryImage, min_area: int = 1) -> list[BoundingBox]:
    """Tight boxes of 4-connected black regions with at least ``min_area`` pixels.

    Boxes use exclusive max coordinates, so a single pixel at (x, y) becomes
    ``(x, y, x+1, y+1)``. Output is ordered by (ymin, xmin).
    """
    if min_area < 1:
        raise DomainError("min_area must be >= 1")
    labels, count = ndimage.label(bin_img.bits)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel())
    boxes = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[idx] < min_area:
            continue
        ys, xs = sl
        boxes.append(BoundingBox(xs.start, ys.start, xs.stop, ys.stop))
    boxes.sort(key=lambda b: (b.ymin, b.xmin))
    return boxes


@dataclass
class PipelineResult:
    report: PixelReport
    dust_class: ImageDustClass
    binary: BinaryImage


def run_pipeline(img: RasterImage, rect: Optional[tuple[int, int, int, int]] = None,
                 radius: int = DEFAULT_RADIUS, threshold: int = DEFAULT_THRESHOLD,
                 enhance: bool = True, smooth: bool = False, invert: bool = False,
                 bounds: ImageClassBounds = ImageClassBounds()) -> PipelineResult:
    """Full image classification. ``invert`` flips polarity for dark-background captures."""
    if rect is not None:
        img = crop(img, *rect)
    gray = to_grayscale(img) if img.channels == 3 else img
    if invert:
        gray = RasterImage(255 - gray.pixels)
    if smooth:
        gray = denoise(gray)
    if enhance:
        gray = adaptive_enhance(gray, radius)
    binary = binarize(gray, threshold)
    report = pixel_report(binary)
    return PipelineResult(report, classify_image_dust(report, bounds), binary)


def binary_to_raster(bin_img: BinaryImage) -> RasterImage:
    return RasterImage(np.where(bin_img.bits, 0, 255).astype(np.uint8))


def paint_fixture(width: int, height: int, black_fraction: float,
                  seed: int = 0, rgb: bool = False) -> RasterImage:
    """White image with ``round(black_fraction * width * height)`` pixels painted black.

    Painted pixels are chosen at random; the exact painted count is the
    ground truth a pixel report must reproduce.
    """
    if not 0.0 <= black_fraction <= 1.0:
        raise DomainError("black_fraction must be in [0, 1]")
    n = width * height
    k = int(round(black_fraction * n))
    rng = np.random.default_rng(seed)
    flat = np.full(n, 255, dtype=np.uint8)
    flat[rng.choice(n, size=k, replace=False)] = 0
    pix = flat.reshape(height, width)
    if rgb:
        pix = np.repeat(pix[:, :, None], 3, axis=2)
    return RasterImage(pix)
