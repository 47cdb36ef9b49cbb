"""8-bit grayscale images: file I/O and patch preprocessing.

Covers the classifier's input pipeline: aspect-preserving resize with padding,
scalar normalization to a float tensor, and deterministic photometric /
geometric augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidConfigError,
    InvalidInputError,
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedMaxvalError,
)

# Grayscale normalization defaults: first-channel values of the common
# ImageNet statistics. Configurable everywhere; never hard-coded in logic.
DEFAULT_MEAN = 0.485
DEFAULT_STD = 0.229

# Patch side used by the desk-scale test configs; 224 matches the full recipe.
DEFAULT_PATCH_TARGET = 56


@dataclass(frozen=True)
class Image:
    """8-bit grayscale raster; `pixels` is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise InvalidInputError(f"image must be a nonempty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise InvalidInputError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def crop(self, x: int, y: int, w: int, h: int) -> "Image":
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise InvalidInputError(f"crop ({x},{y},{w},{h}) outside {self.width}x{self.height} image")
        return Image(self.pixels[y : y + h, x : x + w].copy())


@dataclass(frozen=True)
class Tensor:
    """Channel-major float image (channels, height, width); finite values only."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise InvalidInputError(f"tensor must be (channels, height, width), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("tensor values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class AugmentParams:
    """Deterministic augmentation knobs; identical params give identical output."""

    brightness_delta: float = 0.0   # intensity units, [-64, 64]
    contrast_factor: float = 1.0    # ratio, [0.5, 2.0]
    hflip: bool = False
    rotation_deg: float = 0.0       # degrees, [-15, 15]
    seed: int = 0

    def __post_init__(self):
        if not -64 <= self.brightness_delta <= 64:
            raise InvalidConfigError(f"brightness_delta {self.brightness_delta} outside [-64, 64]")
        if not 0.5 <= self.contrast_factor <= 2.0:
            raise InvalidConfigError(f"contrast_factor {self.contrast_factor} outside [0.5, 2.0]")
        if not -15 <= self.rotation_deg <= 15:
            raise InvalidConfigError(f"rotation_deg {self.rotation_deg} outside [-15, 15]")


def sample_augment_params(seed: int) -> AugmentParams:
    """Draw one parameter set uniformly from the declared ranges."""
    rng = np.random.default_rng(seed)
    return AugmentParams(
        brightness_delta=float(rng.uniform(-64, 64)),
        contrast_factor=float(rng.uniform(0.5, 2.0)),
        hflip=bool(rng.random() < 0.5),
        rotation_deg=float(rng.uniform(-15, 15)),
        seed=seed,
    )


# --- PGM I/O ----------------------------------------------------------------

def _read_pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comments. Returns (token, new_pos)."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of PGM header")
    return buf[start:pos], pos


def load_pgm(path: str | Path) -> Image:
    """Read a binary PGM (P5, maxval 255) with exact pixel values."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise MalformedHeaderError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pgm_token(buf, pos)
        if not tok.isdigit():
            raise MalformedHeaderError(f"{path}: non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"{path}: maxval {maxval}, only 255 supported")
    pos += 1  # single whitespace byte after maxval
    data = buf[pos : pos + width * height]
    if len(data) < width * height:
        raise TruncatedDataError(
            f"{path}: expected {width * height} pixel bytes, found {len(data)}"
        )
    px = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return Image(px.copy())


def save_pgm(img: Image, path: str | Path) -> None:
    """Write a binary PGM (P5, maxval 255); load_pgm(save_pgm(x)) == x."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def load_image(path: str | Path) -> Image:
    """Load a grayscale image; PGM natively, anything else via Pillow."""
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        return load_pgm(p)
    from PIL import Image as PilImage

    with PilImage.open(p) as im:
        return Image(np.asarray(im.convert("L"), dtype=np.uint8))


def to_png_bytes(img: Image) -> bytes:
    """Encode as PNG (for browsers, which cannot render PGM)."""
    import io

    from PIL import Image as PilImage

    out = io.BytesIO()
    PilImage.fromarray(img.pixels, mode="L").save(out, format="PNG")
    return out.getvalue()


# --- resize + pad ------------------------------------------------------------

def _round_half_up(v: np.ndarray | float) -> np.ndarray | float:
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5)


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a 2-D float array using half-pixel centers.

    Sampling is edge-clamped; resizing to the same shape is the identity.
    """
    in_h, in_w = values.shape
    if out_h == in_h and out_w == in_w:
        return values.astype(np.float64, copy=True)
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v = np.asarray(values, dtype=np.float64)
    top = v[y0[:, None], x0[None, :]] * (1 - fx) + v[y0[:, None], x1[None, :]] * fx
    bot = v[y1[:, None], x0[None, :]] * (1 - fx) + v[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def resize_pad_layout(width: int, height: int, target: int) -> tuple[int, int, int, int]:
    """Scaled size and pad offsets for `resize_pad`.

    Returns (scaled_w, scaled_h, offset_x, offset_y): the longer side maps to
    `target`, the shorter side keeps the aspect ratio, and the leftover is
    split evenly with the extra pixel on the bottom/right.
    """
    if width <= 0 or height <= 0:
        raise InvalidInputError("zero-dimension image")
    if width >= height:
        scaled_w = target
        scaled_h = max(1, int(_round_half_up(height * target / width)))
    else:
        scaled_h = target
        scaled_w = max(1, int(_round_half_up(width * target / height)))
    off_x = (target - scaled_w) // 2
    off_y = (target - scaled_h) // 2
    return scaled_w, scaled_h, off_x, off_y


def resize_pad(img: Image, target: int = DEFAULT_PATCH_TARGET, pad_value: int = 0) -> Image:
    """Resize to `target` x `target` preserving aspect ratio, padding the rest.

    The longer side is scaled to `target` with bilinear interpolation; the
    shorter side is scaled by the same factor and centered, with `pad_value`
    filling the border (extra pixel on the bottom/right when odd).
    """
    if target <= 0:
        raise InvalidInputError(f"target must be positive, got {target}")
    scaled_w, scaled_h, off_x, off_y = resize_pad_layout(img.width, img.height, target)
    resized = bilinear_resize(img.pixels.astype(np.float64), scaled_h, scaled_w)
    out = np.full((target, target), pad_value, dtype=np.uint8)
    out[off_y : off_y + scaled_h, off_x : off_x + scaled_w] = np.clip(
        _round_half_up(resized), 0, 255
    ).astype(np.uint8)
    return Image(out)


def normalize(img: Image, mean: float = DEFAULT_MEAN, std: float = DEFAULT_STD) -> Tensor:
    """Map pixels to a single-channel tensor: (pixel/255 - mean) / std."""
    if std <= 0:
        raise InvalidConfigError(f"std must be positive, got {std}")
    v = (img.pixels.astype(np.float64) / 255.0 - mean) / std
    return Tensor(v[None, :, :])


# --- augmentation ------------------------------------------------------------

def _rotate_bilinear(px: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center; samples outside the input count as 0."""
    h, w = px.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse mapping: where does the output pixel come from in the input
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy
    x0 = np.floor(src_x).astype(np.intp)
    y0 = np.floor(src_y).astype(np.intp)
    fx = src_x - x0
    fy = src_y - y0
    out = np.zeros((h, w), dtype=np.float64)
    v = px.astype(np.float64)
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yi = y0 + oy
        xi = x0 + ox
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out[valid] += wgt[valid] * v[yi[valid], xi[valid]]
    return out


def augment(img: Image, p: AugmentParams) -> Image:
    """Apply contrast, brightness, horizontal flip, then rotation, in that order."""
    v = img.pixels.astype(np.float64)
    v = np.clip(128.0 + p.contrast_factor * (v - 128.0), 0, 255)
    v = np.clip(v + p.brightness_delta, 0, 255)
    if p.hflip:
        v = v[:, ::-1]
    if p.rotation_deg != 0.0:
        v = _rotate_bilinear(v, p.rotation_deg)
    return Image(np.clip(_round_half_up(v), 0, 255).astype(np.uint8))
