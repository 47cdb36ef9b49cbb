"""Classical lung segmentation baseline and mask file loading.

Lungs are radiolucent (dark) on a radiograph, so the baseline thresholds dark
pixels, cleans the result with morphological opening/closing, and keeps the
two largest components. Precomputed masks (e.g. from a trained model) can be
injected through `load_mask` instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidConfigError, MaskMismatchError, SegmentationFailedError
from .imaging import Image, load_pgm
from .lunggrid import Mask, mask_from_pgm_array

_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegConfig:
    """Thresholding + cleanup knobs for the baseline segmenter."""

    threshold_mode: str = "otsu"        # "otsu" or "fixed"
    fixed_threshold: int = 128          # used only when threshold_mode == "fixed"
    open_radius: int = 2
    close_radius: int = 4
    min_component_area: float = 0.02    # fraction of image area

    def __post_init__(self):
        if self.threshold_mode not in ("otsu", "fixed"):
            raise InvalidConfigError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.open_radius < 0 or self.close_radius < 0:
            raise InvalidConfigError("morphology radii must be >= 0")
        if not 0.0 < self.min_component_area < 0.5:
            raise InvalidConfigError(
                f"min_component_area {self.min_component_area} outside (0, 0.5)"
            )


def otsu_threshold(pixels: np.ndarray) -> int:
    """Otsu's threshold on the 256-bin histogram.

    Returns t such that `pixels < t` selects the darker class. For a constant
    image the threshold equals that constant (selecting nothing).
    """
    hist = np.bincount(pixels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist) / total                   # class-0 probability at cut t
    mu = np.cumsum(hist * np.arange(256)) / total     # cumulative mean
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = 0.0
    # cut after bin t -> dark class is {0..t}; threshold for `<` is t+1
    return int(np.argmax(sigma_b)) + 1


def _disk(radius: int) -> np.ndarray:
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (xx * xx + yy * yy) <= radius * radius


def segment_lungs(img: Image, cfg: SegConfig = SegConfig()) -> Mask:
    """Binary lung mask: dark-region threshold, open/close, two largest components.

    Deterministic; raises SegmentationFailedError when fewer than two
    components exceed the minimum area (callers may fall back to a mask file).
    """
    if cfg.threshold_mode == "otsu":
        threshold = otsu_threshold(img.pixels)
    else:
        threshold = cfg.fixed_threshold
    candidate = img.pixels < threshold
    if cfg.open_radius > 0:
        candidate = ndimage.binary_opening(candidate, structure=_disk(cfg.open_radius))
    if cfg.close_radius > 0:
        candidate = ndimage.binary_closing(candidate, structure=_disk(cfg.close_radius))
    labeled, n = ndimage.label(candidate, structure=_CONN8)
    min_area = cfg.min_component_area * img.width * img.height
    areas = np.bincount(labeled.ravel())[1:]
    qualifying = [lbl + 1 for lbl, a in enumerate(areas) if a >= min_area]
    if len(qualifying) < 2:
        raise SegmentationFailedError(
            f"found {len(qualifying)} component(s) above {min_area:.0f} px, need 2",
            component_count=len(qualifying),
        )
    top_two = sorted(qualifying, key=lambda lbl: areas[lbl - 1], reverse=True)[:2]
    return Mask(np.isin(labeled, top_two))


def load_mask(path: str | Path, expect_size: tuple[int, int] | None = None) -> Mask:
    """Load a PGM mask (>=128 counts as lung), checking dimensions when given.

    `expect_size` is (width, height) of the case image.
    """
    img = load_pgm(path)
    if expect_size is not None and (img.width, img.height) != tuple(expect_size):
        raise MaskMismatchError(
            f"mask {path} is {img.width}x{img.height}, case image is "
            f"{expect_size[0]}x{expect_size[1]}"
        )
    return mask_from_pgm_array(img.pixels)


def save_mask(mask: Mask, path: str | Path) -> None:
    """Write a mask as PGM with 0/255 semantics."""
    from .imaging import save_pgm

    save_pgm(Image((mask.bits.astype(np.uint8)) * 255), path)
