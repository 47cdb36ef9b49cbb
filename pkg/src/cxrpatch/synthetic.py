"""Deterministic synthetic radiograph-like cases with known ground truth.

Each 256x256 case has a bright background (~200), two dark lung rectangles
(~40) at jittered canonical positions, and optionally one bright elliptical
nodule (radius 4..12 px) placed fully inside a lung, its bounding box recorded
in the manifest. Dim nodules are flagged as difficult cases. Identical seeds
produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import Image, save_pgm
from .labels import CaseRecord, NoduleBox, write_manifest
from .lunggrid import Mask, Rect
from .segbaseline import save_mask

IMAGE_SIZE = 256
# nodules dimmer than this are hard to spot against the lung; flag difficult
DIFFICULT_INTENSITY = 140


@dataclass(frozen=True)
class SyntheticCase:
    record: CaseRecord
    image: Image
    lung_mask: Mask
    left_lung: Rect
    right_lung: Rect


def _lung_shape(rng: np.random.Generator) -> tuple[int, int, int, int]:
    """(x jitter, y, w, h) for one lung at a canonical position."""
    return (
        int(rng.integers(-6, 7)),
        48 + int(rng.integers(-10, 11)),
        int(rng.integers(58, 79)),
        int(rng.integers(118, 159)),
    )


def generate_case(
    case_id: str,
    rng: np.random.Generator,
    nodule_fraction: float = 0.55,
    difficult_fraction: float = 0.25,
) -> SyntheticCase:
    size = IMAGE_SIZE
    background = int(rng.integers(190, 211))
    lung_value = int(rng.integers(32, 49))
    ljx, ly, lw, lh = _lung_shape(rng)
    left = Rect(x=30 + ljx, y=ly, w=lw, h=lh)
    rjx, ry, rw, rh = _lung_shape(rng)
    right = Rect(x=size - 30 - rw + rjx, y=ry, w=rw, h=rh)

    px = np.full((size, size), background, dtype=np.float64)
    mask = np.zeros((size, size), dtype=bool)
    for lung in (left, right):
        px[lung.y : lung.bottom, lung.x : lung.right] = lung_value
        mask[lung.y : lung.bottom, lung.x : lung.right] = True

    nodules: tuple[NoduleBox, ...] = ()
    difficult = False
    if rng.random() < nodule_fraction:
        difficult = rng.random() < difficult_fraction
        intensity = (
            int(rng.integers(120, DIFFICULT_INTENSITY))
            if difficult
            else int(rng.integers(150, 186))
        )
        lung = left if rng.random() < 0.5 else right
        rx = int(rng.integers(4, 13))
        ry = int(rng.integers(4, 13))
        cx = int(rng.integers(lung.x + rx + 1, lung.right - rx - 1))
        cy = int(rng.integers(lung.y + ry + 1, lung.bottom - ry - 1))
        yy, xx = np.mgrid[0:size, 0:size]
        ellipse = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        px[ellipse] = intensity
        nodules = (
            NoduleBox(
                rect=Rect(x=cx - rx, y=cy - ry, w=2 * rx + 1, h=2 * ry + 1),
                id=f"{case_id}-n0",
            ),
        )

    noise = rng.normal(0.0, 2.5, size=(size, size))
    image = Image(np.clip(np.floor(px + noise + 0.5), 0, 255).astype(np.uint8))
    record = CaseRecord(
        case_id=case_id,
        image_path=f"images/{case_id}.pgm",
        mask_path=f"masks/{case_id}.pgm",
        nodules=nodules,
        difficult=difficult,
        source="synthetic",
    )
    return SyntheticCase(
        record=record, image=image, lung_mask=Mask(mask), left_lung=left, right_lung=right
    )


def generate_dataset(
    n: int,
    seed: int,
    out_dir: str | Path,
    nodule_fraction: float = 0.55,
    difficult_fraction: float = 0.25,
) -> list[CaseRecord]:
    """Write images/, masks/ (ground truth), and manifest.jsonl under out_dir."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        case = generate_case(
            f"syn-{i:04d}", rng,
            nodule_fraction=nodule_fraction,
            difficult_fraction=difficult_fraction,
        )
        save_pgm(case.image, out / case.record.image_path)
        save_mask(case.lung_mask, out / case.record.mask_path)
        records.append(case.record)
    write_manifest(records, out / "manifest.jsonl")
    return records
