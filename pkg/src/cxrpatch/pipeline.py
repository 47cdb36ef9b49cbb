"""Glue between manifest cases and classifier-ready patch tensors.

One case flows: image + mask (file or baseline segmenter) -> lung boxes ->
patch grid -> cropped patches -> resize/pad + normalize -> (N, 1, T, T)
float64 stack. Used by the batch CLI, the HTTP service, and the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging
from .imaging import Image, load_image
from .labels import CaseRecord, PatchLabelVector, assign_patch_labels
from .lunggrid import GridSpec, Mask, PatchGrid, Rect, build_grid, mask_to_lung_boxes
from .nnet import PatchDataset
from .segbaseline import SegConfig, load_mask, segment_lungs


@dataclass(frozen=True)
class PipelineConfig:
    grid_spec: GridSpec = GridSpec()
    patch_target: int = imaging.DEFAULT_PATCH_TARGET
    norm_mean: float = imaging.DEFAULT_MEAN
    norm_std: float = imaging.DEFAULT_STD
    seg: SegConfig = SegConfig()

    def to_json(self) -> dict:
        return {
            "grid": {
                "cols": self.grid_spec.cols_per_lung,
                "rows": self.grid_spec.rows_per_lung,
                "overlap": self.grid_spec.overlap_fraction,
            },
            "patch_target": self.patch_target,
            "norm_mean": self.norm_mean,
            "norm_std": self.norm_std,
        }

    @staticmethod
    def from_json(doc: dict) -> "PipelineConfig":
        grid = doc.get("grid", {})
        return PipelineConfig(
            grid_spec=GridSpec(
                cols_per_lung=grid.get("cols", 2),
                rows_per_lung=grid.get("rows", 4),
                overlap_fraction=grid.get("overlap", 0.25),
            ),
            patch_target=doc.get("patch_target", imaging.DEFAULT_PATCH_TARGET),
            norm_mean=doc.get("norm_mean", imaging.DEFAULT_MEAN),
            norm_std=doc.get("norm_std", imaging.DEFAULT_STD),
        )


def load_case_image(case: CaseRecord, root: str | Path) -> Image:
    return load_image(Path(root) / case.image_path)


def case_mask(case: CaseRecord, root: str | Path, cfg: PipelineConfig, img: Image | None = None) -> Mask:
    """Mask from the manifest file when present, else the baseline segmenter."""
    if img is None:
        img = load_case_image(case, root)
    if case.mask_path is not None:
        return load_mask(Path(root) / case.mask_path, expect_size=(img.width, img.height))
    return segment_lungs(img, cfg.seg)


def case_grid(mask: Mask, spec: GridSpec) -> tuple[Rect, Rect, PatchGrid]:
    left, right = mask_to_lung_boxes(mask)
    return left, right, build_grid(left, right, spec)


def extract_patches(img: Image, grid: PatchGrid) -> list[Image]:
    return [img.crop(r.x, r.y, r.w, r.h) for r in grid.rects]


def patch_stack(patches: list[Image], cfg: PipelineConfig) -> np.ndarray:
    """Preprocess patches into one (N, 1, T, T) float64 array."""
    tensors = [
        imaging.normalize(
            imaging.resize_pad(p, cfg.patch_target), cfg.norm_mean, cfg.norm_std
        ).values
        for p in patches
    ]
    return np.stack(tensors)


@dataclass
class CasePatches:
    case: CaseRecord
    grid: PatchGrid
    patches: list[Image]
    tensors: np.ndarray
    labels: PatchLabelVector


def prepare_case(
    case: CaseRecord,
    root: str | Path,
    cfg: PipelineConfig,
    labels: PatchLabelVector | None = None,
) -> CasePatches:
    """Everything the classifier needs for one case.

    Labels default to the nodule-box argmax rule applied to the manifest
    annotations; a vector from a labels file or click annotations overrides.
    """
    img = load_case_image(case, root)
    mask = case_mask(case, root, cfg, img)
    _, _, grid = case_grid(mask, cfg.grid_spec)
    patches = extract_patches(img, grid)
    if labels is None:
        labels = assign_patch_labels(grid, case.nodules)
    return CasePatches(
        case=case,
        grid=grid,
        patches=patches,
        tensors=patch_stack(patches, cfg),
        labels=labels,
    )


def build_dataset(
    cases: list[CaseRecord],
    root: str | Path,
    cfg: PipelineConfig,
    labels_by_case: dict[str, PatchLabelVector] | None = None,
) -> tuple[PatchDataset, list[dict]]:
    """Stack all train/val cases into a PatchDataset.

    Returns the dataset plus one metadata dict per validation patch
    (case_id, patch_index, difficult) in validation-stack order.
    """
    xs: dict[str, list[np.ndarray]] = {"train": [], "val": []}
    ys: dict[str, list[int]] = {"train": [], "val": []}
    meta_val: list[dict] = []
    for case in cases:
        if case.split not in ("train", "val"):
            continue
        given = labels_by_case.get(case.case_id) if labels_by_case else None
        prepared = prepare_case(case, root, cfg, labels=given)
        xs[case.split].append(prepared.tensors)
        ys[case.split].extend(int(v) for v in prepared.labels.labels)
        if case.split == "val":
            meta_val.extend(
                {
                    "case_id": case.case_id,
                    "patch_index": i,
                    "difficult": case.difficult,
                }
                for i in range(len(prepared.labels))
            )
    if not xs["train"] or not xs["val"]:
        raise ValueError("dataset needs cases in both the train and val splits")
    return (
        PatchDataset(
            x_train=np.concatenate(xs["train"]),
            y_train=np.array(ys["train"], dtype=np.intp),
            x_val=np.concatenate(xs["val"]),
            y_val=np.array(ys["val"], dtype=np.intp),
            meta_val=meta_val,
        ),
        meta_val,
    )
