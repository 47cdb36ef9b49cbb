"""Patch labels, dataset manifests, and click annotations.

Nodule boxes drawn on the whole radiograph become per-patch booleans: each
nodule marks exactly one patch positive, the one with the largest intersecting
area (ties go to the lowest row-major index). Case manifests and annotation
logs are line-delimited JSON; annotation logs are append-only.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Literal

from .errors import (
    GridMismatchError,
    InvalidAnnotationError,
    InvalidInputError,
    UncoveredNoduleError,
)
from .lunggrid import GridSpec, PatchGrid, Rect

Split = Literal["train", "val", "test", "unassigned"]
Source = Literal["nckuh-like", "vbd-like", "mohw-like", "synthetic"]

LabelMode = Literal["argmax", "all-intersecting"]


@dataclass(frozen=True)
class NoduleBox:
    """Axis-aligned nodule annotation in original-image coordinates."""

    rect: Rect
    id: str


@dataclass(frozen=True)
class PatchLabelVector:
    """One boolean per patch, in PatchGrid order (left lung first, row-major)."""

    labels: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(bool(v) for v in self.labels))

    @property
    def positives(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.labels) if v)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    image_path: str
    mask_path: str | None = None
    nodules: tuple[NoduleBox, ...] = ()
    difficult: bool = False
    source: Source = "synthetic"
    split: Split = "unassigned"

    def __post_init__(self):
        object.__setattr__(self, "nodules", tuple(self.nodules))


def _parse_rfc3339(stamp: str) -> datetime:
    try:
        return datetime.fromisoformat(stamp.replace("Z", "+00:00"))
    except ValueError as exc:
        raise InvalidAnnotationError(f"bad RFC 3339 timestamp {stamp!r}: {exc}") from exc


@dataclass(frozen=True)
class AnnotationRecord:
    """One click-labeling session for one case."""

    case_id: str
    grid_spec: GridSpec
    positives: frozenset[int]
    annotator: str
    started_at: str
    finished_at: str

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(int(i) for i in self.positives))
        total = self.grid_spec.total_patches
        bad = sorted(i for i in self.positives if i < 0 or i >= total)
        if bad:
            raise InvalidAnnotationError(
                f"patch indices {bad} outside grid of {total} patches"
            )
        if self.duration_ms < 0:
            raise InvalidAnnotationError(
                f"finished_at {self.finished_at} precedes started_at {self.started_at}"
            )

    @property
    def duration_ms(self) -> int:
        delta = _parse_rfc3339(self.finished_at) - _parse_rfc3339(self.started_at)
        return int(delta.total_seconds() * 1000)


# --- label algebra -----------------------------------------------------------

def assign_patch_labels(
    grid: PatchGrid,
    nodules: Iterable[NoduleBox],
    mode: LabelMode = "argmax",
) -> PatchLabelVector:
    """Per-patch labels from nodule boxes.

    Default mode marks, for each nodule, exactly the patch with the largest
    intersecting area (lowest index on ties). "all-intersecting" marks every
    patch the nodule touches, for comparison runs.
    """
    rects = grid.rects
    labels = [False] * len(rects)
    uncovered: list[str] = []
    for nodule in nodules:
        areas = [nodule.rect.intersection_area(r) for r in rects]
        best = max(areas)
        if best <= 0:
            uncovered.append(nodule.id)
            continue
        if mode == "argmax":
            labels[areas.index(best)] = True
        else:
            for i, a in enumerate(areas):
                if a > 0:
                    labels[i] = True
    if uncovered:
        raise UncoveredNoduleError(
            f"{len(uncovered)} nodule(s) intersect no patch: {', '.join(uncovered)}",
            nodule_ids=uncovered,
        )
    return PatchLabelVector(tuple(labels))


def split_cases(
    cases: list[CaseRecord],
    ratio: tuple[int, int] = (3, 1),
    seed: int = 0,
) -> list[CaseRecord]:
    """Random case-level train/val assignment, deterministic under seed.

    All patches of a case share its split. The validation count is
    round(n * val / (train + val)), half away from zero.
    """
    if not cases:
        raise InvalidInputError("cannot split an empty case list")
    if any(c.split != "unassigned" for c in cases):
        raise InvalidInputError("split_cases requires all cases unassigned")
    ids = sorted(c.case_id for c in cases)
    if len(set(ids)) != len(ids):
        raise InvalidInputError("case_id values must be unique")
    train_part, val_part = ratio
    n_val = int((len(cases) * val_part / (train_part + val_part)) + 0.5)
    rng = random.Random(seed)
    rng.shuffle(ids)
    val_ids = set(ids[:n_val])
    return [replace(c, split="val" if c.case_id in val_ids else "train") for c in cases]


def annotation_to_labels(a: AnnotationRecord, grid: PatchGrid) -> PatchLabelVector:
    """Expand an annotation's positive set to the grid's boolean vector."""
    if a.grid_spec != grid.spec:
        raise GridMismatchError(
            f"annotation grid {a.grid_spec} does not match case grid {grid.spec}"
        )
    total = grid.spec.total_patches
    return PatchLabelVector(tuple(i in a.positives for i in range(total)))


# --- manifest / annotation log I/O -------------------------------------------

def case_to_json(case: CaseRecord) -> dict:
    doc = {
        "case_id": case.case_id,
        "image": case.image_path,
        "nodules": [
            {"id": n.id, "x": n.rect.x, "y": n.rect.y, "w": n.rect.w, "h": n.rect.h}
            for n in case.nodules
        ],
        "difficult": case.difficult,
        "source": case.source,
        "split": case.split,
    }
    if case.mask_path is not None:
        doc["mask"] = case.mask_path
    return doc


def case_from_json(doc: dict) -> CaseRecord:
    return CaseRecord(
        case_id=doc["case_id"],
        image_path=doc["image"],
        mask_path=doc.get("mask"),
        nodules=tuple(
            NoduleBox(rect=Rect(n["x"], n["y"], n["w"], n["h"]), id=n["id"])
            for n in doc.get("nodules", [])
        ),
        difficult=bool(doc.get("difficult", False)),
        source=doc.get("source", "synthetic"),
        split=doc.get("split", "unassigned"),
    )


def write_manifest(cases: Iterable[CaseRecord], path: str | Path) -> None:
    lines = [json.dumps(case_to_json(c), sort_keys=True) for c in cases]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[CaseRecord]:
    cases = []
    seen: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        case = case_from_json(json.loads(line))
        if case.case_id in seen:
            raise InvalidInputError(f"duplicate case_id {case.case_id} in {path}")
        seen.add(case.case_id)
        cases.append(case)
    return cases


def annotation_to_json(a: AnnotationRecord) -> dict:
    return {
        "case_id": a.case_id,
        "grid": {
            "cols": a.grid_spec.cols_per_lung,
            "rows": a.grid_spec.rows_per_lung,
            "overlap": a.grid_spec.overlap_fraction,
        },
        "positives": sorted(a.positives),
        "annotator": a.annotator,
        "started_at": a.started_at,
        "finished_at": a.finished_at,
    }


def annotation_from_json(doc: dict) -> AnnotationRecord:
    grid = doc["grid"]
    return AnnotationRecord(
        case_id=doc["case_id"],
        grid_spec=GridSpec(
            cols_per_lung=grid["cols"],
            rows_per_lung=grid["rows"],
            overlap_fraction=grid["overlap"],
        ),
        positives=frozenset(doc["positives"]),
        annotator=doc["annotator"],
        started_at=doc["started_at"],
        finished_at=doc["finished_at"],
    )


def append_annotation(a: AnnotationRecord, path: str | Path) -> None:
    """Append one record to the log; existing lines are never rewritten."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(annotation_to_json(a), sort_keys=True) + "\n")


def read_annotation_log(path: str | Path) -> list[AnnotationRecord]:
    p = Path(path)
    if not p.exists():
        return []
    return [
        annotation_from_json(json.loads(line))
        for line in p.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
