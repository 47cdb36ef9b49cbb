"""Annotation and triage HTTP service.

Serves case images with patch-grid geometry, accepts click-label
annotations into an append-only log, exposes a risk-sorted worklist, and
runs the segment -> grid -> classify pipeline on demand. Replaying the
annotation log and score store reconstructs the full served state, so
restarts are lossless.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel, Field

from . import errors
from .imaging import Image, save_pgm, to_png_bytes
from .labels import (
    AnnotationRecord,
    annotation_to_json,
    append_annotation,
    read_annotation_log,
    read_manifest,
)
from .lunggrid import GridSpec, PatchGrid
from .nnet import cam, load_checkpoint
from .nnet.training import predict_proba
from .pipeline import (
    PipelineConfig,
    case_grid,
    case_mask,
    extract_patches,
    load_case_image,
    patch_stack,
)

VALID_ORDERS = ("risk", "mean", "hits")


class AnnotationIn(BaseModel):
    positives: list[int]
    annotator: str = Field(min_length=1)
    started_at: str
    finished_at: str
    grid: dict | None = None


@dataclass
class ServiceState:
    """Mutable service backend; annotation writes are serialized by a lock."""

    manifest_path: str
    annotation_log_path: str
    scores_path: str | None = None
    checkpoint_path: str | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        self.root = Path(self.manifest_path).parent
        self.cases = {c.case_id: c for c in read_manifest(self.manifest_path)}
        if self.scores_path is None:
            self.scores_path = str(Path(self.annotation_log_path).with_name("scores.jsonl"))
        self._write_lock = threading.Lock()
        self._grid_cache: dict[str, PatchGrid] = {}
        self._opened: set[str] = set()
        self.scores: dict[str, list[float]] = {}
        for line in self._read_lines(self.scores_path):
            doc = json.loads(line)
            if doc["case_id"] in self.cases:
                self.scores[doc["case_id"]] = doc["scores"]
        self._net = None
        self._net_pipeline = None
        if self.checkpoint_path:
            self._net, self._train_cfg, pipe = load_checkpoint(self.checkpoint_path)
            self._net_pipeline = PipelineConfig.from_json(pipe)

    @staticmethod
    def _read_lines(path) -> list[str]:
        p = Path(path)
        if not p.exists():
            return []
        return [l for l in p.read_text(encoding="utf-8").splitlines() if l.strip()]

    # --- domain operations ------------------------------------------------

    def case_or_404(self, case_id: str):
        case = self.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")
        return case

    def effective_pipeline(self) -> PipelineConfig:
        return self._net_pipeline or self.pipeline

    def grid_for(self, case_id: str) -> PatchGrid:
        if case_id not in self._grid_cache:
            case = self.case_or_404(case_id)
            cfg = self.effective_pipeline()
            try:
                mask = case_mask(case, self.root, cfg)
                _, _, grid = case_grid(mask, cfg.grid_spec)
            except (errors.SegmentationFailedError, errors.InsufficientComponentsError,
                    errors.MaskMismatchError) as exc:
                raise HTTPException(
                    status_code=409,
                    detail=f"no usable mask for {case_id}: {exc}",
                ) from exc
            self._grid_cache[case_id] = grid
        return self._grid_cache[case_id]

    def annotations_for(self, case_id: str) -> list[AnnotationRecord]:
        return [a for a in read_annotation_log(self.annotation_log_path)
                if a.case_id == case_id]

    def status_of(self, case_id: str, labeled_ids: set[str]) -> str:
        if case_id in labeled_ids:
            return "labeled"
        if case_id in self._opened:
            return "in_progress"
        return "unread"

    def labeled_ids(self) -> set[str]:
        return {a.case_id for a in read_annotation_log(self.annotation_log_path)}

    def store_annotation(self, record: AnnotationRecord) -> None:
        with self._write_lock:
            append_annotation(record, self.annotation_log_path)

    def store_scores(self, case_id: str, scores: list[float]) -> None:
        with self._write_lock:
            with open(self.scores_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"case_id": case_id, "scores": scores}) + "\n")
            self.scores[case_id] = scores


def _grid_doc(grid: PatchGrid) -> dict:
    return {
        "spec": {
            "cols": grid.spec.cols_per_lung,
            "rows": grid.spec.rows_per_lung,
            "overlap": grid.spec.overlap_fraction,
        },
        "rects": [
            {"patch_index": i, "x": r.x, "y": r.y, "w": r.w, "h": r.h,
             "lung": grid.lung_of(i)}
            for i, r in enumerate(grid.rects)
        ],
    }


def create_app(state: ServiceState, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="cxrpatch annotation service")

    @app.get("/cases")
    def list_cases():
        labeled = state.labeled_ids()
        return [
            {
                "case_id": c.case_id,
                "difficult": c.difficult,
                "split": c.split,
                "status": state.status_of(c.case_id, labeled),
            }
            for c in state.cases.values()
        ]

    @app.get("/cases/{case_id}")
    def case_detail(case_id: str):
        case = state.case_or_404(case_id)
        grid = state.grid_for(case_id)
        labeled = state.labeled_ids()
        state._opened.add(case_id)
        doc = {
            "case_id": case_id,
            "image": f"/cases/{case_id}/image",
            "difficult": case.difficult,
            "status": state.status_of(case_id, labeled),
            "grid": _grid_doc(grid),
            "annotations": [
                {**annotation_to_json(a), "duration_ms": a.duration_ms}
                for a in state.annotations_for(case_id)
            ],
        }
        scores = state.scores.get(case_id)
        if scores is not None:
            doc["scores"] = scores
            doc["cam"] = [f"/cases/{case_id}/cam/{i}" for i in range(len(scores))]
        return doc

    @app.get("/cases/{case_id}/image")
    def case_image(case_id: str, format: str = Query("png", pattern="^(png|pgm)$")):
        case = state.case_or_404(case_id)
        img = load_case_image(case, state.root)
        if format == "pgm":
            return Response((state.root / case.image_path).read_bytes(),
                            media_type="image/x-portable-graymap")
        return Response(to_png_bytes(img), media_type="image/png")

    @app.get("/cases/{case_id}/cam/{patch_index}")
    def case_cam(case_id: str, patch_index: int):
        if state._net is None:
            raise HTTPException(status_code=503, detail="no model checkpoint loaded")
        case = state.case_or_404(case_id)
        grid = state.grid_for(case_id)
        if not 0 <= patch_index < len(grid.rects):
            raise HTTPException(status_code=422, detail=f"patch index {patch_index} out of range")
        cfg = state.effective_pipeline()
        img = load_case_image(case, state.root)
        patches = extract_patches(img, grid)
        tensors = patch_stack(patches, cfg)
        heatmap = cam(state._net, tensors[patch_index], class_id=1)
        return Response(to_png_bytes(Image(heatmap.to_u8())), media_type="image/png")

    @app.post("/cases/{case_id}/annotations", status_code=201)
    def post_annotation(case_id: str, body: AnnotationIn):
        state.case_or_404(case_id)
        grid = state.grid_for(case_id)
        spec = grid.spec
        if body.grid is not None:
            sent = GridSpec(
                cols_per_lung=body.grid.get("cols", -1),
                rows_per_lung=body.grid.get("rows", -1),
                overlap_fraction=body.grid.get("overlap", -1.0),
            ) if all(k in body.grid for k in ("cols", "rows", "overlap")) else None
            if sent != spec:
                raise HTTPException(
                    status_code=409,
                    detail=f"stale grid spec: annotation {body.grid}, case uses "
                           f"{{'cols': {spec.cols_per_lung}, 'rows': {spec.rows_per_lung}, "
                           f"'overlap': {spec.overlap_fraction}}}",
                )
        try:
            record = AnnotationRecord(
                case_id=case_id,
                grid_spec=spec,
                positives=frozenset(body.positives),
                annotator=body.annotator,
                started_at=body.started_at,
                finished_at=body.finished_at,
            )
        except errors.InvalidAnnotationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        state.store_annotation(record)
        return {**annotation_to_json(record), "duration_ms": record.duration_ms}

    @app.get("/worklist")
    def worklist(order: str = Query("risk")):
        if order not in VALID_ORDERS:
            raise HTTPException(status_code=422, detail=f"order must be one of {VALID_ORDERS}")
        labeled = state.labeled_ids()
        entries = []
        for case in state.cases.values():
            scores = state.scores.get(case.case_id)
            risk = None
            if scores:
                if order == "mean":
                    risk = sum(scores) / len(scores)
                elif order == "hits":
                    threshold = getattr(state, "_train_cfg", None)
                    t = threshold.threshold if threshold else 0.9
                    risk = float(sum(s > t for s in scores))
                else:
                    risk = max(scores)
            entries.append(
                {
                    "case_id": case.case_id,
                    "risk": risk,
                    "status": state.status_of(case.case_id, labeled),
                    "difficult": case.difficult,
                }
            )
        scored = [e for e in entries if e["risk"] is not None]
        unscored = [e for e in entries if e["risk"] is None]
        scored.sort(key=lambda e: (-e["risk"], e["case_id"]))
        unscored.sort(key=lambda e: e["case_id"])
        return scored + unscored

    @app.post("/predict/{case_id}")
    def predict_case(case_id: str):
        if state._net is None:
            raise HTTPException(status_code=503, detail="no model checkpoint loaded")
        case = state.case_or_404(case_id)
        grid = state.grid_for(case_id)
        cfg = state.effective_pipeline()
        img = load_case_image(case, state.root)
        tensors = patch_stack(extract_patches(img, grid), cfg)
        scores = [float(s) for s in predict_proba(state._net, tensors)]
        state.store_scores(case_id, scores)
        return {"case_id": case_id, "scores": scores, "risk": max(scores)}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
