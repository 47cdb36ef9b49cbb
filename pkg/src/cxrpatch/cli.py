"""Batch command-line entry points for the whole pipeline.

Exit codes: 0 success, 1 validation/config error, 2 data error, 3 internal
error. Every subcommand is deterministic under --seed; outputs are
byte-reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import errors, imaging
from .imaging import Image, load_image, save_pgm
from .labels import (
    AnnotationRecord,
    annotation_from_json,
    annotation_to_json,
    annotation_to_labels,
    read_manifest,
    split_cases,
    write_manifest,
)
from .lunggrid import GridSpec, grid_preset
from .metrics import (
    ScoredItem,
    format_report_table,
    subgroup_report,
    write_report_jsonl,
    iou,
)
from .nnet import TinyResNet, TrainConfig, cam, load_checkpoint, save_checkpoint, train
from .nnet.model import Workspace
from .nnet.training import predict_proba
from .pipeline import (
    PipelineConfig,
    build_dataset,
    case_grid,
    case_mask,
    extract_patches,
    load_case_image,
    patch_stack,
    prepare_case,
)
from .segbaseline import SegConfig, load_mask, save_mask, segment_lungs
from .synthetic import generate_dataset

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DATA_ERRORS = (
    errors.PgmParseError,
    errors.SegmentationFailedError,
    errors.InsufficientComponentsError,
    errors.MaskMismatchError,
    errors.UncoveredNoduleError,
    errors.GridMismatchError,
    errors.InvalidAnnotationError,
    errors.DegenerateDataError,
    errors.UndefinedMetricError,
    errors.CheckpointError,
    FileNotFoundError,
)
_VALIDATION_ERRORS = (
    errors.InvalidConfigError,
    errors.InvalidInputError,
    errors.InvalidBoxError,
    errors.ShapeError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit 2; config errors are 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_VALIDATION)


def _grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=16, choices=(16, 6),
                   help="total patch count preset")
    p.add_argument("--overlap", type=float, default=0.25,
                   help="overlap fraction between adjacent patches")


def _pipeline_args(p: argparse.ArgumentParser) -> None:
    _grid_args(p)
    p.add_argument("--patch-size", type=int, default=imaging.DEFAULT_PATCH_TARGET,
                   help="square patch side fed to the classifier")
    p.add_argument("--norm-mean", type=float, default=imaging.DEFAULT_MEAN)
    p.add_argument("--norm-std", type=float, default=imaging.DEFAULT_STD)


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        grid_spec=grid_preset(args.grid, args.overlap),
        patch_target=args.patch_size,
        norm_mean=args.norm_mean,
        norm_std=args.norm_std,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cxrpatch", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="emit the deterministic synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--nodule-fraction", type=float, default=0.55)
    p.add_argument("--difficult-fraction", type=float, default=0.25)

    p = sub.add_parser("segment", help="lung mask from an image (or a whole manifest)")
    p.add_argument("--in", dest="input", help="input image (single-file mode)")
    p.add_argument("--out", dest="output", help="output mask PGM (single-file mode)")
    p.add_argument("--manifest", help="batch mode: segment every case in the manifest")
    p.add_argument("--masks-out", help="batch mode: directory for segmented masks")
    p.add_argument("--manifest-out", help="batch mode: manifest copy pointing at new masks")
    p.add_argument("--iou-report", help="batch mode: JSONL of IoU vs manifest masks")

    p = sub.add_parser("slice", help="cut one case into patch files + geometry sidecar")
    p.add_argument("--in", dest="input", required=True, help="input image")
    p.add_argument("--mask", help="lung mask PGM (default: run the baseline segmenter)")
    p.add_argument("--out-dir", required=True)
    _grid_args(p)

    p = sub.add_parser("label-transform", help="nodule boxes -> per-patch labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="labels JSONL path")
    p.add_argument("--mode", choices=("argmax", "all-intersecting"), default="argmax")
    _grid_args(p)

    p = sub.add_parser("train", help="train the patch classifier from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", help="labels JSONL from label-transform (default: derive from manifest)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split-seed", type=int,
                   help="assign 3:1 train/val splits first (writes <manifest>.split.jsonl "
                        "next to the input manifest so relative paths stay valid)")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--warmup-epochs", type=int, default=20)
    p.add_argument("--eta-min", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--class-weights", type=float, nargs=2, metavar=("W_NEG", "W_POS"),
                   help="default: inverse class frequency of the train split")
    p.add_argument("--seed", type=int, default=0)
    _pipeline_args(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes Table-style reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("predict", help="per-patch scores for one case image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask")
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("cam", help="CAM heatmap PGM for one patch of a case")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask")
    p.add_argument("--patch-index", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="launch the annotation/triage HTTP service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True, help="append-only annotation log path")
    p.add_argument("--scores", help="score store path (default: alongside annotations)")
    p.add_argument("--checkpoint")
    p.add_argument("--ui-dir", help="serve this directory at / (built labeler UI)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _pipeline_args(p)
    return parser


# --- subcommand bodies --------------------------------------------------------


def _cmd_gen_synthetic(args) -> int:
    generate_dataset(args.n, args.seed, args.out_dir,
                     nodule_fraction=args.nodule_fraction,
                     difficult_fraction=args.difficult_fraction)
    print(f"wrote {args.n} cases under {args.out_dir}")
    return EXIT_OK


def _cmd_segment(args) -> int:
    if args.manifest:
        if not args.masks_out:
            raise errors.InvalidInputError("--masks-out is required with --manifest")
        root = Path(args.manifest).parent
        masks_out = Path(args.masks_out)
        masks_out.mkdir(parents=True, exist_ok=True)
        cases = read_manifest(args.manifest)
        updated = []
        iou_lines = []
        for case in cases:
            img = load_case_image(case, root)
            mask = segment_lungs(img)
            rel = Path(args.masks_out).name + f"/{case.case_id}.pgm"
            save_mask(mask, masks_out / f"{case.case_id}.pgm")
            if case.mask_path:
                truth = load_mask(root / case.mask_path, expect_size=(img.width, img.height))
                iou_lines.append({"case_id": case.case_id, "iou": iou(mask, truth)})
            updated.append(dataclasses.replace(case, mask_path=rel))
        if args.manifest_out:
            write_manifest(updated, args.manifest_out)
        if args.iou_report:
            Path(args.iou_report).write_text(
                "\n".join(json.dumps(line) for line in iou_lines) + "\n", encoding="utf-8"
            )
        if iou_lines:
            vals = [l["iou"] for l in iou_lines]
            print(f"segmented {len(cases)} cases; IoU min={min(vals):.4f} mean={sum(vals)/len(vals):.4f}")
        else:
            print(f"segmented {len(cases)} cases")
        return EXIT_OK
    if not args.input or not args.output:
        raise errors.InvalidInputError("segment needs --in/--out or --manifest/--masks-out")
    mask = segment_lungs(load_image(args.input))
    save_mask(mask, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_slice(args) -> int:
    img = load_image(args.input)
    spec = grid_preset(args.grid, args.overlap)
    if args.mask:
        mask = load_mask(args.mask, expect_size=(img.width, img.height))
    else:
        mask = segment_lungs(img)
    _, _, grid = case_grid(mask, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = []
    for i, (patch, rect) in enumerate(zip(extract_patches(img, grid), grid.rects)):
        save_pgm(patch, out / f"patch-{i:02d}.pgm")
        sidecar.append(
            {"patch_index": i, "x": rect.x, "y": rect.y, "w": rect.w, "h": rect.h,
             "lung": grid.lung_of(i)}
        )
    (out / "geometry.jsonl").write_text(
        "\n".join(json.dumps(s) for s in sidecar) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(sidecar)} patches + geometry.jsonl under {out}")
    return EXIT_OK


def _cmd_label_transform(args) -> int:
    root = Path(args.manifest).parent
    spec = grid_preset(args.grid, args.overlap)
    cfg = PipelineConfig(grid_spec=spec)
    cases = read_manifest(args.manifest)
    lines = []
    uncovered: list[dict] = []
    from .labels import assign_patch_labels

    for case in cases:
        mask = case_mask(case, root, cfg)
        _, _, grid = case_grid(mask, spec)
        try:
            vec = assign_patch_labels(grid, case.nodules, mode=args.mode)
        except errors.UncoveredNoduleError as exc:
            uncovered.append({"case_id": case.case_id, "nodule_ids": exc.nodule_ids})
            continue
        lines.append(
            {
                "case_id": case.case_id,
                "grid": {"cols": spec.cols_per_lung, "rows": spec.rows_per_lung,
                         "overlap": spec.overlap_fraction},
                "positives": list(vec.positives),
            }
        )
    Path(args.out).write_text(
        "\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8"
    )
    if uncovered:
        report = Path(args.out).with_suffix(".uncovered.jsonl")
        report.write_text("\n".join(json.dumps(u) for u in uncovered) + "\n", encoding="utf-8")
        print(f"error: {len(uncovered)} case(s) with uncovered nodules -> {report}", file=sys.stderr)
        return EXIT_DATA
    print(f"wrote labels for {len(lines)} cases to {args.out}")
    return EXIT_OK


def _read_labels_file(path, spec: GridSpec):
    by_case = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        grid = doc["grid"]
        got = GridSpec(grid["cols"], grid["rows"], grid["overlap"])
        if got != spec:
            raise errors.GridMismatchError(
                f"labels for {doc['case_id']} use grid {got}, run uses {spec}"
            )
        from .labels import PatchLabelVector

        total = got.total_patches
        positives = set(doc["positives"])
        bad = [i for i in positives if not 0 <= i < total]
        if bad:
            raise errors.InvalidAnnotationError(f"{doc['case_id']}: indices {bad} out of range")
        by_case[doc["case_id"]] = PatchLabelVector(tuple(i in positives for i in range(total)))
    return by_case


def _cmd_train(args) -> int:
    root = Path(args.manifest).parent
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _pipeline_config(args)
    cases = read_manifest(args.manifest)
    if args.split_seed is not None:
        cases = split_cases(cases, seed=args.split_seed)
        split_path = Path(args.manifest).with_suffix(".split.jsonl")
        write_manifest(cases, split_path)
        print(f"wrote split assignment to {split_path}")
    labels_by_case = _read_labels_file(args.labels, cfg.grid_spec) if args.labels else None
    dataset, _ = build_dataset(cases, root, cfg, labels_by_case)
    tc = TrainConfig(
        total_epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        warmup_epochs=args.warmup_epochs,
        eta_min=args.eta_min,
        class_weights=tuple(args.class_weights) if args.class_weights else None,
        seed=args.seed,
        threshold=args.threshold,
    )
    net = TinyResNet(base_channels=args.base_channels, seed=args.seed)
    net, history = train(net, dataset, tc)
    save_checkpoint(net, tc, out / "model.ckpt", pipeline=cfg.to_json())
    (out / "history.jsonl").write_text(
        "\n".join(json.dumps(h) for h in history) + "\n", encoding="utf-8"
    )
    last = history[-1]
    print(
        f"trained {args.epochs} epochs; final val AUROC="
        f"{last['val_auroc']}, AUPR={last['val_aupr']}; wrote {out / 'model.ckpt'}"
    )
    return EXIT_OK


def _scores_for_case(net, prepared, ws=None) -> list[float]:
    return [float(s) for s in predict_proba(net, prepared.tensors, ws)]


def _cmd_eval(args) -> int:
    root = Path(args.manifest).parent
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, tc, pipe = load_checkpoint(args.checkpoint)
    cfg = PipelineConfig.from_json(pipe)
    cases = [c for c in read_manifest(args.manifest) if c.split == args.split]
    if not cases:
        raise errors.InvalidInputError(f"no cases with split={args.split!r} in manifest")
    labels_by_case = _read_labels_file(args.labels, cfg.grid_spec) if args.labels else None
    ws = Workspace()
    items = []
    for case in cases:
        given = labels_by_case.get(case.case_id) if labels_by_case else None
        prepared = prepare_case(case, root, cfg, labels=given)
        for i, (score, truth) in enumerate(
            zip(_scores_for_case(net, prepared, ws), prepared.labels.labels)
        ):
            items.append(
                ScoredItem(score=score, truth=truth, case_id=case.case_id,
                           patch_index=i, difficult=case.difficult)
            )
    reports = subgroup_report(items, tc.threshold)
    table = format_report_table(reports)
    write_report_jsonl(reports, out / "eval.jsonl")
    (out / "eval.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def _prepared_for_predict(args, cfg: PipelineConfig):
    img = load_image(args.input)
    if args.mask:
        mask = load_mask(args.mask, expect_size=(img.width, img.height))
    else:
        mask = segment_lungs(img, cfg.seg)
    _, _, grid = case_grid(mask, cfg.grid_spec)
    patches = extract_patches(img, grid)
    return img, grid, patches, patch_stack(patches, cfg)


def _cmd_predict(args) -> int:
    net, tc, pipe = load_checkpoint(args.checkpoint)
    cfg = PipelineConfig.from_json(pipe)
    _, grid, _, tensors = _prepared_for_predict(args, cfg)
    scores = predict_proba(net, tensors)
    doc = {
        "image": args.input,
        "threshold": tc.threshold,
        "scores": [float(s) for s in scores],
        "positives": [i for i, s in enumerate(scores) if s > tc.threshold],
        "rects": [
            {"patch_index": i, "x": r.x, "y": r.y, "w": r.w, "h": r.h, "lung": grid.lung_of(i)}
            for i, r in enumerate(grid.rects)
        ],
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _cmd_cam(args) -> int:
    net, _, pipe = load_checkpoint(args.checkpoint)
    cfg = PipelineConfig.from_json(pipe)
    _, grid, _, tensors = _prepared_for_predict(args, cfg)
    if not 0 <= args.patch_index < len(grid.rects):
        raise errors.InvalidInputError(
            f"patch index {args.patch_index} outside grid of {len(grid.rects)}"
        )
    heatmap = cam(net, tensors[args.patch_index], class_id=1)
    save_pgm(Image(heatmap.to_u8()), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    state = ServiceState(
        manifest_path=args.manifest,
        annotation_log_path=args.annotations,
        scores_path=args.scores,
        checkpoint_path=args.checkpoint,
        pipeline=_pipeline_config(args),
    )
    app = create_app(state, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "segment": _cmd_segment,
    "slice": _cmd_slice,
    "label-transform": _cmd_label_transform,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "cam": _cmd_cam,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except errors.CxrPatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # anything unforeseen is an internal error
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
