import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cxrpatch.labels import read_annotation_log, read_manifest, write_manifest
from cxrpatch.lunggrid import GridSpec
from cxrpatch.nnet import TinyResNet, TrainConfig, save_checkpoint
from cxrpatch.pipeline import PipelineConfig, case_grid, case_mask
from cxrpatch.service import ServiceState, create_app
from cxrpatch.synthetic import generate_dataset


@pytest.fixture(scope="module")
def seeded_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    generate_dataset(6, 11, root)
    return root


@pytest.fixture()
def client(seeded_root, tmp_path):
    state = ServiceState(
        manifest_path=str(seeded_root / "manifest.jsonl"),
        annotation_log_path=str(tmp_path / "annotations.jsonl"),
        scores_path=str(tmp_path / "scores.jsonl"),
        pipeline=PipelineConfig(patch_target=32),
    )
    return TestClient(create_app(state)), state


def post_body(positives, grid=None, annotator="dr-a"):
    body = {
        "positives": positives,
        "annotator": annotator,
        "started_at": "2026-03-01T09:00:00Z",
        "finished_at": "2026-03-01T09:01:00Z",
    }
    if grid is not None:
        body["grid"] = grid
    return body


class TestCaseDetail:
    def test_grid_matches_build_grid_exactly(self, client, seeded_root):
        cli, state = client
        case = read_manifest(seeded_root / "manifest.jsonl")[0]
        r = cli.get(f"/cases/{case.case_id}")
        assert r.status_code == 200
        doc = r.json()
        mask = case_mask(case, seeded_root, state.pipeline)
        _, _, grid = case_grid(mask, state.pipeline.grid_spec)
        served = [(p["x"], p["y"], p["w"], p["h"]) for p in doc["grid"]["rects"]]
        expected = [(p.x, p.y, p.w, p.h) for p in grid.rects]
        assert served == expected
        assert len(served) == 16
        assert doc["grid"]["spec"] == {"cols": 2, "rows": 4, "overlap": 0.25}

    def test_unknown_case_404(self, client):
        cli, _ = client
        assert cli.get("/cases/nope").status_code == 404

    def test_no_scores_field_without_model(self, client, seeded_root):
        cli, _ = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[0].case_id
        doc = cli.get(f"/cases/{case_id}").json()
        assert "scores" not in doc
        assert doc["grid"]["rects"]

    def test_image_served_as_png_and_pgm(self, client, seeded_root):
        cli, _ = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[0].case_id
        png = cli.get(f"/cases/{case_id}/image")
        assert png.status_code == 200
        assert png.headers["content-type"] == "image/png"
        assert png.content[:8] == b"\x89PNG\r\n\x1a\n"
        pgm = cli.get(f"/cases/{case_id}/image?format=pgm")
        assert pgm.content[:2] == b"P5"

    def test_segfail_conflict_when_mask_missing(self, tmp_path, seeded_root):
        import dataclasses

        cases = read_manifest(seeded_root / "manifest.jsonl")[:1]
        # uniform image cannot be segmented and has no mask file
        from cxrpatch.imaging import Image, save_pgm

        save_pgm(Image(np.full((64, 64), 128, dtype=np.uint8)), tmp_path / "flat.pgm")
        bad = dataclasses.replace(cases[0], image_path="flat.pgm", mask_path=None)
        write_manifest([bad], tmp_path / "manifest.jsonl")
        state = ServiceState(
            manifest_path=str(tmp_path / "manifest.jsonl"),
            annotation_log_path=str(tmp_path / "ann.jsonl"),
        )
        cli = TestClient(create_app(state))
        r = cli.get(f"/cases/{bad.case_id}")
        assert r.status_code == 409
        assert "mask" in r.json()["detail"]


class TestAnnotations:
    def test_round_trip_and_status(self, client, seeded_root):
        cli, state = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[0].case_id
        assert cli.get("/cases").json()[0]["status"] == "unread"
        cli.get(f"/cases/{case_id}")  # opening marks in_progress
        statuses = {c["case_id"]: c["status"] for c in cli.get("/cases").json()}
        assert statuses[case_id] == "in_progress"
        r = cli.post(f"/cases/{case_id}/annotations", json=post_body([3]))
        assert r.status_code == 201
        doc = r.json()
        assert doc["positives"] == [3]
        assert doc["duration_ms"] == 60_000
        detail = cli.get(f"/cases/{case_id}").json()
        assert detail["annotations"][-1]["positives"] == [3]
        assert detail["status"] == "labeled"
        # log replay matches served state
        log = read_annotation_log(state.annotation_log_path)
        assert log[-1].case_id == case_id and set(log[-1].positives) == {3}

    def test_invalid_index_nothing_persisted(self, client, seeded_root):
        cli, state = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[1].case_id
        r = cli.post(f"/cases/{case_id}/annotations", json=post_body([99]))
        assert r.status_code == 422
        assert read_annotation_log(state.annotation_log_path) == []

    def test_finished_before_started_rejected(self, client, seeded_root):
        cli, state = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[1].case_id
        body = post_body([1])
        body["started_at"], body["finished_at"] = body["finished_at"], body["started_at"]
        assert cli.post(f"/cases/{case_id}/annotations", json=body).status_code == 422
        assert read_annotation_log(state.annotation_log_path) == []

    def test_stale_grid_spec_conflict(self, client, seeded_root):
        cli, state = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[1].case_id
        body = post_body([1], grid={"cols": 1, "rows": 3, "overlap": 0.25})
        r = cli.post(f"/cases/{case_id}/annotations", json=body)
        assert r.status_code == 409
        assert read_annotation_log(state.annotation_log_path) == []

    def test_matching_grid_spec_accepted(self, client, seeded_root):
        cli, _ = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[2].case_id
        body = post_body([0, 5], grid={"cols": 2, "rows": 4, "overlap": 0.25})
        assert cli.post(f"/cases/{case_id}/annotations", json=body).status_code == 201

    def test_append_only_log(self, client, seeded_root):
        cli, state = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[3].case_id
        cli.post(f"/cases/{case_id}/annotations", json=post_body([1]))
        first = open(state.annotation_log_path).read()
        cli.post(f"/cases/{case_id}/annotations", json=post_body([2], annotator="dr-b"))
        second = open(state.annotation_log_path).read()
        assert second.startswith(first)
        assert len(read_annotation_log(state.annotation_log_path)) == 2


class TestWorklist:
    def test_risk_ordering_with_ties_and_unscored(self, client, seeded_root):
        cli, state = client
        ids = [c.case_id for c in read_manifest(seeded_root / "manifest.jsonl")]
        state.store_scores(ids[1], [0.2, 0.9])
        state.store_scores(ids[0], [0.1, 0.2])
        state.store_scores(ids[2], [0.9, 0.3])
        wl = cli.get("/worklist?order=risk").json()
        listed = [e["case_id"] for e in wl]
        # 0.9 ties broken by case_id ascending; unscored trail in id order
        assert listed[:3] == [min(ids[1], ids[2]), max(ids[1], ids[2]), ids[0]]
        assert [e["case_id"] for e in wl[3:]] == sorted(ids[3:])
        assert all(e["risk"] is None for e in wl[3:])

    def test_bad_order_rejected(self, client):
        cli, _ = client
        assert cli.get("/worklist?order=magic").status_code == 422

    def test_mean_ordering_differs(self, client, seeded_root):
        cli, state = client
        ids = [c.case_id for c in read_manifest(seeded_root / "manifest.jsonl")]
        state.store_scores(ids[0], [0.8, 0.0])   # max 0.8 mean 0.4
        state.store_scores(ids[1], [0.5, 0.5])   # max 0.5 mean 0.5
        risk = [e["case_id"] for e in cli.get("/worklist?order=risk").json()[:2]]
        mean = [e["case_id"] for e in cli.get("/worklist?order=mean").json()[:2]]
        assert risk[0] == ids[0] and mean[0] == ids[1]


class TestPredictEndpoint:
    @pytest.fixture()
    def model_client(self, seeded_root, tmp_path):
        cfg = PipelineConfig(patch_target=32)
        net = TinyResNet(base_channels=2, seed=3)
        tc = TrainConfig(total_epochs=21, warmup_epochs=20, seed=3)
        ckpt = tmp_path / "model.ckpt"
        save_checkpoint(net, tc, ckpt, pipeline=cfg.to_json())
        state = ServiceState(
            manifest_path=str(seeded_root / "manifest.jsonl"),
            annotation_log_path=str(tmp_path / "ann.jsonl"),
            scores_path=str(tmp_path / "scores.jsonl"),
            checkpoint_path=str(ckpt),
            pipeline=cfg,
        )
        return TestClient(create_app(state)), state

    def test_predict_persists_and_is_deterministic(self, model_client, seeded_root):
        cli, state = model_client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[0].case_id
        a = cli.post(f"/predict/{case_id}")
        assert a.status_code == 200
        doc = a.json()
        assert len(doc["scores"]) == 16
        assert doc["risk"] == max(doc["scores"])
        b = cli.post(f"/predict/{case_id}")
        assert b.json()["scores"] == doc["scores"]
        # worklist picks up the risk
        wl = cli.get("/worklist").json()
        assert wl[0]["case_id"] == case_id
        assert wl[0]["risk"] == pytest.approx(doc["risk"])
        # scores survive a restart via the store
        state2 = ServiceState(
            manifest_path=state.manifest_path,
            annotation_log_path=state.annotation_log_path,
            scores_path=state.scores_path,
        )
        assert state2.scores[case_id] == doc["scores"]
        # case detail exposes scores and cam references
        detail = cli.get(f"/cases/{case_id}").json()
        assert detail["scores"] == doc["scores"]
        assert detail["cam"][0].endswith("/cam/0")
        cam_resp = cli.get(detail["cam"][0])
        assert cam_resp.status_code == 200
        assert cam_resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_predict_without_model_503(self, client, seeded_root):
        cli, _ = client
        case_id = read_manifest(seeded_root / "manifest.jsonl")[0].case_id
        assert cli.post(f"/predict/{case_id}").status_code == 503

    def test_unknown_case_404(self, model_client):
        cli, _ = model_client
        assert cli.post("/predict/ghost").status_code == 404
