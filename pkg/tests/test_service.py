"""Annotation service API: assignment policy, persistence, consensus parity."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from safer.curation import AnnotationStore, consensus_all
from safer.labels import IRRELEVANT, EmotionLabel
from safer.manifest import DatasetManifest, SampleRecord
from safer.service import create_app

H = EmotionLabel.HAPPINESS.display_name
S = EmotionLabel.SADNESS.display_name


def make_manifest(n=5, root=None):
    records = tuple(
        SampleRecord(id=f"img{i:02d}", image_path=f"images/img{i:02d}.png")
        for i in range(n)
    )
    kwargs = {"root": root} if root else {}
    return DatasetManifest(name="fixture", records=records, **kwargs)


@pytest.fixture
def client(tmp_path):
    manifest = make_manifest(5)
    store = AnnotationStore(tmp_path / "events.jsonl")
    app = create_app(manifest, store, serve_images=False)
    return TestClient(app), store


def test_fresh_store_serves_first_image(client):
    c, _ = client
    resp = c.get("/api/next", params={"annotator": "a1"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["image_id"] == "img00"
    assert body["image_url"].endswith("images/img00.png")
    assert body["progress"] == {"done": 0, "total": 5}


def test_annotate_then_next_advances(client):
    c, _ = client
    c.post("/api/annotate", json={"image_id": "img00", "annotator": "a1",
                                  "verdict": H})
    body = c.get("/api/next", params={"annotator": "a1"}).json()
    assert body["image_id"] == "img01"
    assert body["progress"]["done"] == 1


def test_duplicate_submission_replaces(client):
    c, store = client
    for verdict in (H, S):
        resp = c.post("/api/annotate", json={"image_id": "img00",
                                             "annotator": "a1", "verdict": verdict})
        assert resp.status_code == 200
    results = consensus_all(store, min_agreement=1)
    img0 = [r for r in results if r.image_id == "img00"][0]
    assert sum(img0.vote_histogram.values()) == 1  # one distinct annotator
    assert img0.vote_histogram == {S: 1}


def test_unknown_image_404(client):
    c, _ = client
    resp = c.post("/api/annotate", json={"image_id": "nope", "annotator": "a1",
                                         "verdict": H})
    assert resp.status_code == 404


def test_bad_verdict_400(client):
    c, _ = client
    resp = c.post("/api/annotate", json={"image_id": "img00", "annotator": "a1",
                                         "verdict": "Bored"})
    assert resp.status_code == 400


def test_final_images_skipped_in_queue(client):
    c, _ = client
    # four annotators agree on img00 -> final; a fresh annotator skips it
    for k in range(4):
        c.post("/api/annotate", json={"image_id": "img00",
                                      "annotator": f"b{k}", "verdict": H})
    body = c.get("/api/next", params={"annotator": "fresh"}).json()
    assert body["image_id"] == "img01"


def test_queue_complete(client):
    c, _ = client
    for i in range(5):
        c.post("/api/annotate", json={"image_id": f"img{i:02d}",
                                      "annotator": "solo", "verdict": H})
    body = c.get("/api/next", params={"annotator": "solo"}).json()
    assert body["image_id"] is None
    assert body["done"] is True
    assert body["progress"] == {"done": 5, "total": 5}


def test_stats_endpoint(client):
    c, _ = client
    for k in range(4):
        c.post("/api/annotate", json={"image_id": "img00",
                                      "annotator": f"a{k}", "verdict": H})
    stats = c.get("/api/stats").json()
    assert stats["per_annotator"] == {f"a{k}": 1 for k in range(4)}
    assert stats["per_class_kept"][H] == 1
    assert stats["images_final"] == 1
    assert stats["submissions"] == 4


def test_restart_preserves_submissions(tmp_path):
    manifest = make_manifest(3)
    store = AnnotationStore(tmp_path / "events.jsonl")
    c = TestClient(create_app(manifest, store, serve_images=False))
    c.post("/api/annotate", json={"image_id": "img00", "annotator": "a1",
                                  "verdict": H})
    c.post("/api/annotate", json={"image_id": "img01", "annotator": "a1",
                                  "verdict": IRRELEVANT})

    store2 = AnnotationStore(tmp_path / "events.jsonl")
    c2 = TestClient(create_app(manifest, store2, serve_images=False))
    body = c2.get("/api/next", params={"annotator": "a1"}).json()
    assert body["image_id"] == "img02"
    assert body["progress"]["done"] == 2


def test_ui_hosting(tmp_path):
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<!doctype html><title>annotate</title>")
    manifest = make_manifest(2)
    store = AnnotationStore(tmp_path / "events.jsonl")
    c = TestClient(create_app(manifest, store, serve_images=False, ui_dir=ui))
    resp = c.get("/")
    assert resp.status_code == 200
    assert "annotate" in resp.text
    # API routes keep precedence over the UI mount
    assert c.get("/api/next", params={"annotator": "a"}).status_code == 200


def test_ui_dir_must_be_built(tmp_path):
    from safer.errors import CurationError

    manifest = make_manifest(1)
    store = AnnotationStore(tmp_path / "events.jsonl")
    with pytest.raises(CurationError, match="index.html"):
        create_app(manifest, store, serve_images=False, ui_dir=tmp_path)


def test_scripted_annotators_match_offline_consensus(tmp_path, rng):
    """8 scripted annotators drive the API to completion on a 20-image
    fixture; the service's consensus equals offline consensus over the log."""
    manifest = make_manifest(20)
    store_path = tmp_path / "events.jsonl"
    store = AnnotationStore(store_path)
    c = TestClient(create_app(manifest, store, serve_images=False))

    verdict_pool = [l.display_name for l in EmotionLabel] + [IRRELEVANT]
    annotators = [f"ann{k}" for k in range(8)]
    # biased draws so keeps, irrelevant-rejects and no-consensus all occur
    for k, annotator in enumerate(annotators):
        while True:
            body = c.get("/api/next", params={"annotator": annotator}).json()
            if body["image_id"] is None:
                break
            image_no = int(body["image_id"][3:])
            if image_no % 3 == 0:
                verdict = H if k < 5 else S
            elif image_no % 3 == 1:
                verdict = IRRELEVANT if k < 4 else verdict_pool[
                    int(rng.integers(0, 7))]
            else:
                verdict = verdict_pool[int(rng.integers(0, len(verdict_pool)))]
            resp = c.post("/api/annotate", json={"image_id": body["image_id"],
                                                 "annotator": annotator,
                                                 "verdict": verdict})
            assert resp.status_code == 200

    api_results = c.get("/api/consensus").json()

    offline_store = AnnotationStore(store_path)
    offline = [r.to_json_dict() for r in consensus_all(offline_store)]
    assert api_results == offline
    # every image either reached a final decision or was judged by all 8
    by_image = offline_store.by_image()
    for res in offline:
        judged = {r.annotator_id for r in by_image[res["image_id"]]}
        final = res["decision"] in ("keep", "reject_irrelevant")
        assert final or len(judged) == 8
