"""HTTP annotation service: assignment queue, verdict intake, live consensus.

Endpoints (JSON):
    GET  /api/next?annotator=ID   next image for this annotator
    POST /api/annotate            {image_id, annotator, verdict}
    GET  /api/consensus           consensus result per annotated image
    GET  /api/stats               per-annotator and per-class progress
Static images are served under /img/ relative to the manifest directory.

Assignment policy: each annotator gets the lowest-index manifest image they
have not yet judged that still lacks a final consensus (kept or rejected as
irrelevant). The store is the single source of truth; submitting twice for
the same image replaces the earlier verdict.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .curation import (
    AnnotationRecord,
    AnnotationStore,
    consensus,
    consensus_all,
    VALID_VERDICTS,
)
from .errors import CurationError
from .labels import EmotionLabel
from .manifest import DatasetManifest


class AnnotatePayload(BaseModel):
    image_id: str
    annotator: str
    verdict: str


def create_app(
    manifest: DatasetManifest,
    store: AnnotationStore,
    min_agreement: int = 4,
    irrelevant_quorum: int = 4,
    serve_images: bool = True,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="annotation service")
    image_ids = [rec.id for rec in manifest.records]
    id_to_path = {rec.id: rec.image_path for rec in manifest.records}

    def final_ids() -> set[str]:
        grouped = store.by_image()
        done = set()
        for image_id, records in grouped.items():
            result = consensus(records, min_agreement, irrelevant_quorum)
            if result.final:
                done.add(image_id)
        return done

    def progress_for(annotator: str) -> dict:
        judged = store.annotated_by(annotator)
        return {"done": len(judged & set(image_ids)), "total": len(image_ids)}

    @app.get("/api/next")
    def next_image(annotator: str):
        if not annotator:
            raise HTTPException(status_code=400, detail="annotator id required")
        judged = store.annotated_by(annotator)
        finals = final_ids()
        for image_id in image_ids:
            if image_id in judged or image_id in finals:
                continue
            return {
                "image_id": image_id,
                "image_url": f"/img/{id_to_path[image_id]}",
                "progress": progress_for(annotator),
            }
        return {"image_id": None, "done": True, "progress": progress_for(annotator)}

    @app.post("/api/annotate")
    def annotate(payload: AnnotatePayload):
        if payload.image_id not in id_to_path:
            raise HTTPException(status_code=404,
                                detail=f"unknown image id {payload.image_id!r}")
        if payload.verdict not in VALID_VERDICTS:
            raise HTTPException(
                status_code=400,
                detail=f"invalid verdict {payload.verdict!r}; "
                       f"expected one of {list(VALID_VERDICTS)}",
            )
        record = AnnotationRecord(
            image_id=payload.image_id,
            annotator_id=payload.annotator,
            verdict=payload.verdict,
        )
        try:
            store.append(record)
        except OSError as exc:
            raise HTTPException(
                status_code=500,
                detail={"error": "store_write_failed", "message": str(exc)},
            ) from exc
        return {"status": "ok", "progress": progress_for(payload.annotator)}

    @app.get("/api/consensus")
    def consensus_endpoint():
        results = consensus_all(store, min_agreement, irrelevant_quorum)
        return [r.to_json_dict() for r in results]

    @app.get("/api/stats")
    def stats():
        records = store.records()
        per_annotator: dict[str, int] = {}
        for rec in records:
            per_annotator[rec.annotator_id] = per_annotator.get(rec.annotator_id, 0) + 1
        results = consensus_all(store, min_agreement, irrelevant_quorum)
        per_class = {label.display_name: 0 for label in EmotionLabel}
        decided = 0
        for res in results:
            if res.label is not None:
                per_class[res.label.display_name] += 1
            if res.final:
                decided += 1
        return {
            "per_annotator": per_annotator,
            "per_class_kept": per_class,
            "images_total": len(image_ids),
            "images_final": decided,
            "submissions": len(records),
        }

    if serve_images:
        root = Path(manifest.root)
        if root.exists():
            app.mount("/img", StaticFiles(directory=str(root)), name="images")

    if ui_dir is not None:
        ui_dir = Path(ui_dir)
        if not (ui_dir / "index.html").exists():
            raise CurationError(f"UI directory {ui_dir} has no index.html "
                                "(run `npm run build` in frontend/ first)")
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(
    manifest: DatasetManifest,
    store_path: str | Path,
    host: str = "127.0.0.1",
    port: int = 8000,
    min_agreement: int = 4,
    irrelevant_quorum: int = 4,
    ui_dir: str | Path | None = None,
) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    store = AnnotationStore(store_path)
    app = create_app(manifest, store, min_agreement, irrelevant_quorum,
                     ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
