"""HTTP JSON API for the 2AFC study, serving pre-rendered patch files.

Endpoints:
  POST /sessions                        create (idempotent per participant token)
  GET  /trials/{session}/{index}        pair metadata + image URLs
  GET  /trials/{session}/{index}/{side} the patch file for one side (opaque URL,
                                        so participants never see method labels)
  POST /responses                       record one choice (409 on repeat)
  GET  /report                          aggregates, gated by the admin token
  GET  /images/...                      static patch files (admin/debug path)
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Header, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .study import ConflictError, EmptyReportError, NotFoundError, StudyStore


class SessionRequest(BaseModel):
    participant_token: str | None = None


class ResponseRequest(BaseModel):
    session_id: str
    pair_id: str
    side: str


def _trial_sides(store: StudyStore, session, index: int) -> dict[str, str]:
    pair_id = session.trial_order[index]
    pair = next(p for p in store.pairs if p.pair_id == pair_id)
    if session.flipped[pair_id]:
        return {"left": pair.patch_b, "right": pair.patch_a}
    return {"left": pair.patch_a, "right": pair.patch_b}


def _trial_payload(store: StudyStore, session, index: int, show_reference: bool) -> dict:
    if index < 0 or index >= len(session.trial_order):
        raise HTTPException(status_code=404, detail="trial index out of range")
    pair_id = session.trial_order[index]
    pair = next(p for p in store.pairs if p.pair_id == pair_id)
    answered = pair_id in session.responses
    # per-trial image URLs are opaque so the participant never sees method labels
    payload = {
        "pair_id": pair_id,
        "index": index,
        "total": len(session.trial_order),
        "left_url": f"/trials/{session.session_id}/{index}/left",
        "right_url": f"/trials/{session.session_id}/{index}/right",
        "answered": answered,
        "side": session.responses[pair_id].side if answered else None,
    }
    if show_reference and pair.patch_reference is not None:
        payload["reference_url"] = f"/trials/{session.session_id}/{index}/reference"
    return payload


def create_app(store: StudyStore, images_root: Path | str, admin_token: str = "admin",
               show_reference: bool = False) -> FastAPI:
    app = FastAPI(title="genjscc study service")
    app.mount("/images", StaticFiles(directory=str(images_root)), name="images")

    @app.post("/sessions")
    def create_session(req: SessionRequest):
        session = store.create_session(req.participant_token)
        return {
            "session_id": session.session_id,
            "participant_token": session.participant_token,
            "n_trials": len(session.trial_order),
            "first_unanswered": session.first_unanswered_index(),
            "answered": {pid: r.side for pid, r in session.responses.items()},
            "trials": [
                _trial_payload(store, session, i, show_reference)
                for i in range(len(session.trial_order))
            ],
        }

    @app.get("/trials/{session_id}/{index}")
    def get_trial(session_id: str, index: int):
        try:
            session = store.get_session(session_id)
        except NotFoundError:
            raise HTTPException(status_code=404, detail="unknown session")
        return _trial_payload(store, session, index, show_reference)

    @app.get("/trials/{session_id}/{index}/{side}")
    def get_trial_image(session_id: str, index: int, side: str):
        try:
            session = store.get_session(session_id)
        except NotFoundError:
            raise HTTPException(status_code=404, detail="unknown session")
        if index < 0 or index >= len(session.trial_order):
            raise HTTPException(status_code=404, detail="trial index out of range")
        if side == "reference":
            pair = next(p for p in store.pairs if p.pair_id == session.trial_order[index])
            if not show_reference or pair.patch_reference is None:
                raise HTTPException(status_code=404, detail="reference not available")
            rel = pair.patch_reference
        elif side in ("left", "right"):
            rel = _trial_sides(store, session, index)[side]
        else:
            raise HTTPException(status_code=404, detail="side must be left, right, or reference")
        return FileResponse(Path(images_root) / rel, media_type="image/png")

    @app.post("/responses", status_code=201)
    def post_response(req: ResponseRequest):
        try:
            session = store.record_response(req.session_id, req.pair_id, req.side)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "recorded": req.pair_id,
            "answered_count": len(session.responses),
            "complete": session.complete,
        }

    @app.get("/report")
    def report(x_admin_token: str = Header(default="")):
        if x_admin_token != admin_token:
            raise HTTPException(status_code=403, detail="admin token required")
        try:
            agg = store.aggregate()
        except EmptyReportError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "preference_pct": agg.preference_pct,
            "pooled_pct": agg.pooled_pct,
            "per_pair": agg.per_pair,
            "participant_count": agg.participant_count,
        }

    return app


def serve(store: StudyStore, images_root: Path | str, host: str = "127.0.0.1",
          port: int = 8750, admin_token: str = "admin", show_reference: bool = False) -> None:
    import uvicorn

    uvicorn.run(create_app(store, images_root, admin_token, show_reference),
                host=host, port=port, log_level="warning")
