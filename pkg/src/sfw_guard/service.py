"""HTTP guardrail service: classification plus the shared review queue.

Classification is read-only over the immutable loaded model; review endpoints
mutate only the persisted queue. The active-learning loop and this service
coordinate exclusively through that queue file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .active import AlreadyDecided, ReviewQueue, UnknownReviewItem
from .corpus import CANONICAL_LABELS, DatasetError, Label, parse_label
from .errors import SfwGuardError
from .model import artifact_digest, load_classifier, predict


class ServiceError(SfwGuardError):
    """Raised when the service cannot start."""


ENV_CONFIG = "SFW_GUARD_CONFIG"
ENV_BIND = "SFW_GUARD_BIND"


@dataclass(frozen=True)
class ServiceConfig:
    model_path: str
    queue_path: str
    host: str = "127.0.0.1"
    port: int = 8756
    dataset_path: str | None = None
    safe_labels: frozenset[Label] = frozenset({Label.SAFE_FOR_WORK})
    max_body_bytes: int = 65536
    request_timeout: float = 10.0
    ui_dir: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        if not path.exists():
            raise ServiceError(f"service config not found: {path}")
        try:
            doc = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ServiceError(f"service config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ServiceConfig":
        if "model_path" not in doc or "queue_path" not in doc:
            raise ServiceError("service config requires model_path and queue_path")
        safe = doc.get("safe_labels")
        safe_labels = (
            frozenset(parse_label(s) for s in safe) if safe else frozenset({Label.SAFE_FOR_WORK})
        )
        cfg = cls(
            model_path=doc["model_path"],
            queue_path=doc["queue_path"],
            host=doc.get("host", "127.0.0.1"),
            port=int(doc.get("port", 8756)),
            dataset_path=doc.get("dataset_path"),
            safe_labels=safe_labels,
            max_body_bytes=int(doc.get("max_body_bytes", 65536)),
            request_timeout=float(doc.get("request_timeout", 10.0)),
            ui_dir=doc.get("ui_dir"),
        )
        return cfg.with_env_bind()

    def with_env_bind(self) -> "ServiceConfig":
        bind = os.environ.get(ENV_BIND)
        if not bind:
            return self
        host, _, port = bind.partition(":")
        updates = {}
        if host:
            updates["host"] = host
        if port:
            updates["port"] = int(port)
        from dataclasses import replace

        return replace(self, **updates)


def create_app(cfg: ServiceConfig) -> FastAPI:
    """Build the ASGI app. Refuses to start if the model artifact won't load."""
    try:
        model = load_classifier(cfg.model_path)
        model_version = artifact_digest(cfg.model_path)
    except SfwGuardError as exc:
        raise ServiceError(f"cannot start service: {exc}") from exc
    queue = ReviewQueue(cfg.queue_path)

    app = FastAPI(title="sfw-guard", docs_url=None, redoc_url=None)
    app.state.model = model
    app.state.model_version = model_version
    app.state.queue = queue
    app.state.config = cfg

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_version": app.state.model_version}

    @app.post("/v1/classify")
    async def classify(request: Request):
        body = await request.body()
        if len(body) > cfg.max_body_bytes:
            return error(413, f"request body exceeds {cfg.max_body_bytes} bytes")
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            return error(400, "request body must be JSON")
        if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
            return error(400, 'request must be {"text": string}')
        text = doc["text"]
        if not text.strip():
            return error(400, "text is empty")
        label, probs = predict(app.state.model, text)
        return {
            "label": label.value,
            "scores": {c.value: float(p) for c, p in zip(CANONICAL_LABELS, probs)},
            "safe": label in cfg.safe_labels,
            "model_version": app.state.model_version,
        }

    @app.get("/v1/review/next")
    def review_next(limit: int = 20):
        items = queue.pending(limit=max(0, limit))
        return {
            "items": [
                {
                    "id": e["id"],
                    "text": e["text"],
                    "proposed": e["proposed"],
                    "confidence": e["confidence"],
                    "round": e["round"],
                }
                for e in items
            ]
        }

    @app.post("/v1/review/{item_id}")
    async def review_decide(item_id: str, request: Request):
        body = await request.body()
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            return error(400, "request body must be JSON")
        decision = doc.get("decision") if isinstance(doc, dict) else None
        if decision not in ("accept", "reject", "relabel"):
            return error(400, 'decision must be "accept", "reject" or "relabel"')
        label = doc.get("label")
        if decision == "relabel":
            if not isinstance(label, str):
                return error(400, "relabel requires a label")
            try:
                parse_label(label)
            except DatasetError:
                return error(400, f"unknown label {label!r}")
        try:
            entry = queue.decide(item_id, decision, label)
        except UnknownReviewItem:
            return error(404, f"no review item with id {item_id!r}")
        except AlreadyDecided:
            return error(409, f"review item {item_id!r} is already decided")
        return {
            "id": entry["id"],
            "state": entry["state"],
            "label": entry["label"],
            "round": entry["round"],
        }

    @app.get("/v1/review/stats")
    def review_stats():
        return queue.stats()

    @app.get("/v1/review/labels")
    def review_labels():
        return {"labels": [label.value for label in CANONICAL_LABELS]}

    ui_dir = cfg.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(cfg: ServiceConfig) -> None:
    """Run the service under uvicorn until interrupted."""
    import uvicorn

    app = create_app(cfg)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
