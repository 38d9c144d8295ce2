"""HTTP API over a trained model: reply generation plus KB browsing.

The reply payload builder is plain Python shared with the interactive REPL;
the FastAPI layer only handles transport concerns (JSON validation, status
codes, CORS).
"""

from __future__ import annotations

import logging
import os
from contextlib import asynccontextmanager
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .corpus import Vocabulary, tokenize
from .errors import GendsError, ValidationError
from .inference import generate
from .kb import KnowledgeBase, load_kb
from .model import ModelParams

logger = logging.getLogger(__name__)

MAX_MESSAGE_TOKENS = 1000

ENV_MODEL = "GENDS_MODEL"
ENV_KB = "GENDS_KB"
ENV_PORT = "GENDS_PORT"


@dataclass
class ModelBundle:
    """A loaded model with everything needed to serve replies."""

    params: ModelParams
    vocab: Vocabulary
    kb: KnowledgeBase

    @property
    def version(self) -> str:
        return f"{self.params.config.variant}-{self.params.vocab_hash[:12]}"


def load_bundle(model_path, kb_path) -> ModelBundle:
    from .training import load_checkpoint
    params, vocab = load_checkpoint(model_path)
    kb = load_kb(kb_path)
    return ModelBundle(params, vocab, kb)


def build_reply(bundle: ModelBundle, message: str, mode: str = "greedy",
                beam_width: int = 4, max_len: int = 30,
                session_id: str | None = None) -> dict:
    """Generate a reply and shape it as the wire payload.

    Raises :class:`ValidationError` on bad decoding arguments or an empty
    message; the caller maps transport-level limits itself.  ``session_id``
    is echoed untouched (the model itself is single-turn).
    """
    result = generate(bundle.params, bundle.vocab, bundle.kb, message,
                      mode=mode, beam_width=beam_width, max_len=max_len)
    entities = []
    for emission in result.entity_emissions:
        surface = bundle.kb.first_surface(emission.entity_id)
        entities.append({
            "surface": " ".join(surface),
            "type": bundle.kb.entity_type_of(emission.entity_id),
            "predicate": emission.predicate,
            "position": emission.position,
            "length": len(surface),
            "entity_id": emission.entity_id,
            "prob": emission.prob,
            "gate": emission.gate,
        })
    payload = {
        "response_text": result.text,
        "tokens": list(result.tokens),
        "entities": entities,
        "gate_trace": result.gate_trace,
        "score": result.score,
        "model_version": bundle.version,
    }
    if session_id is not None:
        payload["session_id"] = session_id
    return payload


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(model_path=None, kb_path=None,
               bundle: ModelBundle | None = None) -> FastAPI:
    """Build the API app; the model loads at startup from args or env vars."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.bundle is None:
            model = model_path or os.environ.get(ENV_MODEL)
            kb = kb_path or os.environ.get(ENV_KB)
            if not model or not kb:
                logger.warning("model or KB path missing; serving 503 until set")
            else:
                try:
                    app.state.bundle = load_bundle(model, kb)
                    logger.info("loaded model %s", app.state.bundle.version)
                except (GendsError, OSError) as exc:
                    logger.error("failed to load model: %s", exc)
        yield

    app = FastAPI(title="gends", docs_url=None, redoc_url=None,
                  lifespan=lifespan)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.bundle = bundle

    @app.get("/health")
    def health():
        if app.state.bundle is None:
            return _error(503, "model not loaded")
        return {"status": "ok", "model_version": app.state.bundle.version}

    @app.post("/reply")
    async def reply(request: Request):
        if app.state.bundle is None:
            return _error(503, "model not loaded")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict) or not isinstance(body.get("message"), str):
            return _error(400, "expected a JSON object with a string 'message'")
        message = body["message"]
        if len(tokenize(message)) > MAX_MESSAGE_TOKENS:
            return _error(413, f"message exceeds {MAX_MESSAGE_TOKENS} tokens")
        mode = body.get("mode", "greedy")
        beam_width = body.get("beam_width", 4)
        max_len = body.get("max_len", 30)
        session_id = body.get("session_id")
        if mode not in ("greedy", "beam"):
            return _error(400, f"unknown decoding mode {mode!r}")
        if not isinstance(beam_width, int) or not isinstance(max_len, int) \
                or beam_width < 1 or not 1 <= max_len <= 200:
            return _error(400, "beam_width and max_len must be small integers")
        if session_id is not None and not isinstance(session_id, str):
            return _error(400, "session_id must be a string")
        try:
            return build_reply(app.state.bundle, message, mode=mode,
                               beam_width=beam_width, max_len=max_len,
                               session_id=session_id)
        except ValidationError as exc:
            return _error(400, str(exc))

    @app.get("/kb/entities")
    def kb_entities(q: str = "", limit: int = 50):
        if app.state.bundle is None:
            return _error(503, "model not loaded")
        limit = max(1, min(limit, 200))
        prefix = " ".join(tokenize(q)) if q else ""
        kb = app.state.bundle.kb
        rows = []
        for eid in sorted(kb.entities):
            ent = kb.entities[eid]
            surfaces = [" ".join(form) for form in ent.surface_forms]
            if prefix and not (eid.startswith(prefix) or
                               any(s.startswith(prefix) for s in surfaces)):
                continue
            rows.append({"id": eid, "type": ent.entity_type,
                         "surface": surfaces[0]})
            if len(rows) >= limit:
                break
        return {"entities": rows}

    return app
