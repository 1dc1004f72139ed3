"""HTTP session service backing the interactive frontend and API clients.

Sessions live in memory (optionally mirrored to a persist directory); images
are always served by URL, never inlined into transcripts.
"""
from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, File, Form, HTTPException, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel

from .agents import AgentBackendConfig, ChatAgents, RuleAgents
from .errors import AgentFailure, BackendError, DecodeError, WrongStateError
from .image import ImageBuffer, decode_image_bytes, encode_png_bytes
from .programs import serialize_program
from .scoring import EmbeddingProvider, StatsProvider
from .session import (
    SessionConfig,
    SessionState,
    SessionStatus,
    export_session,
    interactive_step,
    run_iteration,
    user_select,
)

CONFIG_OVERRIDE_KEYS = ("max_iters", "n_candidates", "score", "agent", "warm_start")


@dataclass
class ServiceSession:
    state: SessionState
    agents: object
    provider: object
    images: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


class InstructionBody(BaseModel):
    text: str


class SelectBody(BaseModel):
    index: int


def _error(status_code: int, detail: str, retryable: bool = False):
    raise HTTPException(status_code=status_code, detail={"message": detail, "retryable": retryable})


def create_app(
    persist_dir: str = "",
    chat_endpoint: str = "",
    chat_model: str = "gpt-4o",
    embed_endpoint: str = "",
    ui_dir: str = "",
) -> FastAPI:
    app = FastAPI(title="retouchkit session service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict = {}
    app.state.sessions = sessions

    @app.exception_handler(HTTPException)
    async def _http_exc(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {"message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content={"detail": detail})

    def get_session(session_id: str) -> ServiceSession:
        sess = sessions.get(session_id)
        if sess is None:
            _error(404, f"unknown session {session_id}")
        return sess

    def image_url(session_id: str, key: str) -> str:
        return f"/sessions/{session_id}/images/{key}"

    def stash_record_images(session_id: str, sess: ServiceSession) -> None:
        record = sess.state.history[-1]
        t = record.iteration
        if record.candidate_images:
            for i, img in enumerate(record.candidate_images):
                sess.images[f"iter{t}_cand{i}"] = img
        sess.images[f"iter{t}_selected"] = sess.state.source

    def persist(session_id: str, sess: ServiceSession) -> None:
        if persist_dir:
            export_session(sess.state, os.path.join(persist_dir, session_id))

    def state_payload(session_id: str, sess: ServiceSession) -> dict:
        state = sess.state
        payload = state.as_dict()
        payload["session_id"] = session_id
        payload["mode"] = state.config.mode
        payload["images"] = {key: image_url(session_id, key) for key in sorted(sess.images)}
        payload["current_source_url"] = image_url(session_id, "current")
        return payload

    def build_agents(config: SessionConfig):
        if config.agent == "rule":
            return RuleAgents()
        if not chat_endpoint:
            _error(422, "this service has no chat backend configured; use rule agents")
        return ChatAgents(AgentBackendConfig(endpoint=chat_endpoint, model=chat_model))

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.post("/sessions", status_code=201)
    async def create_session(
        source: UploadFile = File(...),
        refs: list[UploadFile] = File(default=[]),
        mode: str = Form(default="reference"),
        config: str = Form(default="{}"),
    ):
        try:
            overrides = json.loads(config) if config else {}
            if not isinstance(overrides, dict):
                raise ValueError("config must be a JSON object")
            unknown = set(overrides) - set(CONFIG_OVERRIDE_KEYS)
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            session_config = SessionConfig(mode=mode, keep_candidate_images=True, **overrides)
        except (ValueError, TypeError) as exc:
            _error(422, f"invalid config: {exc}")
        if mode == "instruction" and session_config.agent == "rule":
            _error(422, "instruction mode requires chat agents")

        try:
            source_img = decode_image_bytes(await source.read(), origin=source.filename or "source")
            ref_imgs = []
            for ref in refs:
                ref_imgs.append(decode_image_bytes(await ref.read(), origin=ref.filename or "ref"))
            ref_imgs = tuple(ref_imgs)
        except DecodeError as exc:
            _error(422, str(exc))
        if mode == "reference" and not ref_imgs:
            _error(422, "reference mode needs at least one reference image")
        if mode == "instruction" and ref_imgs:
            _error(422, "instruction mode takes no reference images")

        agents = build_agents(session_config)
        provider = EmbeddingProvider(embed_endpoint) if embed_endpoint else StatsProvider()
        state = SessionState(config=session_config, source=source_img, refs=ref_imgs)
        session_id = secrets.token_hex(16)
        sess = ServiceSession(state=state, agents=agents, provider=provider)
        sess.images["source"] = source_img
        for i, ref in enumerate(ref_imgs):
            sess.images[f"ref_{i}"] = ref
        sessions[session_id] = sess
        persist(session_id, sess)
        return JSONResponse(
            status_code=201,
            content={"session_id": session_id, "state": state_payload(session_id, sess)},
        )

    @app.get("/sessions/{session_id}")
    def get_transcript(session_id: str):
        sess = get_session(session_id)
        return state_payload(session_id, sess)

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str):
        sess = get_session(session_id)
        with sess.lock:
            if sess.state.config.mode != "reference":
                _error(409, "automatic steps run in reference mode only")
            if sess.state.status is not SessionStatus.RUNNING:
                _error(409, f"session is {sess.state.status.value}, not running")
            try:
                run_iteration(sess.state, sess.agents, sess.provider)
            except BackendError as exc:
                _error(502, str(exc), retryable=True)
            stash_record_images(session_id, sess)
            persist(session_id, sess)
            record = sess.state.history[-1]
            return {
                "iteration_record": record.as_dict(),
                "status": sess.state.status.value,
            }

    @app.post("/sessions/{session_id}/instruction")
    def instruction(session_id: str, body: InstructionBody):
        sess = get_session(session_id)
        with sess.lock:
            if sess.state.config.mode != "instruction":
                _error(409, "this session is not in instruction mode")
            if sess.state.status is not SessionStatus.RUNNING:
                _error(409, f"session is {sess.state.status.value}; select a candidate first")
            try:
                pending = interactive_step(sess.state, body.text, sess.agents)
            except (AgentFailure, BackendError) as exc:
                _error(502, str(exc), retryable=True)
            t = sess.state.iteration
            candidates = []
            for i, (img, program) in enumerate(pending):
                key = f"iter{t}_cand{i}"
                sess.images[key] = img
                candidates.append(
                    {
                        "index": i,
                        "image_url": image_url(session_id, key),
                        "program": json.loads(serialize_program(program)),
                        "program_text": program.as_call_lines(),
                    }
                )
            persist(session_id, sess)
            return {"candidates": candidates, "status": sess.state.status.value}

    @app.post("/sessions/{session_id}/select")
    def select(session_id: str, body: SelectBody):
        sess = get_session(session_id)
        with sess.lock:
            try:
                user_select(sess.state, body.index)
            except WrongStateError as exc:
                _error(409, str(exc))
            except IndexError as exc:
                _error(422, str(exc))
            stash_record_images(session_id, sess)
            persist(session_id, sess)
            return {"state": state_payload(session_id, sess)}

    @app.get("/sessions/{session_id}/images/{key}")
    def get_image(session_id: str, key: str):
        sess = get_session(session_id)
        img: ImageBuffer | None
        if key == "current":
            img = sess.state.source
        else:
            img = sess.images.get(key)
        if img is None:
            _error(404, f"unknown image key {key}")
        return Response(content=encode_png_bytes(img, img.source_depth), media_type="image/png")

    @app.get("/sessions/{session_id}/program")
    def get_program(session_id: str):
        sess = get_session(session_id)
        return Response(
            content=serialize_program(sess.state.composed),
            media_type="application/json",
            headers={"Content-Disposition": 'attachment; filename="program.retouch.json"'},
        )

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
