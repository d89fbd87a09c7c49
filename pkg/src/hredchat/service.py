"""HTTP inference service with per-session dialogue state.

Endpoints (JSON):
    POST   /sessions             create a session, optional default settings
    POST   /sessions/{id}/turns  one chat turn (utterance in, response out)
    DELETE /sessions/{id}        drop a session
    GET    /healthz              liveness
    GET    /model                variant, dims, vocabulary hash

Sessions live in memory and are evicted lazily after an idle timeout.
Model parameters are shared read-only across sessions; each session is
mutated under its own lock, so concurrent requests to one session
serialize while different sessions proceed in parallel.  Decoding with a
fixed seed is deterministic per turn index, so two sessions given the same
history and settings produce identical responses.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field, replace

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .corpus import Vocabulary, detokenize, tokenize
from .evaldecode import DEFAULT_MAX_LEN, beam_search, sample
from .models import DialogueModel, Utt, advance_context, encode_utterance
from .tensor import Rng, Tensor

DEFAULT_SESSION_TTL_S = 30 * 60


@dataclass(frozen=True)
class DecodeSettings:
    mode: str = "map"            # "map" (beam search) or "sample"
    beam_width: int = 5
    temperature: float = 1.0
    seed: int = 0
    max_len: int = DEFAULT_MAX_LEN

    def validate(self) -> None:
        if self.mode not in ("map", "sample"):
            raise ValueError(f"mode must be 'map' or 'sample', got {self.mode!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class Session:
    session_id: str
    settings: DecodeSettings
    history: list[Utt] = field(default_factory=list)
    context_state: Tensor | None = None  # hierarchical variants only
    turns: int = 0
    last_used: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)


_SETTING_FIELDS = ("mode", "beam_width", "temperature", "seed", "max_len")


class SettingsPayload(BaseModel):
    mode: str | None = None
    beam_width: int | None = None
    temperature: float | None = None
    seed: int | None = None
    max_len: int | None = None

    def merged_into(self, base: DecodeSettings) -> DecodeSettings:
        overrides = {
            k: v
            for k, v in self.model_dump(include=set(_SETTING_FIELDS)).items()
            if v is not None
        }
        return replace(base, **overrides)


class TurnPayload(SettingsPayload):
    text: str = Field(default="")


def create_app(
    model: DialogueModel,
    vocab: Vocabulary,
    gazetteer: frozenset[str] = frozenset(),
    session_ttl_s: float = DEFAULT_SESSION_TTL_S,
    default_settings: DecodeSettings = DecodeSettings(),
    clock=time.monotonic,
) -> FastAPI:
    """Build the service around one loaded model.

    ``clock`` is injectable so idle eviction is testable without sleeping.
    """
    default_settings.validate()
    app = FastAPI(title="hredchat", version="0.1.0")
    # the browser client is served from its own origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def evict_idle(now: float) -> None:
        with registry_lock:
            dead = [sid for sid, s in sessions.items() if now - s.last_used > session_ttl_s]
            for sid in dead:
                del sessions[sid]

    def get_session(sid: str) -> Session:
        now = clock()
        evict_idle(now)
        with registry_lock:
            session = sessions.get(sid)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        return session

    def advance(session: Session, utt: Utt) -> None:
        session.history.append(utt)
        if model.hierarchical:
            state = session.context_state
            if state is None:
                state = model.zero_context()
            session.context_state = advance_context(
                model, state, encode_utterance(model, utt)
            )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/model")
    def model_info():
        return {
            "variant": model.variant,
            "dims": {
                "d_h": model.dims.d_h,
                "d_ctx": model.dims.d_ctx,
                "d_e": model.dims.d_e,
            },
            "vocab_size": model.vocab_size,
            "vocab_hash": vocab.content_hash(),
        }

    @app.post("/sessions", status_code=201)
    def create_session(payload: SettingsPayload | None = None):
        settings = (payload or SettingsPayload()).merged_into(default_settings)
        try:
            settings.validate()
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = Session(sid, settings, last_used=clock())
        return {"session_id": sid, "settings": settings.__dict__}

    @app.post("/sessions/{sid}/turns")
    def chat_turn(sid: str, payload: TurnPayload):
        session = get_session(sid)
        tokens = tokenize(payload.text, gazetteer)
        if not tokens:
            raise HTTPException(status_code=400, detail="empty utterance")
        settings = payload.merged_into(session.settings)
        try:
            settings.validate()
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        user_utt = vocab.encode(tokens) + [vocab.eou_id]
        with session.lock:
            advance(session, user_utt)
            context = list(session.history)
            if settings.mode == "map":
                hyp = beam_search(model, context, settings.beam_width, settings.max_len)
            else:
                turn_rng = Rng(settings.seed).child(session.turns)
                hyp = sample(model, context, settings.temperature, turn_rng, settings.max_len)
            response = list(hyp.tokens)
            advance(session, response)
            session.turns += 1
            turn_index = len(session.history) - 1
            session.last_used = clock()
        return {
            "text": detokenize(vocab.decode(response)),
            "token_ids": response,
            "log_prob": hyp.log_prob,
            "turn_index": turn_index,
        }

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        with registry_lock:
            if sid not in sessions:
                raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
            del sessions[sid]

    app.state.sessions = sessions  # test hook
    return app


def replay_context_state(model: DialogueModel, history: list[Utt]) -> np.ndarray:
    """Context state from replaying a history; the invariant every session
    maintains incrementally."""
    state = model.zero_context()
    for utt in history:
        state = advance_context(model, state, encode_utterance(model, utt))
    return state.data
