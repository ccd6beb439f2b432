"""Annotation session service: suggestions, edit logging, statistics.

A session tracks one image's annotation from the first keystroke to
submission.  Clients scan their input box on a timer and post snapshots;
the server deduplicates consecutive identical texts, so the stored
sequence is exactly the session's edit history.  Statistics (rounds,
accumulated edit distance, interaction mode) are pure functions of that
history and can always be recomputed from the append-only event log.

``SessionService`` is framework-free and thread-safe; ``create_app`` wraps
it in a FastAPI application exposing the HTTP+JSON API.
"""

from __future__ import annotations

import json
import struct
import threading
import time
import uuid
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from pydantic import BaseModel

from .completion import Candidate, CompletionRequest
from .textcore import accumulated_levd, levenshtein

MODE_MANUAL = "fully_manual"
MODE_INTERACTIVE = "interactive"


class SessionClosed(Exception):
    pass


class UnknownSession(KeyError):
    pass


class UnknownImage(KeyError):
    pass


@dataclass(frozen=True)
class Snapshot:
    text: str
    cursor: int
    ts: float


@dataclass(frozen=True)
class SessionStats:
    rounds: int  # T: number of stored snapshots
    num_selections: int
    accumulated_edits: int  # T - 1
    accumulated_levd: int
    manual_levd: int  # LevD from empty text to the final annotation
    mode: str

    def to_doc(self) -> dict:
        return {
            "T": self.rounds,
            "num_selections": self.num_selections,
            "accumulated_edits": self.accumulated_edits,
            "accumulated_levd": self.accumulated_levd,
            "manual_levd": self.manual_levd,
            "mode": self.mode,
        }


@dataclass
class Session:
    session_id: str
    image_id: str
    snapshots: list[Snapshot] = field(default_factory=list)
    selections: list[tuple[int, int]] = field(default_factory=list)  # (round, rank)
    suggest_rounds: int = 0
    final_annotation: Optional[str] = None
    closed: bool = False
    created_ts: float = 0.0

    @property
    def mode(self) -> str:
        return MODE_INTERACTIVE if self.selections else MODE_MANUAL

    @property
    def last_ts(self) -> Optional[float]:
        return self.snapshots[-1].ts if self.snapshots else None

    def stats(self) -> SessionStats:
        if not self.closed or self.final_annotation is None:
            raise ValueError("stats are defined for closed sessions only")
        texts = [s.text for s in self.snapshots]
        return SessionStats(
            rounds=len(texts),
            num_selections=len(self.selections),
            accumulated_edits=len(texts) - 1,
            accumulated_levd=accumulated_levd(texts),
            manual_levd=levenshtein("", self.final_annotation),
            mode=self.mode,
        )

    def to_doc(self) -> dict:
        doc = {
            "session_id": self.session_id,
            "image_id": self.image_id,
            "snapshots": [{"text": s.text, "cursor": s.cursor, "ts": s.ts} for s in self.snapshots],
            "selections": [{"round": r, "rank": k} for r, k in self.selections],
            "suggest_rounds": self.suggest_rounds,
            "final_annotation": self.final_annotation,
            "closed": self.closed,
            "mode": self.mode,
        }
        if self.closed:
            doc["stats"] = self.stats().to_doc()
        return doc


class SessionService:
    """Core session logic: many concurrent sessions over one shared model.

    Model parameters are immutable and shared read-only by all suggest
    calls; per-session operations are serialized by a per-session lock, and
    the event log is appended under its own mutex.
    """

    def __init__(
        self,
        model,
        features,
        k: int = 5,
        log_path: Optional[str | Path] = None,
        images_dir: Optional[str | Path] = None,
        clock=time.time,
    ):
        self.model = model
        self.features = features
        self.k = k
        self.images_dir = Path(images_dir) if images_dir else None
        self._clock = clock
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._log_file = open(log_path, "a", encoding="utf-8") if log_path else None

    # -- event log ---------------------------------------------------------

    def _log(self, event: str, **payload) -> None:
        if self._log_file is None:
            return
        doc = {"event": event, **payload}
        with self._log_lock:
            self._log_file.write(json.dumps(doc, ensure_ascii=False) + "\n")
            self._log_file.flush()

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    # -- session plumbing ----------------------------------------------------

    def _get(self, session_id: str) -> tuple[Session, threading.Lock]:
        with self._registry_lock:
            if session_id not in self._sessions:
                raise UnknownSession(session_id)
            return self._sessions[session_id], self._locks[session_id]

    def create_session(self, image_id: str) -> Session:
        if image_id not in self.features:
            raise UnknownImage(image_id)
        session = Session(
            session_id=uuid.uuid4().hex,
            image_id=image_id,
            created_ts=self._clock(),
        )
        with self._registry_lock:
            self._sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()
        self._log("session_created", session_id=session.session_id, image_id=image_id,
                  ts=session.created_ts)
        return session

    def _require_open(self, session: Session) -> None:
        if session.closed:
            raise SessionClosed(session.session_id)

    def _check_ts(self, session: Session, ts: float) -> None:
        last = session.last_ts
        if last is not None and ts < last:
            raise ValueError(f"out-of-order timestamp: {ts} < {last}")

    def _store_snapshot(self, session: Session, text: str, cursor: int, ts: float) -> bool:
        """Append unless the text matches the previous snapshot exactly."""
        self._check_ts(session, ts)
        if session.snapshots and session.snapshots[-1].text == text:
            return False
        session.snapshots.append(Snapshot(text=text, cursor=cursor, ts=ts))
        self._log("snapshot", session_id=session.session_id, text=text, cursor=cursor, ts=ts)
        return True

    # -- operations ----------------------------------------------------------

    def suggest(self, session_id: str, text: str, cursor: int) -> list[Candidate]:
        session, lock = self._get(session_id)
        with lock:
            self._require_open(session)
            if len(text) > self.model.config.N:
                raise ValueError(
                    f"text longer than maximum length {self.model.config.N}"
                )
            feature = self.features[session.image_id]
            request = CompletionRequest(feature, text, cursor, k=self.k)
        # decoding happens outside the session lock; parameters are immutable
        candidates = self.model.complete(request)
        with lock:
            self._require_open(session)
            session.suggest_rounds += 1
            self._log(
                "suggested",
                session_id=session_id,
                round=session.suggest_rounds,
                text=text,
                cursor=cursor,
                candidates=[{"text": c.text, "score": c.score, "rank": c.rank} for c in candidates],
            )
        return candidates

    def record_snapshot(self, session_id: str, text: str, cursor: int, ts: float) -> bool:
        session, lock = self._get(session_id)
        with lock:
            self._require_open(session)
            return self._store_snapshot(session, text, cursor, ts)

    def record_selection(self, session_id: str, rank: int, text: str, ts: float) -> None:
        session, lock = self._get(session_id)
        with lock:
            self._require_open(session)
            if not 1 <= rank <= self.k:
                raise ValueError(f"rank out of range: {rank} (k={self.k})")
            self._check_ts(session, ts)
            session.selections.append((session.suggest_rounds, rank))
            self._log(
                "selection",
                session_id=session_id,
                round=session.suggest_rounds,
                rank=rank,
                text=text,
                ts=ts,
            )
            self._store_snapshot(session, text, len(text), ts)

    def submit(self, session_id: str, final_text: str, ts: float) -> SessionStats:
        session, lock = self._get(session_id)
        with lock:
            self._require_open(session)
            self._store_snapshot(session, final_text, len(final_text), ts)
            session.final_annotation = final_text
            session.closed = True
            stats = session.stats()
            self._log(
                "submitted",
                session_id=session_id,
                text=final_text,
                ts=ts,
                stats=stats.to_doc(),
            )
            return stats

    def get_session(self, session_id: str) -> Session:
        return self._get(session_id)[0]

    def export_sessions(self, mode: Optional[str] = None, closed_only: bool = True) -> Iterator[str]:
        """Stable JSON-lines export, one session per line."""
        with self._registry_lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            if closed_only and not session.closed:
                continue
            if mode is not None and session.mode != mode:
                continue
            yield json.dumps(session.to_doc(), ensure_ascii=False)

    def selection_histogram(self) -> dict[int, int]:
        """Selections per rank across all sessions."""
        hist = {r: 0 for r in range(1, self.k + 1)}
        with self._registry_lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            for _round, rank in session.selections:
                hist[rank] = hist.get(rank, 0) + 1
        return hist

    def image_bytes(self, image_id: str) -> bytes:
        """Serve the image for the UI: a file when a directory is configured,
        otherwise a deterministic placeholder PNG."""
        if image_id not in self.features:
            raise UnknownImage(image_id)
        if self.images_dir is not None:
            for ext in ("png", "jpg", "jpeg"):
                path = self.images_dir / f"{image_id}.{ext}"
                if path.exists():
                    return path.read_bytes()
        return placeholder_png(image_id)


def replay_log(path: str | Path) -> dict[str, Session]:
    """Rebuild all sessions from an event log.

    The log is the source of truth: statistics recomputed from the replayed
    sessions must equal the values returned at submit time.
    """
    sessions: dict[str, Session] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            event = doc["event"]
            if event == "session_created":
                sessions[doc["session_id"]] = Session(
                    session_id=doc["session_id"],
                    image_id=doc["image_id"],
                    created_ts=doc.get("ts", 0.0),
                )
                continue
            session = sessions[doc["session_id"]]
            if event == "snapshot":
                session.snapshots.append(
                    Snapshot(text=doc["text"], cursor=doc["cursor"], ts=doc["ts"])
                )
            elif event == "selection":
                session.selections.append((doc["round"], doc["rank"]))
            elif event == "suggested":
                session.suggest_rounds = doc["round"]
            elif event == "submitted":
                session.final_annotation = doc["text"]
                session.closed = True
    return sessions


def placeholder_png(image_id: str, width: int = 320, height: int = 240) -> bytes:
    """A small solid-color PNG derived from the image id (stdlib only)."""
    digest = zlib.crc32(image_id.encode("utf-8"))
    r, g, b = 64 + digest % 160, 64 + (digest >> 8) % 160, 64 + (digest >> 16) % 160
    row = b"\x00" + bytes([r, g, b]) * width
    raw = row * height

    def chunk(tag: bytes, payload: bytes) -> bytes:
        data = tag + payload
        return struct.pack(">I", len(payload)) + data + struct.pack(">I", zlib.crc32(data))

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"".join(
        [
            b"\x89PNG\r\n\x1a\n",
            chunk(b"IHDR", ihdr),
            chunk(b"IDAT", zlib.compress(raw, 6)),
            chunk(b"IEND", b""),
        ]
    )


class CreateSessionBody(BaseModel):
    image_id: str


class SuggestBody(BaseModel):
    text: str
    cursor: int


class SnapshotBody(BaseModel):
    text: str
    cursor: int
    ts: float


class SelectionBody(BaseModel):
    rank: int
    text: str
    ts: float


class SubmitBody(BaseModel):
    text: str
    ts: float


def create_app(service: SessionService):
    """FastAPI adapter over a :class:`SessionService`."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import PlainTextResponse, Response

    app = FastAPI(title="capfill annotation service")
    app.state.service = service

    def translate(exc: Exception) -> HTTPException:
        if isinstance(exc, (UnknownSession, UnknownImage)):
            return HTTPException(status_code=404, detail=str(exc))
        if isinstance(exc, SessionClosed):
            return HTTPException(status_code=409, detail=f"session closed: {exc}")
        return HTTPException(status_code=400, detail=str(exc))

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        try:
            session = service.create_session(body.image_id)
        except Exception as exc:
            raise translate(exc) from None
        return {"session_id": session.session_id, "image_id": session.image_id, "k": service.k}

    @app.post("/sessions/{session_id}/suggest")
    def suggest(session_id: str, body: SuggestBody):
        try:
            candidates = service.suggest(session_id, body.text, body.cursor)
        except Exception as exc:
            raise translate(exc) from None
        return {
            "candidates": [
                {"text": c.text, "score": c.score, "rank": c.rank} for c in candidates
            ]
        }

    @app.post("/sessions/{session_id}/snapshot")
    def snapshot(session_id: str, body: SnapshotBody):
        try:
            stored = service.record_snapshot(session_id, body.text, body.cursor, body.ts)
        except Exception as exc:
            raise translate(exc) from None
        return {"stored": stored}

    @app.post("/sessions/{session_id}/selection")
    def selection(session_id: str, body: SelectionBody):
        try:
            service.record_selection(session_id, body.rank, body.text, body.ts)
        except Exception as exc:
            raise translate(exc) from None
        return {"ok": True}

    @app.post("/sessions/{session_id}/submit")
    def submit(session_id: str, body: SubmitBody):
        try:
            stats = service.submit(session_id, body.text, body.ts)
        except Exception as exc:
            raise translate(exc) from None
        return stats.to_doc()

    @app.get("/images/{image_id}")
    def image(image_id: str):
        try:
            payload = service.image_bytes(image_id)
        except Exception as exc:
            raise translate(exc) from None
        return Response(content=payload, media_type="image/png")

    @app.get("/export", response_class=PlainTextResponse)
    def export(mode: Optional[str] = None):
        lines = list(service.export_sessions(mode=mode))
        return ("\n".join(lines) + "\n") if lines else ""

    return app
