"""Streaming evaluation service over line-delimited JSON.

One TCP connection evaluates one sentence.  The client asks for source
units one at a time and announces each emitted target token; the server
therefore measures lagging itself, from what the client actually saw
before each write, rather than trusting client-reported numbers.

Frames (one JSON object per line):

    {"act": "START", "id": 3}          optional; else ids auto-assign
    {"act": "READ"}                    -> {"token": "w"} | {"eos": true}
                                          (speech: {"block_ms": ..., "words": [...]})
    {"act": "WRITE", "token": "w"}     -> {"ok": true} (+ "done" on EOS)
    {"act": "SCORE"}                   -> {"bleu": ..., "al_words": ..., ...}

A malformed frame gets {"error": ...} and the connection closes; the
session is dropped from scoring.  Reads past the end keep answering with
the end marker.  Writing the end-of-sequence token finishes the session.
"""
from __future__ import annotations

import json
import math
import socket
import socketserver
import threading
from dataclasses import dataclass, field

from .metrics import average_lagging_ms, average_lagging_words, corpus_bleu
from .online import ActionTrace, ReadEvent, WriteEvent
from .vocab import EOS_TOKEN


@dataclass(frozen=True)
class ServerTestset:
    """What the server serves and scores against.

    t2t: sources are token-string sequences.  s2t: sources are TimedWord
    streams revealed in fixed audio blocks.
    """

    mode: str                       # "t2t" | "s2t"
    sources: list
    references: list[str]           # whitespace-tokenized for scoring
    detokenize: object              # token strings -> display string
    block_ms: float = 100.0

    def __post_init__(self) -> None:
        if self.mode not in ("t2t", "s2t"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.sources) != len(self.references):
            raise ValueError("sources/references length mismatch")
        if not self.sources:
            raise ValueError("empty testset")


@dataclass
class EvalSession:
    """Server-side record of one sentence evaluation."""

    session_id: int
    revealed: int = 0               # source units handed out
    events: list = field(default_factory=list)
    hyp_tokens: list[str] = field(default_factory=list)
    done: bool = False
    aborted: bool = False

    def trace(self) -> ActionTrace:
        return ActionTrace(events=tuple(self.events))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: EvalServer = self.server  # type: ignore[assignment]
        session: EvalSession | None = None
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8").strip()
                if not line:
                    continue
                try:
                    frame = json.loads(line)
                    if not isinstance(frame, dict):
                        raise ValueError("frame must be a JSON object")
                    act = frame["act"]
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    if session is not None:
                        session.aborted = True
                    self._send({"error": f"malformed frame: {e}"})
                    return
                if act == "SCORE":
                    self._send(server.scores())
                    return
                if act == "START":
                    if session is not None:
                        self._send({"error": "session already started"})
                        return
                    session = server.open_session(frame.get("id"))
                    if session is None:
                        self._send({"error": "no such sentence"})
                        return
                    self._send({"ok": True, "id": session.session_id})
                    continue
                if session is None:
                    session = server.open_session(None)
                    if session is None:
                        self._send({"error": "testset exhausted"})
                        return
                if act == "READ":
                    self._send(server.reveal(session))
                elif act == "WRITE":
                    tok = frame.get("token")
                    if not isinstance(tok, str):
                        session.aborted = True
                        self._send({"error": "WRITE needs a string token"})
                        return
                    done = server.record_write(session, tok)
                    self._send({"ok": True, "done": True} if done else {"ok": True})
                    if done:
                        return
                else:
                    session.aborted = True
                    self._send({"error": f"unknown act {act!r}"})
                    return
        finally:
            if session is not None and not session.done:
                session.aborted = True

    def _send(self, obj: dict) -> None:
        self.wfile.write((json.dumps(obj) + "\n").encode("utf-8"))
        self.wfile.flush()


class EvalServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host: str, port: int, testset: ServerTestset):
        super().__init__((host, port), _Handler)
        self.testset = testset
        self._lock = threading.Lock()
        self._next_id = 0
        self.sessions: dict[int, EvalSession] = {}
        self._thread: threading.Thread | None = None

    # -- session bookkeeping (thread safe) --------------------------------

    def open_session(self, explicit_id) -> EvalSession | None:
        with self._lock:
            if explicit_id is None:
                sid = self._next_id
                self._next_id += 1
            else:
                try:
                    sid = int(explicit_id)
                except (TypeError, ValueError):
                    return None
            if not 0 <= sid < len(self.testset.sources):
                return None
            session = EvalSession(session_id=sid)
            self.sessions[sid] = session
            return session

    def reveal(self, session: EvalSession) -> dict:
        src = self.testset.sources[session.session_id]
        if self.testset.mode == "t2t":
            if session.revealed >= len(src):
                return {"eos": True}
            tok = src[session.revealed]
            session.events.append(ReadEvent(index=session.revealed))
            session.revealed += 1
            return {"token": tok}
        total_ms = src[-1].end_ms if src else 0.0
        n_blocks = max(1, math.ceil(total_ms / self.testset.block_ms))
        if session.revealed >= n_blocks:
            return {"eos": True}
        t0 = session.revealed * self.testset.block_ms
        t1 = min((session.revealed + 1) * self.testset.block_ms, total_ms)
        words = [
            {"word": w.word, "start_ms": w.start_ms, "duration_ms": w.duration_ms}
            for w in src
            if t0 < w.end_ms <= t1
        ]
        session.events.append(
            ReadEvent(index=session.revealed, timestamp_ms=t1))
        session.revealed += 1
        return {"block_ms": t1, "words": words}

    def record_write(self, session: EvalSession, token: str) -> bool:
        g_ms = None
        if self.testset.mode == "s2t":
            src = self.testset.sources[session.session_id]
            total_ms = src[-1].end_ms if src else 0.0
            g_ms = min(session.revealed * self.testset.block_ms, total_ms)
        session.events.append(
            WriteEvent(token=token, g_tokens=session.revealed, g_ms=g_ms))
        if token == EOS_TOKEN:
            session.done = True
            return True
        session.hyp_tokens.append(token)
        return False

    def scores(self) -> dict:
        """BLEU and mean lagging over completed sessions."""
        with self._lock:
            done = sorted(
                (s for s in self.sessions.values() if s.done and not s.aborted),
                key=lambda s: s.session_id,
            )
        if not done:
            return {"error": "no completed sessions"}
        hyps = []
        refs = []
        al_w = []
        al_ms = []
        for s in done:
            hyps.append(self.testset.detokenize(s.hyp_tokens).split())
            refs.append(self.testset.references[s.session_id].split())
            if not s.hyp_tokens:
                continue
            src = self.testset.sources[s.session_id]
            if self.testset.mode == "t2t":
                al_w.append(average_lagging_words(
                    s.trace(), len(src), len(s.hyp_tokens)))
            else:
                total_ms = src[-1].end_ms if src else 0.0
                n_blocks = max(1, math.ceil(total_ms / self.testset.block_ms))
                al_w.append(average_lagging_words(
                    s.trace(), n_blocks, len(s.hyp_tokens)))
                if total_ms > 0:
                    al_ms.append(average_lagging_ms(
                        s.trace(), total_ms, len(s.hyp_tokens)))
        bleu = corpus_bleu(hyps, refs)
        out = {
            "n_sessions": len(done),
            "bleu": bleu.score,
            "al_words": math.fsum(al_w) / len(al_w) if al_w else 0.0,
        }
        if self.testset.mode == "s2t":
            out["al_ms"] = math.fsum(al_ms) / len(al_ms) if al_ms else 0.0
        return out

    # -- lifecycle ---------------------------------------------------------

    def start_background(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.server_close()


def serve_eval(host: str, port: int, testset: ServerTestset) -> EvalServer:
    """Bind an evaluation server; caller starts it (foreground or background)."""
    return EvalServer(host, port, testset)


# ---------------------------------------------------------------------------
# reference wait-k client

class _Conn:
    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port))
        self.file = self.sock.makefile("rwb")

    def call(self, frame: dict) -> dict:
        self.file.write((json.dumps(frame) + "\n").encode())
        self.file.flush()
        line = self.file.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        reply = json.loads(line.decode())
        if "error" in reply:
            raise RuntimeError(f"server error: {reply['error']}")
        return reply

    def close(self) -> None:
        try:
            self.file.close()
        finally:
            self.sock.close()


def client_waitk_session(host: str, port: int, session_id: int, models,
                         policy, vocab) -> list[str]:
    """Translate one served sentence with a wait-k policy.

    Mirrors local greedy decoding, but the source arrives over the wire:
    the client reads until it holds min(k + t - 1, |x|) tokens (learning
    |x| only when the end marker comes back), then writes token t.
    Returns the emitted token strings (end marker excluded).
    """
    from . import model as M
    from .online import ModelSession, ensemble_logprobs
    from .vocab import EOS

    if isinstance(models, M.Parameters):
        models = [models]
    sessions = [ModelSession(p) for p in models]
    conn = _Conn(host, port)
    out: list[str] = []
    try:
        conn.call({"act": "START", "id": session_id})
        n_read = 0
        src_done = False
        src_len = None
        t = 1
        while True:
            while not src_done and (policy.k_eval == math.inf
                                    or n_read < policy.k_eval + t - 1):
                reply = conn.call({"act": "READ"})
                if reply.get("eos"):
                    src_done = True
                    src_len = n_read
                    for s in sessions:
                        s.extend_source([EOS])
                else:
                    tok_id = vocab.id(reply["token"])
                    for s in sessions:
                        s.extend_source([tok_id])
                    n_read += 1
            visible = (M.visible_source_len(n_read, src_len)
                       if src_done else n_read)
            logp = ensemble_logprobs([s.next_logprobs(visible) for s in sessions])
            tok_id = int(logp.argmax())
            for s in sessions:
                s.commit(tok_id)
            tok_str = vocab.token(tok_id)
            reply = conn.call({"act": "WRITE", "token": tok_str})
            if reply.get("done"):
                return out
            out.append(tok_str)
            if (src_done
                    and len(out) >= int(policy.alpha_len * src_len + policy.beta_len)):
                conn.call({"act": "WRITE", "token": EOS_TOKEN})
                return out
            t += 1
    finally:
        conn.close()


def client_score(host: str, port: int) -> dict:
    conn = _Conn(host, port)
    try:
        return conn.call({"act": "SCORE"})
    finally:
        conn.close()
