"""Speech-to-text cascade: simulated streaming ASR feeding an online MT.

The controller alternates between reading fixed-size blocks of audio and
writing target tokens.  Reading feeds a simulated incremental recognizer;
when the recognizer endpoints (or the audio runs out) the utterance's
transcription is normalized, subword-encoded and appended to the MT
source, and control passes to writing.  Writing emits greedy tokens while
the written count stays under alpha * |transcribed tokens| + beta, then
control returns to reading.  The run ends when the MT writes EOS, or at
audio depletion once the budget is spent.

Endpointing follows four configurable rule shapes over the recognizer
snapshot: (a) long silence, decoded or not; (b) something decoded, a
silence floor, and the best hypothesis in a final state cheaper than a
relative-cost ceiling; (c) like (b) without the final-state requirement;
(d) utterance duration cap.  Rules of kind (b) may appear several times
with different (t, c) pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .normalize import asr_normalize
from .online import (ActionTrace, ReadEvent, WriteEvent, ensemble_logprobs,
                     _as_sessions)
from .vocab import BOS, EOS

INFINITE_COST = math.inf


@dataclass(frozen=True)
class TimedWord:
    """One word with its span in the audio, in milliseconds."""

    word: str
    start_ms: float
    duration_ms: float

    def __post_init__(self) -> None:
        if not self.word or any(c.isspace() for c in self.word):
            raise ValueError(f"bad word {self.word!r}")
        if self.start_ms < 0 or self.duration_ms <= 0:
            raise ValueError("need start_ms >= 0 and duration_ms > 0")

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.duration_ms


def validate_stream(words: Sequence[TimedWord]) -> None:
    for a, b in zip(words, words[1:]):
        if b.start_ms < a.end_ms:
            raise ValueError(
                f"overlapping words {a.word!r} and {b.word!r} at {b.start_ms}ms")


@dataclass(frozen=True)
class EndpointRule:
    kind: str                        # "a" | "b" | "c" | "d"
    t_seconds: float                 # silence floor (a-c) or utterance cap (d)
    cost_threshold: float | None = None  # only kind "b"

    def __post_init__(self) -> None:
        if self.kind not in ("a", "b", "c", "d"):
            raise ValueError(f"unknown endpoint rule kind {self.kind!r}")
        if self.t_seconds <= 0:
            raise ValueError("t_seconds must be positive")
        if self.kind == "b":
            if self.cost_threshold is None or self.cost_threshold <= 0:
                raise ValueError("kind b needs a positive cost_threshold")
        elif self.cost_threshold is not None:
            raise ValueError(f"kind {self.kind} takes no cost_threshold")


@dataclass(frozen=True)
class AsrSnapshot:
    """Decoder state summary the endpointer sees at one instant."""

    silence_s: float                 # trailing silence in the utterance
    decoded_anything: bool           # any word decoded this utterance
    final_state_reached: bool        # best hypothesis sits in a final state
    cost_relative: float             # its relative cost; infinite if no final state
    utterance_s: float               # time since the utterance started

    def __post_init__(self) -> None:
        if not self.final_state_reached and not math.isinf(self.cost_relative):
            raise ValueError("cost must be infinite when no final state is active")


def detect_endpoint(snapshot: AsrSnapshot, rules: Sequence[EndpointRule]):
    """First firing rule in kind order a, b, c, d (declaration order within
    a kind); returns (fired, rule_or_None)."""
    by_kind = {k: [r for r in rules if r.kind == k] for k in "abcd"}
    for r in by_kind["a"]:
        if snapshot.silence_s >= r.t_seconds:
            return True, r
    for r in by_kind["b"]:
        if (snapshot.decoded_anything and snapshot.silence_s >= r.t_seconds
                and snapshot.final_state_reached
                and snapshot.cost_relative < r.cost_threshold):
            return True, r
    for r in by_kind["c"]:
        if snapshot.decoded_anything and snapshot.silence_s >= r.t_seconds:
            return True, r
    for r in by_kind["d"]:
        if snapshot.utterance_s >= r.t_seconds:
            return True, r
    return False, None


def default_endpoint_rules() -> list[EndpointRule]:
    return [
        EndpointRule("a", 5.0),
        EndpointRule("b", 1.0, cost_threshold=8.0),
        EndpointRule("c", 2.0),
        EndpointRule("d", 20.0),
    ]


@dataclass(frozen=True)
class CascadeConfig:
    sz: int = 1                      # audio blocks consumed per READ turn
    alpha: float = 1.0               # write budget slope
    beta: float = 5.0                # write budget intercept
    endpoint_rules: tuple = field(default_factory=lambda: tuple(default_endpoint_rules()))
    block_ms: float = 100.0

    def __post_init__(self) -> None:
        if self.sz < 1:
            raise ValueError("sz must be >= 1")
        if self.alpha < 0 or self.beta < 1:
            raise ValueError("need alpha >= 0 and beta >= 1")
        if self.block_ms <= 0:
            raise ValueError("block_ms must be positive")
        object.__setattr__(self, "endpoint_rules", tuple(self.endpoint_rules))


@dataclass
class AsrStep:
    snapshot: AsrSnapshot
    endpoint_fired: bool
    rule: EndpointRule | None
    words: list[str]                 # transcription emitted by this endpoint


class AsrSimulator:
    """Replays a timed word stream as an incremental recognizer.

    A word is decoded once the audio covers its end.  Each word can carry
    a scripted (final_state, cost) pair; by default every decoded word
    leaves the decoder in a final state at relative cost 0.  Endpointing
    resets the utterance clock and withholds emitted words from later
    snapshots.
    """

    def __init__(self, stream: Sequence[TimedWord], rules: Sequence[EndpointRule],
                 cost_script: Sequence[tuple[bool, float]] | None = None,
                 total_ms: float | None = None):
        self.words = list(stream)
        validate_stream(self.words)
        if cost_script is not None and len(cost_script) != len(self.words):
            raise ValueError("cost_script must align with the word stream")
        self.script = list(cost_script) if cost_script is not None else None
        self.rules = list(rules)
        last_end = self.words[-1].end_ms if self.words else 0.0
        self.total_ms = max(total_ms if total_ms is not None else last_end, last_end)
        self.now_ms = 0.0
        self.next_word = 0           # first not-yet-decoded word
        self.emit_from = 0           # first decoded-but-unemitted word
        self.utterance_start_ms = 0.0

    def snapshot(self) -> AsrSnapshot:
        decoded = self.next_word > self.emit_from
        if decoded:
            last_end = self.words[self.next_word - 1].end_ms
            silence = (self.now_ms - max(last_end, self.utterance_start_ms)) / 1000.0
            if self.script is not None:
                final, cost = self.script[self.next_word - 1]
            else:
                final, cost = True, 0.0
        else:
            silence = (self.now_ms - self.utterance_start_ms) / 1000.0
            final, cost = False, INFINITE_COST
        return AsrSnapshot(
            silence_s=silence,
            decoded_anything=decoded,
            final_state_reached=final,
            cost_relative=cost if final else INFINITE_COST,
            utterance_s=(self.now_ms - self.utterance_start_ms) / 1000.0,
        )

    def advance(self, to_ms: float) -> AsrStep:
        """Consume audio up to ``to_ms`` and evaluate the endpointer once."""
        if to_ms < self.now_ms:
            raise ValueError("audio time cannot go backwards")
        self.now_ms = to_ms
        while (self.next_word < len(self.words)
               and self.words[self.next_word].end_ms <= to_ms):
            self.next_word += 1
        snap = self.snapshot()
        fired, rule = detect_endpoint(snap, self.rules)
        emitted: list[str] = []
        if fired:
            emitted = [w.word for w in self.words[self.emit_from : self.next_word]]
            self.emit_from = self.next_word
            self.utterance_start_ms = self.now_ms
        return AsrStep(snapshot=snap, endpoint_fired=fired, rule=rule, words=emitted)

    def flush(self) -> list[str]:
        """Emit whatever is decoded but unemitted (used at audio depletion)."""
        out = [w.word for w in self.words[self.emit_from : self.next_word]]
        self.emit_from = self.next_word
        return out


def simulate_asr(stream: Sequence[TimedWord], config: CascadeConfig,
                 cost_script=None, total_ms: float | None = None) -> AsrSimulator:
    return AsrSimulator(stream, config.endpoint_rules, cost_script, total_ms)


@dataclass
class CascadeMT:
    """Translation side of the cascade: models plus the text pipeline."""

    models: list                     # Parameters or session objects
    encode_source: Callable[[str], list[int]]  # normalized text -> ids
    number_lexicon: dict | None = None


@dataclass
class CascadeResult:
    tokens: list[int]
    trace: ActionTrace
    transcript_tokens: int
    truncated: bool


def cascade_decode(stream: Sequence[TimedWord], mt: CascadeMT,
                   config: CascadeConfig, cost_script=None,
                   total_ms: float | None = None,
                   reset_target_on_endpoint: bool = False,
                   hard_cap: int = 1000) -> CascadeResult:
    """Run the read/write controller over one audio stream.

    The trace has one READ per audio block (g_ms stamps the consumed
    audio) and one WRITE per emitted token.  The target-side prefix
    persists across endpoints unless ``reset_target_on_endpoint``; the
    source side always continues, with the end-of-source marker appended
    exactly once at audio depletion.  ``hard_cap`` bounds total writes in
    case EOS never comes (the result is then flagged truncated).
    """
    sim = simulate_asr(stream, config, cost_script, total_ms)
    n_blocks = max(1, math.ceil(sim.total_ms / config.block_ms))
    sessions = _as_sessions(mt.models)

    trace: list = []
    tokens: list[int] = []
    z_blocks = 0
    n_written = 0                    # tokens written against the budget
    x_asr_len = 0                    # transcribed subword tokens so far
    marker_fed = False
    truncated = False

    def consumed_ms() -> float:
        return min(z_blocks * config.block_ms, sim.total_ms)

    def feed_transcription(words: list[str]) -> None:
        nonlocal x_asr_len
        if not words:
            return
        text = asr_normalize(" ".join(words), mt.number_lexicon)
        ids = mt.encode_source(text) if text else []
        if ids:
            for s in sessions:
                s.extend_source(ids)
            x_asr_len += len(ids)

    action = "READ"
    while True:
        if action == "READ":
            fired = False
            done_reading = False
            while not done_reading:
                for _ in range(min(config.sz, n_blocks - z_blocks)):
                    trace.append(ReadEvent(index=z_blocks, timestamp_ms=None))
                    z_blocks += 1
                step = sim.advance(consumed_ms())
                if step.endpoint_fired:
                    feed_transcription(step.words)
                    fired = True
                    done_reading = True
                if z_blocks == n_blocks:
                    feed_transcription(sim.flush())
                    done_reading = True
            if z_blocks == n_blocks and not marker_fed:
                for s in sessions:
                    s.extend_source([EOS])
                marker_fed = True
            if fired and reset_target_on_endpoint:
                for s in sessions:
                    s.dec = None
                    s.prev = BOS
                    s._pending = None
            action = "WRITE"
        else:
            visible = sessions[0].n_encoded
            if visible == 0 or n_written >= config.alpha * x_asr_len + config.beta:
                if z_blocks >= n_blocks:
                    truncated = True
                    break
                action = "READ"
                continue
            logp = ensemble_logprobs([s.next_logprobs(visible) for s in sessions])
            tok = int(np.argmax(logp))
            for s in sessions:
                s.commit(tok)
            trace.append(WriteEvent(token=tok, g_tokens=z_blocks, g_ms=consumed_ms()))
            n_written += 1
            if tok == EOS:
                break
            tokens.append(tok)
            if n_written >= hard_cap:
                truncated = True
                break
    return CascadeResult(
        tokens=tokens,
        trace=ActionTrace(events=tuple(trace), truncated=truncated),
        transcript_tokens=x_asr_len,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# stream segmentation

@dataclass(frozen=True)
class Segment:
    words: tuple[TimedWord, ...]

    @property
    def start_ms(self) -> float:
        return self.words[0].start_ms

    @property
    def end_ms(self) -> float:
        return self.words[-1].end_ms

    @property
    def n_words(self) -> int:
        return len(self.words)


def segment_stream(words: Sequence[TimedWord], theta_long: float = 0.65,
                   theta_short: float = 0.15, max_words: int = 40) -> list[Segment]:
    """Split a stream at silences, with a stricter threshold on long runs.

    A split happens before word i when the gap since the previous word
    strictly exceeds the active threshold: theta_long seconds normally,
    theta_short once the open segment already holds more than max_words
    words.  Every word lands in exactly one segment, order preserved.
    """
    if theta_short > theta_long:
        raise ValueError("theta_short must not exceed theta_long")
    if min(theta_short, theta_long) <= 0 or max_words < 1:
        raise ValueError("thresholds must be positive and max_words >= 1")
    words = list(words)
    validate_stream(words)
    segments: list[Segment] = []
    current: list[TimedWord] = []
    for w in words:
        if current:
            gap_s = (w.start_ms - current[-1].end_ms) / 1000.0
            threshold = theta_short if len(current) > max_words else theta_long
            if gap_s > threshold:
                segments.append(Segment(words=tuple(current)))
                current = []
        current.append(w)
    if current:
        segments.append(Segment(words=tuple(current)))
    return segments


# ---------------------------------------------------------------------------
# timed-stream files

DOC_SEPARATOR = "##"


def load_timed_streams(path) -> list[list[TimedWord]]:
    """TSV of word, start_ms, duration_ms; lines of "##" separate documents."""
    docs: list[list[TimedWord]] = [[]]
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line == DOC_SEPARATOR:
                docs.append([])
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}:{ln}: expected word<TAB>start_ms<TAB>duration_ms")
            try:
                word = TimedWord(fields[0], float(fields[1]), float(fields[2]))
            except ValueError as e:
                raise ValueError(f"{path}:{ln}: {e}") from e
            docs[-1].append(word)
    docs = [d for d in docs if d]
    for d in docs:
        validate_stream(d)
    return docs


def save_timed_streams(docs: Sequence[Sequence[TimedWord]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, doc in enumerate(docs):
            if i:
                f.write(DOC_SEPARATOR + "\n")
            for w in doc:
                f.write(f"{w.word}\t{w.start_ms!r}\t{w.duration_ms!r}\n")


def save_segments(segments: Sequence[Segment], path) -> None:
    """Segment TSV: word, start_ms, duration_ms, segment_id."""
    with open(path, "w", encoding="utf-8") as f:
        for seg_id, seg in enumerate(segments):
            for w in seg.words:
                f.write(f"{w.word}\t{w.start_ms!r}\t{w.duration_ms!r}\t{seg_id}\n")
