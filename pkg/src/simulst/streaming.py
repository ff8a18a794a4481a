"""Read/write policies and the session that drives encoder, adapter and decoder
increments as speech segments arrive.

Timing follows the computation-aware convention: an event's wall time is the
audio duration received so far plus the computation time spent since the
session started. The clock only measures computation; in simulated mode it
advances by counted multiply-accumulates times a per-operation rate.
"""

from __future__ import annotations

import contextlib
import io
import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .decoder import SPEECH, Generation
from .encoder import SpeechEmbeddings, WaveformSegment, pad_segment
from .errors import InvalidConfig, InvalidInput, InvalidLog, InvalidSegment
from .model import SpeechTranslator
from .tensor_core import count_macs

FORMAT_VERSION = 1
OP_KINDS = ("encode", "adapt", "decode")

WAIT_K = "wait_k_stride_n"
HOLD_N = "hold_n"


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = WAIT_K
    k: int = 1
    n: int = 3
    segment_ms: float = 1000.0
    max_tokens_per_write: int = 64

    def __post_init__(self):
        if self.kind not in (WAIT_K, HOLD_N):
            raise InvalidConfig(f"unknown policy kind {self.kind!r}")
        if self.kind == WAIT_K and self.k < 1:
            raise InvalidConfig("k must be >= 1")
        if self.n < 1:
            raise InvalidConfig("n must be >= 1")
        if self.segment_ms <= 0:
            raise InvalidConfig("segment_ms must be positive")
        if self.max_tokens_per_write < 1:
            raise InvalidConfig("max_tokens_per_write must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = {k: v for k, v in d.items() if k != "format_version"}
        return cls(**d)


# --------------------------------------------------------------------------
# clock
# --------------------------------------------------------------------------

class Clock:
    """Computation clock.

    ``simulated``: time advances only through :meth:`charge`, by
    ``work_units * rates[op_kind]`` milliseconds. ``real``: charges are
    ignored and elapsed time is read from ``time.perf_counter``.
    """

    def __init__(self, mode: str = "simulated", rates: dict | None = None):
        if mode not in ("simulated", "real"):
            raise InvalidConfig(f"unknown clock mode {mode!r}")
        self.mode = mode
        self.rates = dict(rates or {})
        self._elapsed = 0.0
        self._origin = time.perf_counter()

    @classmethod
    def simulated(cls, rates: dict | None = None) -> "Clock":
        return cls("simulated", rates)

    @classmethod
    def uniform(cls, ms_per_mmac: float) -> "Clock":
        """Simulated clock charging the same rate (ms per million MACs) to every op."""
        return cls("simulated", {k: ms_per_mmac / 1e6 for k in OP_KINDS})

    @classmethod
    def real(cls) -> "Clock":
        return cls("real")

    def reset(self) -> None:
        self._elapsed = 0.0
        self._origin = time.perf_counter()

    def elapsed_ms(self) -> float:
        if self.mode == "real":
            return (time.perf_counter() - self._origin) * 1000.0
        return self._elapsed

    def charge(self, op_kind: str, work_units: float) -> None:
        if self.mode == "real":
            return
        try:
            rate = self.rates[op_kind]
        except KeyError:
            raise InvalidConfig(f"no cost entry for operation {op_kind!r}") from None
        self._elapsed += work_units * rate


def clock_charge(clock: Clock, op_kind: str, work_units: float) -> None:
    clock.charge(op_kind, work_units)


# --------------------------------------------------------------------------
# event log
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReadEvent:
    segment_index: int
    audio_ms: float
    wall_ms: float
    padded: int = 0

    def to_dict(self) -> dict:
        d = {"format_version": FORMAT_VERSION, "type": "READ", "t_wall_ms": self.wall_ms,
             "audio_ms": self.audio_ms, "segment_index": self.segment_index}
        if self.padded:
            d["padded"] = self.padded
        return d


@dataclass(frozen=True)
class WriteEvent:
    tokens: tuple
    words: int
    wall_ms: float
    audio_ms: float

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "type": "WRITE", "t_wall_ms": self.wall_ms,
                "audio_ms": self.audio_ms, "tokens": list(self.tokens), "words": self.words}


class SessionEventLog:
    """Ordered READ/WRITE events; rejects events that break the log invariants."""

    def __init__(self, events: Iterable = ()):
        self.events: list = []
        for ev in events:
            self.append(ev)

    def append(self, ev) -> None:
        if not self.events and not isinstance(ev, ReadEvent):
            raise InvalidLog("first event must be a READ")
        if self.events and ev.wall_ms < self.events[-1].wall_ms:
            raise InvalidLog("wall_ms must be nondecreasing")
        if isinstance(ev, ReadEvent):
            reads = self.reads
            if reads and ev.audio_ms <= reads[-1].audio_ms:
                raise InvalidLog("audio_ms must strictly increase across READs")
        elif not isinstance(ev, WriteEvent):
            raise InvalidLog(f"unknown event {ev!r}")
        self.events.append(ev)

    @property
    def reads(self) -> list:
        return [e for e in self.events if isinstance(e, ReadEvent)]

    @property
    def writes(self) -> list:
        return [e for e in self.events if isinstance(e, WriteEvent)]

    @property
    def source_ms(self) -> float:
        reads = self.reads
        return reads[-1].audio_ms if reads else 0.0

    def pattern(self) -> list[str]:
        return ["R" if isinstance(e, ReadEvent) else "W" for e in self.events]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def dumps(self) -> str:
        buf = io.StringIO()
        for ev in self.events:
            buf.write(json.dumps(ev.to_dict(), sort_keys=True))
            buf.write("\n")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "SessionEventLog":
        log = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if d.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
                    raise InvalidLog(f"line {lineno}: unsupported format_version")
                if d["type"] == "READ":
                    ev = ReadEvent(int(d["segment_index"]), float(d["audio_ms"]),
                                   float(d["t_wall_ms"]), int(d.get("padded", 0)))
                elif d["type"] == "WRITE":
                    ev = WriteEvent(tuple(d["tokens"]), int(d["words"]),
                                    float(d["t_wall_ms"]), float(d["audio_ms"]))
                else:
                    raise InvalidLog(f"line {lineno}: unknown event type {d['type']!r}")
            except (KeyError, ValueError, TypeError) as exc:
                raise InvalidLog(f"line {lineno}: {exc}") from None
            log.append(ev)
        return log

    @classmethod
    def load(cls, path) -> "SessionEventLog":
        with open(path) as fh:
            return cls.loads(fh.read())


@dataclass
class SessionResult:
    tokens: list
    log: SessionEventLog
    hypotheses: list = field(default_factory=list)
    truncated: bool = False


# --------------------------------------------------------------------------
# session
# --------------------------------------------------------------------------

class StreamingSession:
    """Owns every cache of one stream and advances them one segment at a time."""

    def __init__(self, model: SpeechTranslator, clock: Clock, segment_ms: float = 1000.0):
        self.model = model
        self.clock = clock
        self.segment_ms = segment_ms
        self.extractor_state = model.extractor.initial_state()
        self.enc_cache = model.encoder.new_cache()
        self.enc_states: list = []
        self.embeddings = SpeechEmbeddings(np.zeros((0, model.cfg.d_model), dtype=model.dtype))
        self.dec_cache = model.decoder.new_cache()
        self.log = SessionEventLog()
        self.audio_ms = 0.0
        self.committed: list = []
        self.segments_read = 0
        clock.reset()

    @contextlib.contextmanager
    def _charged(self, op_kind: str):
        with count_macs() as counter:
            yield counter
        self.clock.charge(op_kind, counter.macs)

    def now(self) -> float:
        return self.audio_ms + self.clock.elapsed_ms()

    def read(self, segment: WaveformSegment) -> None:
        self.audio_ms += self.segment_ms
        self.log.append(ReadEvent(self.segments_read, self.audio_ms, self.now(), segment.padded))
        self.segments_read += 1
        m = self.model
        with self._charged("encode"):
            frames, self.extractor_state = m.extractor.extract(segment, self.extractor_state)
            self.enc_states.append(m.encoder.encode_segment(self.enc_cache, frames))
        with self._charged("adapt"):
            new = m.adapter.adapt(np.concatenate(self.enc_states), len(self.embeddings.matrix))
        self.embeddings.extend(new)
        if len(new):
            with self._charged("decode"):
                m.decoder.append(self.dec_cache, new, SPEECH)

    def generate(self, n_words: int | None, max_tokens: int) -> Generation:
        with self._charged("decode"):
            return self.model.decoder.greedy_generate(self.dec_cache, n_words, max_tokens)

    def write(self, tokens: Sequence[int], final: bool = False) -> None:
        """Commit ``tokens``. A word split across writes is credited to the
        write that completes it (or to the final write)."""
        tokens = list(tokens)
        vocab = self.model.vocab
        before = vocab.count_words(self.committed, include_partial=False)
        self.committed.extend(tokens)
        words = vocab.count_words(self.committed, include_partial=final) - before
        self.log.append(WriteEvent(tuple(tokens), words, self.now(), self.audio_ms))


def prepare_stream(stream, segment_samples: int) -> list[WaveformSegment]:
    """Validate segment lengths; only the final segment may be short (it is zero-padded)."""
    segments = list(stream)
    if not segments:
        raise InvalidInput("stream is empty")
    out = []
    for i, seg in enumerate(segments):
        samples = seg.samples if isinstance(seg, WaveformSegment) else np.asarray(seg, dtype=np.float64).ravel()
        if samples.size > segment_samples:
            raise InvalidConfig(
                f"segment {i} has {samples.size} samples but the model expects {segment_samples}"
            )
        if samples.size < segment_samples and i != len(segments) - 1:
            raise InvalidSegment(f"only the final segment may be short (segment {i})")
        out.append(pad_segment(samples, segment_samples))
    return out


def run_wait_k_stride_n(model: SpeechTranslator, stream, cfg: PolicyConfig, clock: Clock) -> SessionResult:
    """Read ``k`` segments, then alternate writing ``n`` words and reading one
    segment. After the last segment the translation is finished (EOS or the
    per-write token limit)."""
    if cfg.kind != WAIT_K:
        raise InvalidConfig(f"policy kind is {cfg.kind!r}, expected {WAIT_K!r}")
    segments = prepare_stream(stream, model.cfg.segment_samples)
    session = StreamingSession(model, clock, cfg.segment_ms)
    truncated = False
    for i, seg in enumerate(segments, 1):
        session.read(seg)
        last = i == len(segments)
        if i < cfg.k and not last:
            continue
        gen = session.generate(None if last else cfg.n, cfg.max_tokens_per_write)
        session.write(gen.tokens, final=last or gen.eos)
        truncated = gen.truncated
        if gen.eos:
            break
    return SessionResult(session.committed, session.log, truncated=truncated)


def hold_n_emission(committed: Sequence[int], hypothesis: Sequence[int], n: int) -> list:
    """Tokens to emit: the hypothesis minus its last ``n`` tokens, beyond the committed prefix."""
    stable = list(hypothesis[:max(len(hypothesis) - n, 0)])
    return stable[len(committed):]


def run_hold_n(model: SpeechTranslator, stream, cfg: PolicyConfig, clock: Clock) -> SessionResult:
    """After every segment decode a full greedy hypothesis from the committed
    prefix, drop its last ``n`` tokens and commit the rest. Rows of discarded
    tokens are truncated from the decoder cache; committed rows are kept."""
    if cfg.kind != HOLD_N:
        raise InvalidConfig(f"policy kind is {cfg.kind!r}, expected {HOLD_N!r}")
    segments = prepare_stream(stream, model.cfg.segment_samples)
    session = StreamingSession(model, clock, cfg.segment_ms)
    dec = session.dec_cache
    hypotheses = []
    truncated = False
    for i, seg in enumerate(segments, 1):
        session.read(seg)
        last = i == len(segments)
        rows, pending = dec.checkpoint()
        gen = session.generate(None, cfg.max_tokens_per_write)
        hypothesis = session.committed + gen.tokens
        hypotheses.append(hypothesis)
        emit = gen.tokens if last else hold_n_emission(session.committed, hypothesis, cfg.n)
        if last:
            truncated = gen.truncated
        elif len(emit) < len(gen.tokens):
            # keep rows for the old pending token and emit[:-1]; emit[-1] becomes pending
            dec.truncate(rows + len(emit), emit[-1] if emit else pending)
        if emit:
            session.write(emit, final=last or emit[-1] == model.vocab.eos)
        if emit and emit[-1] == model.vocab.eos:
            break
    return SessionResult(session.committed, session.log, hypotheses, truncated)


def run_policy(model: SpeechTranslator, stream, cfg: PolicyConfig, clock: Clock) -> SessionResult:
    runner = run_wait_k_stride_n if cfg.kind == WAIT_K else run_hold_n
    return runner(model, stream, cfg, clock)
