"""Toy autoregressive decoder standing in for the language model.

Speech embeddings and text-token embeddings are interleaved in one sequence.
The consistency mask lets text rows attend causally to everything while
speech rows attend causally to speech only, and speech and text rows draw
rotary positions from separate counters. Together these keep cached rows
valid no matter how the interleaving grows, so inference never recomputes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .config import ModelConfig
from .errors import InvalidArgument, InvalidConfig
from .tensor_core import RotaryTable, as_matrix, linear
from .transformer import TransformerStack

SPEECH = 0
TEXT = 1

_MODALITY_NAMES = {"speech": SPEECH, "s": SPEECH, "text": TEXT, "t": TEXT}


def _modality(m) -> int:
    if isinstance(m, str):
        try:
            return _MODALITY_NAMES[m.lower()]
        except KeyError:
            raise InvalidArgument(f"unknown modality {m!r}") from None
    if m not in (SPEECH, TEXT):
        raise InvalidArgument(f"unknown modality {m!r}")
    return int(m)


# --------------------------------------------------------------------------
# layouts, masks, positions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InterleavedLayout:
    """Ordered ``(modality, length)`` spans making up a decoder input."""

    spans: tuple

    def __post_init__(self):
        spans = tuple((_modality(m), int(n)) for m, n in self.spans)
        for _, n in spans:
            if n < 1:
                raise InvalidArgument("layout spans must have length >= 1")
        object.__setattr__(self, "spans", spans)

    @classmethod
    def parse(cls, text: str) -> "InterleavedLayout":
        """Parse a compact form such as ``"S2,T1,S1"``."""
        spans = []
        for part in text.replace(" ", "").split(","):
            if not part:
                continue
            spans.append((part[0], int(part[1:])))
        return cls(tuple(spans))

    @classmethod
    def from_modalities(cls, deltas: Sequence[int]) -> "InterleavedLayout":
        spans: list = []
        for d in deltas:
            if spans and spans[-1][0] == d:
                spans[-1][1] += 1
            else:
                spans.append([d, 1])
        return cls(tuple(tuple(s) for s in spans))

    def __len__(self) -> int:
        return sum(n for _, n in self.spans)

    def modalities(self) -> np.ndarray:
        """Per-position indicator: 1 for text, 0 for speech."""
        return np.concatenate([np.full(n, m, dtype=np.int8) for m, n in self.spans]) \
            if self.spans else np.zeros(0, dtype=np.int8)

    def without_text(self) -> "InterleavedLayout":
        return InterleavedLayout.from_modalities([m for m in self.modalities() if m == SPEECH])

    def __str__(self) -> str:
        return ",".join(("S" if m == SPEECH else "T") + str(n) for m, n in self.spans)


def consistency_rows(deltas, first_query: int = 0) -> np.ndarray:
    """Mask rows ``first_query..`` of the consistency mask for modality sequence ``deltas``."""
    deltas = np.asarray(deltas)
    z = np.arange(len(deltas))
    zq = z[first_query:]
    return (zq[:, None] >= z[None, :]) & (deltas[first_query:, None] >= deltas[None, :])


def build_consistency_mask(layout: InterleavedLayout) -> np.ndarray:
    if not len(layout):
        raise InvalidArgument("layout is empty")
    return consistency_rows(layout.modalities())


def assign_positions(layout: InterleavedLayout) -> np.ndarray:
    """Speech and text positions each count up from 0 independently."""
    deltas = layout.modalities()
    positions = np.empty(len(deltas), dtype=np.int64)
    for m in (SPEECH, TEXT):
        sel = deltas == m
        positions[sel] = np.arange(int(sel.sum()))
    return positions


# --------------------------------------------------------------------------
# vocabulary
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    """Token ids with reserved BOS/EOS/word-separator entries.

    With ``one_token_per_word`` every content token is a whole word; otherwise
    a word ends at ``word_sep`` (or ``eos``).
    """

    size: int
    bos: int = 0
    eos: int = 1
    word_sep: int = 2
    tokens: tuple | None = None
    one_token_per_word: bool = False

    def __post_init__(self):
        if self.size < 4:
            raise InvalidConfig("vocabulary size must be >= 4")
        reserved = {self.bos, self.eos, self.word_sep}
        if len(reserved) != 3:
            raise InvalidConfig("reserved token ids must be distinct")
        if not all(0 <= t < self.size for t in reserved):
            raise InvalidConfig("reserved token ids out of range")
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(self.tokens))
            if len(self.tokens) != self.size:
                raise InvalidConfig("token list length must equal vocabulary size")

    def is_content(self, tok: int) -> bool:
        return tok not in (self.bos, self.eos, self.word_sep)

    def ends_word(self, tok: int) -> bool:
        if self.one_token_per_word:
            return self.is_content(tok)
        return tok == self.eos or tok == self.word_sep

    def count_words(self, tokens: Sequence[int], include_partial: bool = True) -> int:
        """Number of words in ``tokens``; a trailing unterminated word counts
        only when ``include_partial`` is set."""
        if self.one_token_per_word:
            return sum(1 for t in tokens if self.is_content(t))
        words, in_word = 0, False
        for t in tokens:
            if self.is_content(t):
                in_word = True
            elif in_word:
                words += 1
                in_word = False
        return words + int(in_word and include_partial)

    def words(self, tokens: Sequence[int]) -> list[str]:
        """Render tokens as a list of word strings."""
        name = (lambda t: self.tokens[t]) if self.tokens else str
        if self.one_token_per_word:
            return [name(t) for t in tokens if self.is_content(t)]
        out, cur = [], []
        for t in tokens:
            if self.is_content(t):
                cur.append(name(t))
            elif cur:
                out.append("".join(cur))
                cur = []
        if cur:
            out.append("".join(cur))
        return out

    def to_dict(self) -> dict:
        d = {"format_version": 1, "size": self.size, "bos": self.bos, "eos": self.eos,
             "word_sep": self.word_sep, "one_token_per_word": self.one_token_per_word}
        if self.tokens is not None:
            d["tokens"] = list(self.tokens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(size=d["size"], bos=d["bos"], eos=d["eos"], word_sep=d["word_sep"],
                   tokens=d.get("tokens"), one_token_per_word=d.get("one_token_per_word", False))

    @classmethod
    def from_json(cls, path) -> "Vocabulary":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# cache and model
# --------------------------------------------------------------------------

@dataclass
class DecoderCache:
    """Per-layer keys/values plus per-row modality and position.

    ``pending_token`` is the most recently generated token, not yet fed back;
    it is appended at the start of the next generation call so that its query
    row sees any speech that arrived in between.
    """

    keys: list
    values: list
    modalities: np.ndarray
    positions: np.ndarray
    speech_counter: int = 0
    text_counter: int = 0
    pending_token: int | None = None

    @property
    def rows(self) -> int:
        return len(self.modalities)

    def truncate(self, rows: int, pending_token: int | None) -> None:
        """Drop every row past ``rows`` (rollback of uncommitted text)."""
        if rows > self.rows:
            raise InvalidArgument("cannot truncate a cache to more rows than it holds")
        self.keys = [k[:rows] for k in self.keys]
        self.values = [v[:rows] for v in self.values]
        self.modalities = self.modalities[:rows]
        self.positions = self.positions[:rows]
        self.speech_counter = int((self.modalities == SPEECH).sum())
        self.text_counter = int((self.modalities == TEXT).sum())
        self.pending_token = pending_token

    def checkpoint(self) -> tuple:
        return self.rows, self.pending_token


class DecoderOutput(NamedTuple):
    hidden: np.ndarray
    logits: np.ndarray


@dataclass
class Generation:
    tokens: list = field(default_factory=list)
    words: int = 0
    eos: bool = False
    truncated: bool = False


class Decoder:
    def __init__(self, cfg: ModelConfig, params: dict, vocab: Vocabulary):
        if vocab.size != cfg.vocab_size:
            raise InvalidConfig(f"vocabulary size {vocab.size} != config vocab_size {cfg.vocab_size}")
        self.cfg = cfg
        self.params = params
        self.vocab = vocab
        self.rope = RotaryTable(cfg.max_position, cfg.dec_head_dim, cfg.rope_base)
        self.stack = TransformerStack(params, "decoder", cfg.dec_layers, cfg.dec_heads, self.rope)

    @property
    def dtype(self):
        return self.params["decoder.out.w"].dtype

    def embed_tokens(self, tokens: Sequence[int]) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab.size):
            raise InvalidArgument("token id outside vocabulary")
        return self.params["decoder.tok_emb"][tokens]

    def logits(self, hidden) -> np.ndarray:
        return linear(hidden, self.params["decoder.out.w"], self.params["decoder.out.b"])

    def _check_embeddings(self, embeddings, rows=None):
        emb = as_matrix(embeddings, dtype=self.dtype, name="embeddings")
        if emb.shape[1] != self.cfg.d_model:
            raise InvalidArgument(f"embeddings have width {emb.shape[1]}, expected {self.cfg.d_model}")
        if rows is not None and emb.shape[0] != rows:
            raise InvalidArgument(f"{emb.shape[0]} embedding rows but layout has {rows}")
        return emb

    def forward_full(self, embeddings, layout: InterleavedLayout, mask=None) -> DecoderOutput:
        """Reference pass over a whole interleaved sequence.

        ``mask`` defaults to the consistency mask of ``layout``.
        """
        emb = self._check_embeddings(embeddings, len(layout))
        if mask is None:
            mask = build_consistency_mask(layout)
        hidden, _ = self.stack.forward(emb, assign_positions(layout), mask)
        return DecoderOutput(hidden, self.logits(hidden))

    def new_cache(self) -> DecoderCache:
        empty = np.zeros((0, self.cfg.d_model), dtype=self.dtype)
        return DecoderCache(
            keys=[empty] * self.cfg.dec_layers,
            values=[empty] * self.cfg.dec_layers,
            modalities=np.zeros(0, dtype=np.int8),
            positions=np.zeros(0, dtype=np.int64),
            pending_token=self.vocab.bos,
        )

    def append(self, cache: DecoderCache, embeddings, modality) -> DecoderOutput:
        """Run only the new rows against the cache, then append them to it."""
        modality = _modality(modality)
        emb = self._check_embeddings(embeddings)
        t = emb.shape[0]
        if t == 0:
            raise InvalidArgument("nothing to append")
        counter = cache.speech_counter if modality == SPEECH else cache.text_counter
        positions = np.arange(counter, counter + t)
        deltas = np.concatenate([cache.modalities, np.full(t, modality, dtype=np.int8)])
        mask = consistency_rows(deltas, cache.rows)
        hidden, kv = self.stack.forward(emb, positions, mask, list(zip(cache.keys, cache.values)))
        cache.keys = [np.concatenate([pk, k]) for pk, (k, _) in zip(cache.keys, kv)]
        cache.values = [np.concatenate([pv, v]) for pv, (_, v) in zip(cache.values, kv)]
        cache.modalities = deltas
        cache.positions = np.concatenate([cache.positions, positions])
        if modality == SPEECH:
            cache.speech_counter += t
        else:
            cache.text_counter += t
        return DecoderOutput(hidden, self.logits(hidden))

    def greedy_generate(self, cache: DecoderCache, n_words: int | None, max_tokens: int = 64) -> Generation:
        """Greedy decoding until ``n_words`` words end, EOS, or ``max_tokens``.

        ``n_words=None`` decodes until EOS or the token limit. Ties in the
        argmax go to the lowest token id.
        """
        if cache.speech_counter == 0:
            raise InvalidArgument("decoder cache holds no speech")
        if n_words is not None and n_words < 1:
            raise InvalidArgument("n_words must be >= 1")
        if max_tokens < 1:
            raise InvalidArgument("max_tokens must be >= 1")
        if cache.pending_token is None:
            cache.pending_token = self.vocab.bos
        gen = Generation()
        vocab = self.vocab
        # a word left open by the previous call is closed by this one
        in_word = not vocab.one_token_per_word and vocab.is_content(cache.pending_token)
        while True:
            out = self.append(cache, self.embed_tokens([cache.pending_token]), TEXT)
            tok = int(np.argmax(out.logits[-1]))
            gen.tokens.append(tok)
            cache.pending_token = tok
            if vocab.is_content(tok):
                in_word = True
            if in_word and vocab.ends_word(tok):
                gen.words += 1
                in_word = False
            if tok == vocab.eos:
                gen.eos = True
                return gen
            if n_words is not None and gen.words >= n_words:
                return gen
            if len(gen.tokens) >= max_tokens:
                gen.truncated = True
                return gen


def dump_logits_csv(logits, path, vocab: Vocabulary | None = None) -> None:
    """Write a ``rows x V`` logit matrix as CSV (debugging aid)."""
    logits = np.asarray(logits)
    header = list(vocab.tokens) if vocab is not None and vocab.tokens else [str(i) for i in range(logits.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + header)
        for i, row in enumerate(logits):
            writer.writerow([i] + [repr(float(x)) for x in row])
