"""Training objectives: word-aligned contrastive loss between speech and
transcript embeddings, policy-masked cross-entropy, and the training-time
attention mask that emulates wait-k-stride-n inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decoder import SPEECH, TEXT, Decoder, InterleavedLayout
from .errors import InvalidAlignment, InvalidArgument, InvalidConfig, InvalidInput, InvalidTarget


# --------------------------------------------------------------------------
# word alignment and pooling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignedWord:
    word: str
    speech_start: int
    speech_end: int
    text_start: int
    text_end: int


class WordAlignment:
    """Ordered, non-overlapping speech-frame and text-token ranges per word."""

    def __init__(self, words: Sequence[AlignedWord]):
        self.words = list(words)
        for attr in ("speech", "text"):
            prev_end = 0
            for w in self.words:
                start, end = getattr(w, f"{attr}_start"), getattr(w, f"{attr}_end")
                if start >= end:
                    raise InvalidAlignment(f"empty {attr} range for word {w.word!r}")
                if start < prev_end:
                    raise InvalidAlignment(f"{attr} ranges overlap or are out of order at {w.word!r}")
                prev_end = end

    def __len__(self):
        return len(self.words)

    def speech_ranges(self) -> list[tuple]:
        return [(w.speech_start, w.speech_end) for w in self.words]

    def text_ranges(self) -> list[tuple]:
        return [(w.text_start, w.text_end) for w in self.words]

    @classmethod
    def from_json(cls, path) -> "WordAlignment":
        with open(path) as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data["words"]
        return cls([AlignedWord(d["word"], d["speech_start"], d["speech_end"],
                                d["text_start"], d["text_end"]) for d in data])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([w.__dict__ for w in self.words], fh, indent=1)


def group_words(embeddings, ranges) -> np.ndarray:
    """Mean-pool rows ``[start, end)`` of ``embeddings`` for every range."""
    embeddings = np.asarray(embeddings)
    out = np.empty((len(ranges), embeddings.shape[1]), dtype=embeddings.dtype)
    for i, (start, end) in enumerate(ranges):
        if not 0 <= start < end <= embeddings.shape[0]:
            raise InvalidAlignment(f"range [{start}, {end}) outside {embeddings.shape[0]} rows")
        out[i] = embeddings[start:end].mean(axis=0)
    return out


# --------------------------------------------------------------------------
# contrastive loss
# --------------------------------------------------------------------------

def _normalize(x, label):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInput(f"{label} has a zero-norm word vector")
    return x / norms, norms


def _logsumexp(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def waco_loss(speech_words, text_words, tau: float = 0.2) -> float:
    """Word-aligned contrastive loss.

    Mean over words ``i`` of ``-log softmax_j(cos(s_i, t_j) / tau)[i]``: the
    speech embedding of a word should be closer to its own transcript
    embedding than to any other word's of the same utterance.
    """
    return waco_loss_and_grad(speech_words, text_words, tau)[0]


def waco_loss_and_grad(speech_words, text_words, tau: float = 0.2):
    """Returns ``(loss, d_loss/d_speech_words, d_loss/d_text_words)``."""
    s = np.asarray(speech_words, dtype=np.float64)
    t = np.asarray(text_words, dtype=np.float64)
    if s.ndim != 2 or s.shape != t.shape or s.shape[0] < 1:
        raise InvalidArgument("speech and text word matrices must have equal shape with N >= 1")
    if tau <= 0:
        raise InvalidArgument("tau must be positive")
    n = s.shape[0]
    s_hat, s_norm = _normalize(s, "speech")
    t_hat, t_norm = _normalize(t, "text")
    sim = s_hat @ t_hat.T
    logits = sim / tau
    lse = _logsumexp(logits, axis=1)
    loss = float(np.mean(lse - np.diag(logits)))

    prob = np.exp(logits - lse[:, None])
    g = (prob - np.eye(n)) / (n * tau)  # dL/dsim
    # d cos(u, v)/du = (v_hat - cos * u_hat) / |u|
    grad_s = (g @ t_hat - (g * sim).sum(axis=1, keepdims=True) * s_hat) / s_norm
    grad_t = (g.T @ s_hat - (g * sim).sum(axis=0)[:, None] * t_hat) / t_norm
    return loss, grad_s, grad_t


# --------------------------------------------------------------------------
# cross-entropy
# --------------------------------------------------------------------------

def _check_targets(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise InvalidArgument("logits rows must equal number of targets")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise InvalidTarget("target id outside vocabulary")
    return logits, targets


def masked_ce(logits, targets) -> float:
    """Mean negative log-probability of each target under its row's softmax."""
    return masked_ce_and_grad(logits, targets)[0]


def masked_ce_and_grad(logits, targets):
    logits, targets = _check_targets(logits, targets)
    rows = np.arange(len(targets))
    lse = _logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, targets]))
    grad = np.exp(logits - lse[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / len(targets)


# --------------------------------------------------------------------------
# training mask
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage2MaskSpec:
    """Inputs of the training mask over ``[all speech ; all text]``.

    ``token_groups[p]`` is the write step (word group) of text row ``p``;
    group ``i`` holds words ``i*n .. (i+1)*n - 1`` and may only see the first
    ``i + k`` speech segments.
    """

    segment_sizes: tuple
    token_groups: tuple
    k: int
    n: int

    def __post_init__(self):
        object.__setattr__(self, "segment_sizes", tuple(int(x) for x in self.segment_sizes))
        object.__setattr__(self, "token_groups", tuple(int(x) for x in self.token_groups))
        if self.k < 1 or self.n < 1:
            raise InvalidConfig("k and n must be >= 1")
        if any(x < 0 for x in self.segment_sizes):
            raise InvalidConfig("segment sizes must be nonnegative")
        if any(b < a for a, b in zip(self.token_groups, self.token_groups[1:])):
            raise InvalidConfig("token groups must be nondecreasing")

    @classmethod
    def from_word_indices(cls, segment_sizes, word_indices, k: int, n: int) -> "Stage2MaskSpec":
        return cls(tuple(segment_sizes), tuple(w // n for w in word_indices), k, n)

    @property
    def speech_len(self) -> int:
        return sum(self.segment_sizes)

    def visible_speech(self, group: int) -> int:
        """Number of leading speech rows visible to text rows of ``group``."""
        return sum(self.segment_sizes[:group + self.k])


def build_stage2_mask(spec: Stage2MaskSpec) -> np.ndarray:
    ls, lt = spec.speech_len, len(spec.token_groups)
    mask = np.zeros((ls + lt, ls + lt), dtype=bool)
    mask[:ls, :ls] = np.tri(ls, dtype=bool)
    mask[ls:, ls:] = np.tri(lt, dtype=bool)
    for p, g in enumerate(spec.token_groups):
        mask[ls + p, :spec.visible_speech(g)] = True
    return mask


def wait_k_layout(segment_sizes, token_groups, k: int):
    """Inference arrangement of the same rows: speech of segments ``1..k``,
    group 0 text, segment ``k+1``, group 1 text, ... Returns the layout and,
    for every position, its row index in ``[all speech ; all text]`` order."""
    ls = sum(segment_sizes)
    seg_starts = np.concatenate([[0], np.cumsum(segment_sizes)]).astype(int)
    groups = np.asarray(token_groups, dtype=int)
    order: list = []
    deltas: list = []
    segs_in = 0

    def add_speech(upto):
        nonlocal segs_in
        while segs_in < min(upto, len(segment_sizes)):
            rows = range(seg_starts[segs_in], seg_starts[segs_in + 1])
            order.extend(rows)
            deltas.extend([SPEECH] * len(rows))
            segs_in += 1

    for g in (np.unique(groups) if groups.size else []):
        add_speech(g + k)
        rows = np.flatnonzero(groups == g)
        order.extend(ls + rows)
        deltas.extend([TEXT] * len(rows))
    add_speech(len(segment_sizes))
    return InterleavedLayout.from_modalities(deltas), np.asarray(order, dtype=int)


def stage2_logit_equivalence(decoder: Decoder, speech_embeddings, segment_sizes,
                             reference_tokens: Sequence[int], k: int, n: int) -> float:
    """Max-abs gap between teacher-forced text logits under the training mask
    and the same rows replayed incrementally in wait-k-stride-n order.

    Assumes one token per word. Text inputs are ``[BOS] + reference[:-1]``;
    input row ``p`` belongs to write step ``p // n``.
    """
    speech = np.asarray(speech_embeddings, dtype=decoder.dtype)
    if speech.shape[0] != sum(segment_sizes):
        raise InvalidArgument("segment sizes do not add up to the speech embedding count")
    inputs = [decoder.vocab.bos] + list(reference_tokens)[:-1]
    spec = Stage2MaskSpec.from_word_indices(segment_sizes, range(len(inputs)), k, n)
    text = decoder.embed_tokens(inputs)
    ls = speech.shape[0]

    train_layout = InterleavedLayout(((SPEECH, ls), (TEXT, len(inputs))))
    train = decoder.forward_full(np.concatenate([speech, text]), train_layout, build_stage2_mask(spec))
    train_logits = train.logits[ls:]

    layout, order = wait_k_layout(spec.segment_sizes, spec.token_groups, k)
    rows = np.concatenate([speech, text])[order]
    cache = decoder.new_cache()
    text_logits = []
    pos = 0
    for modality, length in layout.spans:
        out = decoder.append(cache, rows[pos:pos + length], modality)
        if modality == TEXT:
            text_logits.append(out.logits)
        pos += length
    infer_logits = np.concatenate(text_logits)
    return float(np.max(np.abs(train_logits.astype(np.float64) - infer_logits.astype(np.float64))))


# --------------------------------------------------------------------------
# k sampling
# --------------------------------------------------------------------------

def sample_k(choices, rng=None) -> int:
    """Draw one lag uniformly from ``choices``.

    ``rng`` is a seed or a ``numpy.random.Generator``; pass the same
    generator repeatedly for a reproducible sequence.
    """
    options = sorted(set(int(c) for c in choices))
    if not options:
        raise InvalidConfig("K is empty")
    rng = np.random.default_rng(rng)
    return options[int(rng.integers(len(options)))]
