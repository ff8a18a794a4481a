"""Latency and quality metrics computed from session event logs."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidLog, InvalidProfile, InvalidReference
from .streaming import ReadEvent, SessionEventLog, WriteEvent


@dataclass
class DelayProfile:
    """Per-word delays in ms.

    ``d_nca`` is the audio received when the word was emitted; ``d_ca`` is
    the wall time of the emission, which adds computation time.
    """

    d_nca: list
    d_ca: list
    source_ms: float
    hyp_len: int
    ref_len: int


def delays_from_log(log: SessionEventLog, ref_len: int | None = None,
                    source_ms: float | None = None) -> DelayProfile:
    """Words of one WRITE share that write's delays."""
    events = list(log)
    if not events or not isinstance(events[0], ReadEvent):
        raise InvalidLog("log must start with a READ")
    d_nca, d_ca = [], []
    last_audio = None
    last_wall = -math.inf
    for ev in events:
        if ev.wall_ms < last_wall:
            raise InvalidLog("wall_ms decreases")
        last_wall = ev.wall_ms
        if isinstance(ev, ReadEvent):
            last_audio = ev.audio_ms
        elif isinstance(ev, WriteEvent):
            d_nca.extend([last_audio] * ev.words)
            d_ca.extend([ev.wall_ms] * ev.words)
        else:
            raise InvalidLog(f"unknown event {ev!r}")
    hyp_len = len(d_nca)
    return DelayProfile(
        d_nca=d_nca,
        d_ca=d_ca,
        source_ms=log.source_ms if source_ms is None else source_ms,
        hyp_len=hyp_len,
        ref_len=hyp_len if ref_len is None else ref_len,
    )


def laal(profile: DelayProfile, mode: str = "nca") -> float:
    """Length-adaptive average lagging.

    ``r = T / max(hyp_len, ref_len)``; the sum runs over words ``1..tau``
    where ``tau`` is the first word whose non-computation-aware delay reaches
    ``T`` (all words if none does), so both modes cover the same words::

        LAAL = 1/tau * sum_{i=1..tau} (d_i - (i - 1) * r)
    """
    if profile.source_ms <= 0:
        raise InvalidProfile("source duration must be positive")
    if profile.hyp_len < 1:
        raise InvalidProfile("no words emitted")
    if mode not in ("ca", "nca"):
        raise InvalidProfile(f"unknown mode {mode!r}")
    T = profile.source_ms
    r = T / max(profile.hyp_len, profile.ref_len)
    tau = profile.hyp_len
    for i, d in enumerate(profile.d_nca, 1):
        if d >= T:
            tau = i
            break
    delays = profile.d_ca if mode == "ca" else profile.d_nca
    return sum(delays[i] - i * r for i in range(tau)) / tau


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_lite(hypothesis: Sequence, reference: Sequence, max_order: int = 4) -> float:
    """Single-reference sentence BLEU on token sequences.

    Clipped n-gram precisions for orders ``1..max_order``; an order of two
    or more with no match is add-one smoothed, unigram precision is not.
    Geometric mean times brevity penalty.
    """
    hyp, ref = list(hypothesis), list(reference)
    if not ref:
        raise InvalidReference("reference is empty")
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, max_order + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        total = sum(hyp_counts.values())
        matches = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        if matches == 0:
            if n == 1:
                return 0.0
            matches, total = 1, total + 1
        log_p += math.log(matches / total) / max_order
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1 - len(ref) / len(hyp))
    return bp * math.exp(log_p)


def fit_r2(x, y, degree: int) -> tuple[np.ndarray, float]:
    """Least-squares polynomial fit; returns ``(coefficients, R^2)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coeffs = np.polyfit(x, y, degree)
    resid = y - np.polyval(coeffs, x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return coeffs, r2
