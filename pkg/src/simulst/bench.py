"""Per-step cost of a wait-k-stride-n session with and without incremental
computation.

Three variants share one model and stream:

* ``full_recompute``: every step re-extracts and re-encodes the whole stream
  and rebuilds the decoder state from scratch before decoding.
* ``incremental_encoder_only``: cached block encoding, decoder rebuilt.
* ``incremental``: cached encoder and cached decoder.

Multiply-accumulate counts are exact integers and are what the scaling
checks rely on; wall time is reported alongside.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .decoder import SPEECH, TEXT, Vocabulary
from .errors import InvalidConfig
from .model import build_model
from .streaming import Clock
from .tensor_core import count_macs

FULL = "full_recompute"
ENCODER_ONLY = "incremental_encoder_only"
INCREMENTAL = "incremental"
VARIANTS = (FULL, ENCODER_ONLY, INCREMENTAL)


@dataclass
class BenchRecord:
    variant: str
    step: int
    wall_ms: float
    macs: int


def _run_variant(model, segments, variant, k, n, max_tokens, clock):
    ex, enc, ad, dec = model.extractor, model.encoder, model.adapter, model.decoder
    incremental_enc = variant != FULL
    incremental_dec = variant == INCREMENTAL
    ex_state = ex.initial_state()
    enc_cache = enc.new_cache()
    enc_states = []
    speech = np.zeros((0, model.cfg.d_model), dtype=model.dtype)
    dec_cache = dec.new_cache()
    committed: list = []
    records = []

    for step, seg in enumerate(segments, 1):
        clock.reset()
        with count_macs() as counter:
            with count_macs() as enc_counter:
                if incremental_enc:
                    frames, ex_state = ex.extract(seg, ex_state)
                    enc_states.append(enc.encode_segment(enc_cache, frames))
                    states = np.concatenate(enc_states)
                else:
                    states = enc.encode_full(ex.extract_full(np.concatenate(segments[:step])))
                new = ad.adapt(states, len(speech))
            clock.charge("encode", enc_counter.macs)
            speech = np.concatenate([speech, new])

            with count_macs() as dec_counter:
                if incremental_dec and len(new):
                    dec.append(dec_cache, new, SPEECH)
                if step >= k:
                    if not incremental_dec:
                        dec_cache = dec.new_cache()
                        dec.append(dec_cache, speech, SPEECH)
                        if committed:
                            history = [dec.vocab.bos] + committed[:-1]
                            dec.append(dec_cache, dec.embed_tokens(history), TEXT)
                            dec_cache.pending_token = committed[-1]
                    gen = dec.greedy_generate(dec_cache, n, max_tokens)
                    committed.extend(gen.tokens)
            clock.charge("decode", dec_counter.macs)
        records.append(BenchRecord(variant, step, clock.elapsed_ms(), counter.macs))
    return records


def bench_scaling(cfg: ModelConfig | None = None, num_segments: int = 32, variants=VARIANTS,
                  clock: Clock | None = None, seed: int = 0, k: int = 2, n: int = 3,
                  max_tokens: int = 64) -> list[BenchRecord]:
    """Run wait-k-stride-n over ``num_segments`` random segments per variant.

    Uses a one-token-per-word vocabulary with the reserved tokens suppressed
    so that every write step emits exactly ``n`` tokens and step costs are
    comparable.
    """
    if num_segments < 4:
        raise InvalidConfig("bench needs at least 4 segments")
    for v in variants:
        if v not in VARIANTS:
            raise InvalidConfig(f"unknown variant {v!r}")
    cfg = cfg or ModelConfig()
    vocab = Vocabulary(cfg.vocab_size, one_token_per_word=True)
    model = build_model(cfg, seed=seed, vocab=vocab)
    for tok in (vocab.bos, vocab.eos, vocab.word_sep):
        model.suppress_token(tok)
    rng = np.random.default_rng(seed + 1)
    segments = [rng.standard_normal(cfg.segment_samples) for _ in range(num_segments)]
    clock = clock or Clock.real()
    records = []
    for v in variants:
        records.extend(_run_variant(model, segments, v, k, n, max_tokens, clock))
    return records


def records_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write("# format_version: 1\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "step", "wall_ms", "macs"])
    for r in records:
        writer.writerow([r.variant, r.step, f"{r.wall_ms:.6f}", r.macs])
    return buf.getvalue()


def records_from_csv(text: str) -> list[BenchRecord]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [BenchRecord(row["variant"], int(row["step"]), float(row["wall_ms"]), int(row["macs"]))
            for row in reader]
