"""Randomized incremental-vs-full equivalence checks.

Used by the ``equiv`` command and by the test suites.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .decoder import InterleavedLayout, Vocabulary
from .losses import stage2_logit_equivalence
from .model import SpeechTranslator, build_model


def random_config(rng: np.random.Generator, block_size: int | None = None) -> ModelConfig:
    heads = int(rng.choice([1, 2, 4]))
    head_dim = int(rng.choice([4, 8]))
    return ModelConfig(
        d_feat=int(rng.choice([8, 16])),
        d_enc=heads * head_dim,
        enc_layers=int(rng.integers(1, 3)),
        enc_heads=heads,
        enc_ffn=32,
        block_size=block_size or int(rng.choice([4, 8, 12])),
        d_adapter=16,
        d_model=heads * head_dim,
        dec_layers=int(rng.integers(1, 3)),
        dec_heads=heads,
        dec_ffn=32,
        vocab_size=16,
    )


def encoder_equivalence(model: SpeechTranslator, n_segments: int, rng: np.random.Generator) -> float:
    """Max-abs gap between cached block-by-block encoding and one full pass."""
    b = model.cfg.block_size
    frames = rng.standard_normal((n_segments * b, model.cfg.d_feat)).astype(model.dtype)
    full = model.encoder.encode_full(frames)
    cache = model.encoder.new_cache()
    steps = [model.encoder.encode_segment(cache, frames[i * b:(i + 1) * b]) for i in range(n_segments)]
    return float(np.max(np.abs(np.concatenate(steps).astype(np.float64) - full)))


def random_layout(rng: np.random.Generator, max_spans: int = 6, max_len: int = 64) -> InterleavedLayout:
    n_spans = int(rng.integers(1, max_spans + 1))
    modality = int(rng.integers(2))
    spans = []
    budget = max_len
    for i in range(n_spans):
        remaining = n_spans - i - 1
        if budget - remaining < 1:
            break
        length = int(rng.integers(1, min(12, budget - remaining) + 1))
        spans.append((modality, length))
        budget -= length
        modality = 1 - modality
    return InterleavedLayout(tuple(spans))


def decoder_equivalence(model: SpeechTranslator, layout: InterleavedLayout, rng: np.random.Generator) -> float:
    """Max-abs logit gap between span-by-span cached replay and one full pass."""
    emb = rng.standard_normal((len(layout), model.cfg.d_model)).astype(model.dtype)
    full = model.decoder.forward_full(emb, layout).logits
    cache = model.decoder.new_cache()
    parts, pos = [], 0
    for modality, length in layout.spans:
        parts.append(model.decoder.append(cache, emb[pos:pos + length], modality).logits)
        pos += length
    return float(np.max(np.abs(np.concatenate(parts).astype(np.float64) - full)))


def stage2_equivalence(model: SpeechTranslator, n_segments: int, k: int, n: int,
                       rng: np.random.Generator) -> float:
    sizes = [int(s) for s in rng.integers(1, 4, size=n_segments)]
    speech = rng.standard_normal((sum(sizes), model.cfg.d_model)).astype(model.dtype)
    n_tokens = int(rng.integers(1, 3 * n + 4))
    vocab = model.vocab
    content = [t for t in range(vocab.size) if vocab.is_content(t)]
    reference = [int(t) for t in rng.choice(content, size=n_tokens)]
    return stage2_logit_equivalence(model.decoder, speech, sizes, reference, k, n)


def run_suite(seed: int = 0, trials: int = 10) -> dict:
    """Maximum deviation of each equivalence family over ``trials`` random draws."""
    rng = np.random.default_rng(seed)
    worst = {"encoder": 0.0, "decoder": 0.0, "stage2": 0.0}
    for _ in range(trials):
        cfg = random_config(rng)
        model = build_model(cfg, seed=int(rng.integers(2 ** 31)),
                            vocab=Vocabulary(cfg.vocab_size, one_token_per_word=True))
        worst["encoder"] = max(worst["encoder"], encoder_equivalence(model, int(rng.integers(1, 9)), rng))
        worst["decoder"] = max(worst["decoder"], decoder_equivalence(model, random_layout(rng), rng))
        k = int(rng.choice([1, 2, 3, 100]))
        worst["stage2"] = max(worst["stage2"], stage2_equivalence(
            model, int(rng.integers(2, 6)), k, int(rng.integers(1, 4)), rng))
    return worst

