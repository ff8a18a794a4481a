"""Interleaving speech and text in one decoder cache.

During streaming the decoder receives speech embeddings and its own output
tokens in alternation. Speech rows never see text rows, and speech and text
count positions separately, so a speech row's state does not depend on what
was generated before it arrived.
"""

import numpy as np

from simulst import SPEECH, TEXT, InterleavedLayout, ModelConfig, Vocabulary, build_model
from simulst.decoder import assign_positions, build_consistency_mask

layout = InterleavedLayout.parse("S3,T2,S2")
print(layout, "positions", assign_positions(layout).tolist())
print(build_consistency_mask(layout).astype(int))

cfg = ModelConfig()
model = build_model(cfg, seed=1, vocab=Vocabulary(cfg.vocab_size, one_token_per_word=True))
rng = np.random.default_rng(1)
emb = rng.standard_normal((len(layout), cfg.d_model))

full = model.decoder.forward_full(emb, layout).logits
cache = model.decoder.new_cache()
parts, pos = [], 0
for modality, length in layout.spans:
    parts.append(model.decoder.append(cache, emb[pos:pos + length], modality).logits)
    pos += length
print("span-by-span vs one pass:", np.abs(np.concatenate(parts) - full).max())

# Speech rows are the same with the text removed altogether.
speech = layout.modalities() == SPEECH
alone = model.decoder.forward_full(emb[speech], layout.without_text()).hidden
print("speech rows without text:", np.abs(model.decoder.forward_full(emb, layout).hidden[speech] - alone).max())

# Greedy generation feeds each token back as a text row.
gen = model.decoder.greedy_generate(cache, n_words=3)
print("generated", gen.tokens, "rows in cache:", cache.rows, "text rows:", int((cache.modalities == TEXT).sum()))
