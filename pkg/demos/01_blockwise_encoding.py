"""Blockwise-causal encoding of a stream, one segment at a time.

The encoder sees audio in fixed segments. Each segment becomes one block of
frames, and a frame may attend to every frame in its own block and in earlier
blocks. Because nothing looks ahead, the states of a block never change once
computed, so they can be cached.
"""

import numpy as np

from simulst import ModelConfig, build_model
from simulst.encoder import build_blockwise_mask
from simulst.tensor_core import count_macs

cfg = ModelConfig()
model = build_model(cfg, seed=0)
print(f"segment = {cfg.segment_samples} samples -> {cfg.block_size} frames")

# The mask for 3 blocks of 2 frames:
print(build_blockwise_mask(6, 2).astype(int))

rng = np.random.default_rng(0)
wave = rng.standard_normal(6 * cfg.segment_samples)

# Streaming path: extractor state and encoder cache carry over between segments.
state, cache, streamed, costs = None, model.encoder.new_cache(), [], []
for i in range(6):
    seg = wave[i * cfg.segment_samples:(i + 1) * cfg.segment_samples]
    with count_macs() as c:
        frames, state = model.extractor.extract(seg, state)
        streamed.append(model.encoder.encode_segment(cache, frames))
    costs.append(c.macs)
streamed = np.concatenate(streamed)

# Offline path: the whole waveform at once.
full = model.encoder.encode_full(model.extractor.extract_full(wave))
print("max |streamed - full| =", np.abs(streamed - full).max())
print("MACs per segment:", costs)

# The adapter shortens the sequence four-fold. Running it again on a longer
# prefix reproduces the earlier embeddings bit for bit.
short = model.adapter.adapt(streamed[:3 * cfg.block_size])
long = model.adapter.adapt(streamed)
print("adapter:", len(streamed), "states ->", len(long), "embeddings; prefix identical:",
      long[:len(short)].tobytes() == short.tobytes())
