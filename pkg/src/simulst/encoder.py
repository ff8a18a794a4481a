"""Streaming speech encoder: causal convolutional feature extraction, a
blockwise-causal transformer with a block-level KV cache, and the causal
length-reducing adapter.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .errors import InvalidArgument, InvalidBlock, InvalidLength, InvalidSegment
from .tensor_core import RotaryTable, as_matrix, gelu, linear, matmul
from .transformer import TransformerStack


# --------------------------------------------------------------------------
# causal convolution
# --------------------------------------------------------------------------

def causal_conv1d(h_in, weight, bias=None, stride: int = 1, context=None) -> np.ndarray:
    """Causal 1-D convolution over the rows of ``h_in``.

    Output ``j`` reads inputs ``s*j + s - w .. s*j + s - 1`` (stride ``s``,
    kernel width ``w``); positions before the start are zero unless
    ``context`` supplies the ``w - 1`` rows preceding ``h_in``. The output has
    ``len(h_in) // s`` rows, so stride 1 preserves length.

    ``weight`` is ``(w, d_in, d_out)``; a 1-D kernel is treated as
    ``(w, 1, 1)``.
    """
    weight = np.asarray(weight)
    if weight.ndim == 1:
        weight = weight[:, None, None]
    h_in = np.asarray(h_in, dtype=weight.dtype)
    if h_in.ndim == 1:
        h_in = h_in[:, None]
    w, d_in, d_out = weight.shape
    if h_in.shape[0] < 1:
        raise InvalidArgument("causal_conv1d needs at least one input row")
    if w < 1 or stride < 1:
        raise InvalidArgument("kernel width and stride must be >= 1")
    if h_in.shape[1] != d_in:
        raise InvalidArgument(f"input has {h_in.shape[1]} channels, kernel expects {d_in}")
    if context is None:
        context = np.zeros((w - 1, d_in), dtype=h_in.dtype)
    elif context.shape != (w - 1, d_in):
        raise InvalidArgument(f"context must have shape {(w - 1, d_in)}")

    padded = np.concatenate([context, h_in])
    n_out = h_in.shape[0] // stride
    ends = stride * np.arange(n_out) + stride - 1 + (w - 1)
    windows = padded[ends[:, None] - (w - 1) + np.arange(w)[None, :]]
    out = matmul(windows.reshape(n_out, w * d_in), weight.reshape(w * d_in, d_out))
    if bias is not None:
        out = out + bias
    return out


def conv_output_length(length: int, stride: int) -> int:
    return length // stride


# --------------------------------------------------------------------------
# waveform segments and feature extraction
# --------------------------------------------------------------------------

@dataclass
class WaveformSegment:
    samples: np.ndarray
    padded: int = 0

    @property
    def sample_count(self) -> int:
        return len(self.samples)


def make_segments(samples, segment_samples: int) -> list[WaveformSegment]:
    """Cut a waveform into fixed-size segments, zero-padding the last one."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        return []
    segments = []
    for start in range(0, samples.size, segment_samples):
        segments.append(pad_segment(samples[start:start + segment_samples], segment_samples))
    return segments


def pad_segment(samples, segment_samples: int) -> WaveformSegment:
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size > segment_samples:
        raise InvalidSegment(f"segment has {samples.size} samples, expected {segment_samples}")
    missing = segment_samples - samples.size
    if missing:
        samples = np.concatenate([samples, np.zeros(missing)])
    return WaveformSegment(samples, missing)


def load_stream_manifest(path) -> dict:
    """Read a stream manifest.

    ``{"sample_rate": int, "segment_samples": int, "segments": [...]}`` where
    each segment is either an inline list of samples or a path (relative to
    the manifest) to raw little-endian float32 samples.
    """
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    segments = []
    for entry in manifest["segments"]:
        if isinstance(entry, str):
            segments.append(np.fromfile(os.path.join(base, entry), dtype="<f4").astype(np.float64))
        else:
            segments.append(np.asarray(entry, dtype=np.float64))
    return {
        "sample_rate": int(manifest.get("sample_rate", 16000)),
        "segment_samples": int(manifest["segment_samples"]),
        "segments": segments,
    }


@dataclass
class ExtractorState:
    """Trailing input rows each convolution needs from the previous segment."""

    contexts: list


class FeatureExtractor:
    """Stack of causal strided convolutions with GELU, turning raw samples into
    encoder frames. Streaming keeps ``w - 1`` rows of history per layer, so
    segment-by-segment extraction equals extraction over the whole stream."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    def initial_state(self) -> ExtractorState:
        dtype = self.params["extractor.conv0.w"].dtype
        contexts = []
        d_in = 1
        for w, _ in self.cfg.extractor_convs:
            contexts.append(np.zeros((w - 1, d_in), dtype=dtype))
            d_in = self.cfg.d_feat
        return ExtractorState(contexts)

    def _run(self, samples, state: ExtractorState):
        x = np.asarray(samples, dtype=self.params["extractor.conv0.w"].dtype)[:, None]
        new_contexts = []
        for i, (w, s) in enumerate(self.cfg.extractor_convs):
            ctx = state.contexts[i]
            new_contexts.append(np.concatenate([ctx, x])[x.shape[0]:] if w > 1 else ctx)
            x = gelu(causal_conv1d(x, self.params[f"extractor.conv{i}.w"],
                                   self.params[f"extractor.conv{i}.b"], s, context=ctx))
        return x, ExtractorState(new_contexts)

    def extract(self, segment, state: ExtractorState | None = None):
        """Frames for one segment: returns ``(frames [b x d_feat], next_state)``."""
        samples = segment.samples if isinstance(segment, WaveformSegment) else np.asarray(segment)
        if samples.ndim != 1 or samples.size != self.cfg.segment_samples:
            raise InvalidSegment(
                f"segment has {samples.size} samples, expected {self.cfg.segment_samples}"
            )
        return self._run(samples, state or self.initial_state())

    def extract_full(self, samples) -> np.ndarray:
        """Frames for a whole waveform whose length is a multiple of the segment size."""
        samples = np.asarray(samples).ravel()
        if samples.size == 0 or samples.size % self.cfg.segment_samples:
            raise InvalidSegment("waveform length must be a positive multiple of the segment size")
        return self._run(samples, self.initial_state())[0]


def feature_extract(segment, extractor: FeatureExtractor, state=None):
    return extractor.extract(segment, state)


# --------------------------------------------------------------------------
# blockwise-causal encoder
# --------------------------------------------------------------------------

def build_blockwise_mask(length: int, block: int) -> np.ndarray:
    """Query ``i`` sees key ``j`` iff ``i // block >= j // block``."""
    if length < 1 or block < 1:
        raise InvalidArgument("length and block size must be >= 1")
    idx = np.arange(length) // block
    return idx[:, None] >= idx[None, :]


@dataclass
class EncoderCache:
    """Per-layer rotated keys and values of every processed block."""

    block_size: int
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    blocks_processed: int = 0

    @property
    def rows(self) -> int:
        return self.blocks_processed * self.block_size


class Encoder:
    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self.rope = RotaryTable(cfg.max_position, cfg.enc_head_dim, cfg.rope_base)
        self.stack = TransformerStack(params, "encoder", cfg.enc_layers, cfg.enc_heads, self.rope)

    @property
    def dtype(self):
        return self.params["encoder.in.w"].dtype

    def new_cache(self) -> EncoderCache:
        empty = np.zeros((0, self.cfg.d_enc), dtype=self.dtype)
        return EncoderCache(
            self.cfg.block_size,
            keys=[empty] * self.cfg.enc_layers,
            values=[empty] * self.cfg.enc_layers,
        )

    def _project(self, frames):
        frames = as_matrix(frames, dtype=self.dtype, name="frames")
        if frames.shape[1] != self.cfg.d_feat:
            raise InvalidArgument(f"frames have {frames.shape[1]} features, expected {self.cfg.d_feat}")
        return linear(frames, self.params["encoder.in.w"], self.params["encoder.in.b"])

    def encode_full(self, frames) -> np.ndarray:
        """Reference pass over all frames under the blockwise-causal mask."""
        b = self.cfg.block_size
        frames = np.asarray(frames)
        if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[0] % b:
            raise InvalidLength(f"frame count must be a positive multiple of block size {b}")
        x = self._project(frames)
        l = x.shape[0]
        hidden, _ = self.stack.forward(x, np.arange(l), build_blockwise_mask(l, b))
        return hidden

    def encode_segment(self, cache: EncoderCache, frames_block) -> np.ndarray:
        """Encode one new block against the cache and append its keys/values.

        Only the new block's projections are computed; its queries see every
        cached row and the whole new block, which is exactly the blockwise
        rule for the last block.
        """
        b = cache.block_size
        frames_block = np.asarray(frames_block)
        if frames_block.ndim != 2 or frames_block.shape[0] != b:
            raise InvalidBlock(f"block must have exactly {b} rows")
        x = self._project(frames_block)
        start = cache.rows
        past = list(zip(cache.keys, cache.values))
        mask = np.ones((b, start + b), dtype=bool)
        hidden, kv = self.stack.forward(x, np.arange(start, start + b), mask, past)
        cache.keys = [np.concatenate([pk, k]) for pk, (k, _) in zip(cache.keys, kv)]
        cache.values = [np.concatenate([pv, v]) for pv, (_, v) in zip(cache.values, kv)]
        cache.blocks_processed += 1
        return hidden


# --------------------------------------------------------------------------
# adapter
# --------------------------------------------------------------------------

@dataclass
class SpeechEmbeddings:
    """Adapter outputs so far with cumulative per-segment counts."""

    matrix: np.ndarray
    boundaries: list = field(default_factory=list)

    def extend(self, new_rows: np.ndarray) -> None:
        self.matrix = np.concatenate([self.matrix, new_rows]) if len(self.matrix) else new_rows
        self.boundaries.append(len(self.matrix))

    @property
    def segment_sizes(self) -> list[int]:
        return list(np.diff([0] + self.boundaries).astype(int))


class Adapter:
    """Two causal strided convolutions followed by a projection to the decoder width."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    def embedding_count(self, length: int) -> int:
        s = self.cfg.adapter_stride
        return (length // s) // s

    def adapt(self, all_states, prev_emb_count: int = 0) -> np.ndarray:
        """Embeddings for every encoder state so far, minus the ``prev_emb_count``
        already emitted. Causality makes the earlier rows reproduce exactly,
        so recomputing the cheap convolutions and slicing is safe."""
        p = self.params
        all_states = np.asarray(all_states, dtype=p["adapter.proj.w"].dtype)
        total = self.embedding_count(all_states.shape[0])
        if prev_emb_count > total:
            raise InvalidArgument(f"{prev_emb_count} embeddings already emitted but only {total} exist")
        if total == prev_emb_count:
            return np.zeros((0, self.cfg.d_model), dtype=all_states.dtype)
        s = self.cfg.adapter_stride
        x = gelu(causal_conv1d(all_states, p["adapter.conv0.w"], p["adapter.conv0.b"], s))
        x = gelu(causal_conv1d(x, p["adapter.conv1.w"], p["adapter.conv1.b"], s))
        return linear(x[prev_emb_count:], p["adapter.proj.w"], p["adapter.proj.b"])
