from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import InvalidConfig


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and hyperparameters of the toy encoder-adapter-decoder model.

    ``block_size`` is the number of encoder frames per speech segment. The
    feature extractor is a stack of causal convolutions given as
    ``(kernel, stride)`` pairs; one segment holds
    ``block_size * extractor_stride`` raw samples.
    """

    d_feat: int = 32
    d_enc: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    enc_ffn: int = 256
    block_size: int = 8
    extractor_convs: tuple = ((8, 4), (4, 4))
    adapter_kernel: int = 3
    adapter_stride: int = 2
    d_adapter: int = 64
    d_model: int = 64
    dec_layers: int = 2
    dec_heads: int = 4
    dec_ffn: int = 256
    vocab_size: int = 32
    max_position: int = 4096
    rope_base: float = 10000.0

    def __post_init__(self):
        object.__setattr__(self, "extractor_convs", tuple(tuple(c) for c in self.extractor_convs))
        for name in ("d_feat", "d_enc", "enc_layers", "enc_heads", "enc_ffn", "block_size",
                     "adapter_kernel", "adapter_stride", "d_adapter", "d_model", "dec_layers",
                     "dec_heads", "dec_ffn", "max_position"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.vocab_size < 4:
            raise InvalidConfig("vocab_size must be >= 4")
        if not self.extractor_convs:
            raise InvalidConfig("feature extractor needs at least one convolution")
        for w, s in self.extractor_convs:
            if w < 1 or s < 1:
                raise InvalidConfig("extractor kernel and stride must be >= 1")
        for width, heads, label in ((self.d_enc, self.enc_heads, "encoder"),
                                    (self.d_model, self.dec_heads, "decoder")):
            if width % heads:
                raise InvalidConfig(f"{label} width {width} not divisible by {heads} heads")
            if (width // heads) % 2:
                raise InvalidConfig(f"{label} head_dim must be even for rotary embedding")

    @property
    def extractor_stride(self) -> int:
        total = 1
        for _, s in self.extractor_convs:
            total *= s
        return total

    @property
    def segment_samples(self) -> int:
        return self.block_size * self.extractor_stride

    @property
    def enc_head_dim(self) -> int:
        return self.d_enc // self.enc_heads

    @property
    def dec_head_dim(self) -> int:
        return self.d_model // self.dec_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor_convs"] = [list(c) for c in self.extractor_convs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
