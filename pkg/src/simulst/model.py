from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .decoder import Decoder, Vocabulary
from .encoder import Adapter, Encoder, FeatureExtractor
from .errors import InvalidConfig
from .tensor_core import default_dtype
from .weights import init_weights, parameter_shapes


class SpeechTranslator:
    """Feature extractor, encoder, adapter and decoder sharing one parameter dict."""

    def __init__(self, cfg: ModelConfig, params: dict, vocab: Vocabulary | None = None, dtype=None):
        dtype = dtype or default_dtype()
        shapes = parameter_shapes(cfg)
        missing = set(shapes) - set(params)
        if missing:
            raise InvalidConfig(f"missing parameters: {sorted(missing)[:5]}")
        for name, shape in shapes.items():
            if tuple(np.shape(params[name])) != shape:
                raise InvalidConfig(f"parameter {name} has shape {np.shape(params[name])}, expected {shape}")
        self.cfg = cfg
        self.dtype = dtype
        self.params = {name: np.asarray(params[name], dtype=dtype) for name in shapes}
        self.vocab = vocab or Vocabulary(cfg.vocab_size)
        self.extractor = FeatureExtractor(cfg, self.params)
        self.encoder = Encoder(cfg, self.params)
        self.adapter = Adapter(cfg, self.params)
        self.decoder = Decoder(cfg, self.params, self.vocab)

    def force_token(self, token: int, margin: float = 1e4) -> "SpeechTranslator":
        """Bias the output layer so greedy decoding always picks ``token``."""
        self.params["decoder.out.b"][token] += self.dtype(margin)
        return self

    def suppress_token(self, token: int, margin: float = 1e4) -> "SpeechTranslator":
        self.params["decoder.out.b"][token] -= self.dtype(margin)
        return self


def build_model(cfg: ModelConfig | None = None, seed: int = 0, vocab: Vocabulary | None = None,
                params: dict | None = None, dtype=None) -> SpeechTranslator:
    cfg = cfg or ModelConfig()
    if params is None:
        params = init_weights(cfg, seed)
    return SpeechTranslator(cfg, params, vocab, dtype)
