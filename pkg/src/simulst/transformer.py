"""Pre-norm transformer stack shared by the encoder and the decoder.

The same code path serves full-sequence passes and cached incremental passes:
callers pass the cached keys/values of earlier rows plus a mask whose rows are
the new queries and whose columns are ``cached rows + new rows``.
"""

from __future__ import annotations

import numpy as np

from .tensor_core import (
    RotaryTable,
    apply_rope_heads,
    gelu,
    layer_norm,
    linear,
    multi_head_attention,
)


class TransformerStack:
    def __init__(self, params: dict, prefix: str, n_layers: int, n_heads: int, rope: RotaryTable):
        self.params = params
        self.prefix = prefix
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.rope = rope

    def _p(self, i, name):
        return self.params[f"{self.prefix}.layers.{i}.{name}"]

    def forward(self, x, positions, mask, past=None):
        """Run all layers over the new rows ``x``.

        Returns ``(hidden, kv)`` where ``hidden`` is the final-normed output
        for the new rows and ``kv[i] = (keys, values)`` are layer ``i``'s
        rotated keys and values for the new rows only.
        """
        kv = []
        for i in range(self.n_layers):
            h = layer_norm(x, self._p(i, "ln1.g"), self._p(i, "ln1.b"))
            q = apply_rope_heads(linear(h, self._p(i, "attn.wq")), positions, self.rope, self.n_heads)
            k = apply_rope_heads(linear(h, self._p(i, "attn.wk")), positions, self.rope, self.n_heads)
            v = linear(h, self._p(i, "attn.wv"))
            kv.append((k, v))
            if past is not None and past[i][0].shape[0]:
                k_all = np.concatenate([past[i][0], k])
                v_all = np.concatenate([past[i][1], v])
            else:
                k_all, v_all = k, v
            attn = multi_head_attention(q, k_all, v_all, mask, self.n_heads)
            x = x + linear(attn, self._p(i, "attn.wo"))
            h = layer_norm(x, self._p(i, "ln2.g"), self._p(i, "ln2.b"))
            h = gelu(linear(h, self._p(i, "ffn.w1"), self._p(i, "ffn.b1")))
            x = x + linear(h, self._p(i, "ffn.w2"), self._p(i, "ffn.b2"))
        hidden = layer_norm(x, self.params[f"{self.prefix}.ln_f.g"], self.params[f"{self.prefix}.ln_f.b"])
        return hidden, kv
