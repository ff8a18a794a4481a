"""Training losses and the training-time attention mask.

The contrastive loss pulls the speech embedding of each word towards the text
embedding of the same word. The second training stage teaches the decoder to
translate from partial audio with a mask that hides later segments from
earlier word groups; teacher-forced logits under that mask equal the logits
the incremental decoder produces at inference time.
"""

import numpy as np

from simulst import ModelConfig, Vocabulary, build_model
from simulst.losses import (
    Stage2MaskSpec,
    build_stage2_mask,
    group_words,
    sample_k,
    stage2_logit_equivalence,
    waco_loss,
    waco_loss_and_grad,
)
from simulst.tensor_core import finite_diff_grad, float64_mode

rng = np.random.default_rng(3)
speech = rng.standard_normal((12, 8))
text = rng.standard_normal((5, 8))
ws = group_words(speech, [(0, 4), (4, 7), (7, 12)])
wt = group_words(text, [(0, 2), (2, 3), (3, 5)])
loss, gs, _ = waco_loss_and_grad(ws, wt)
fd = finite_diff_grad(lambda x: waco_loss(x, wt), ws)
print(f"contrastive loss {loss:.4f}, analytic vs numeric gradient gap {np.abs(gs - fd).max():.1e}")

spec = Stage2MaskSpec.from_word_indices([2, 2, 2], range(4), k=1, n=2)
print(build_stage2_mask(spec).astype(int))

cfg = ModelConfig()
with float64_mode():
    model = build_model(cfg, seed=3, vocab=Vocabulary(cfg.vocab_size, one_token_per_word=True))
    k = sample_k([1, 2, 3], rng)
    dev = stage2_logit_equivalence(model.decoder, rng.standard_normal((6, cfg.d_model)), [2, 2, 2],
                                   [5, 6, 7, 8, 9], k=k, n=2)
print(f"k={k}: training vs inference logit gap {dev:.1e}")
