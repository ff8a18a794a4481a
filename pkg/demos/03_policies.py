"""Wait-k-stride-n and hold-n sessions with a simulated clock.

The clock charges each operation by its multiply-accumulate count, so a WRITE
is stamped with the audio received so far plus the computation spent. The
event logs below are fully reproducible.
"""

import numpy as np

from simulst import Clock, ModelConfig, PolicyConfig, Vocabulary, build_model, run_hold_n, run_wait_k_stride_n
from simulst.metrics import delays_from_log, laal

cfg = ModelConfig()
model = build_model(cfg, seed=2, vocab=Vocabulary(cfg.vocab_size, one_token_per_word=True))
model.suppress_token(model.vocab.eos)
rng = np.random.default_rng(2)
stream = [rng.standard_normal(cfg.segment_samples) for _ in range(5)]

res = run_wait_k_stride_n(model, stream, PolicyConfig(k=2, n=2, max_tokens_per_write=6), Clock.uniform(5.0))
for ev in res.log:
    print(type(ev).__name__, ev)
profile = delays_from_log(res.log)
print(f"LAAL {laal(profile):.1f} ms, computation-aware {laal(profile, 'ca'):.1f} ms")

# Hold-n re-decodes after every segment and keeps all but the last n tokens.
held = run_hold_n(model, stream, PolicyConfig(kind="hold_n", n=2, max_tokens_per_write=6), Clock.uniform(5.0))
for hyp in held.hypotheses:
    print("hypothesis", hyp)
print("committed", held.tokens)
