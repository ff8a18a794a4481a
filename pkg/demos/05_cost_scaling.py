"""Per-step cost with and without incremental computation.

Recomputing everything at each step costs work that grows with the stream,
so total work is quadratic. With cached encoder blocks and a cached decoder
the per-step cost grows only through attention over the history.
"""

import numpy as np

from simulst.bench import VARIANTS, bench_scaling
from simulst.metrics import fit_r2
from simulst.streaming import Clock

records = bench_scaling(num_segments=32, clock=Clock.uniform(1.0))
steps = np.arange(1, 33)
for v in VARIANTS:
    macs = [r.macs for r in records if r.variant == v]
    _, r2 = fit_r2(steps, macs, 1)
    quad, _ = fit_r2(steps, macs, 2)
    print(f"{v:26s} step 32 {macs[-1]:>11,d}  affine R2 {r2:.4f}  quadratic term {quad[0]:>9.1f}")
