"""How the best prior-fusion weight depends on the shot count.

Sweeps the fusion weight alpha for 1-shot and 5-shot episodes: with one
support sample the prototype is noisy and leans on the retrieved prior
(small alpha); with five samples the empirical mean deserves more weight.

Usage: python demos/alpha_sweep.py
"""

import numpy as np

from pmce import (
    EvalConfig,
    PriorConfig,
    SynthConfig,
    build_bank,
    default_enhancer_config,
    evaluate,
    generate,
    init_params,
)

base, novel = generate(SynthConfig())
bank = build_bank(base)
enh_cfg = default_enhancer_config(base.d_v, base.d_t)
params = init_params(enh_cfg, 0)

grid = np.round(np.arange(0.1, 1.0, 0.1), 1)
print("alpha  " + "  ".join(f"{a:.1f}" for a in grid))
for k_shot in (1, 5):
    accs = []
    for alpha in grid:
        cfg = EvalConfig(
            episodes=150, seed=0, k_shot=k_shot, classifier="EU",
            use_map=True, enhance_support=False, enhance_query=False,
            prior=PriorConfig(alpha=float(alpha)),
        )
        accs.append(evaluate(novel, bank, params, enh_cfg, cfg).mean)
    best = grid[int(np.argmax(accs))]
    line = "  ".join(f"{100 * a:.0f}%" for a in accs)
    print(f"{k_shot}-shot {line}   best alpha: {best}")
