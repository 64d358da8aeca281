"""Smallest end-to-end run: synthesize, bank, train, evaluate.

Usage: python demos/quickstart.py
"""

from pmce import (
    EvalConfig,
    SynthConfig,
    TrainConfig,
    build_bank,
    default_enhancer_config,
    evaluate,
    generate,
    init_params,
    train,
)

cfg = SynthConfig(n_base=12, n_novel=8, per_class=30, d_v=16, d_t=8, d_s=4, seed=0)
base, novel = generate(cfg)
bank = build_bank(base)
print(f"store: {base.num_records} base / {novel.num_records} novel records, "
      f"bank of {bank.num_classes} class means")

enh_cfg = default_enhancer_config(base.d_v, base.d_t)
params, _, log = train(base, bank, TrainConfig(epochs=10, seed=0), enh_cfg)
first, last = log.entries[0], log.entries[-1]
print(f"trained 10 epochs: loss {first['total']:.3f} -> {last['total']:.3f}")

baseline = EvalConfig(
    episodes=100, seed=0, use_map=False, enhance_support=False, enhance_query=False
)
full = EvalConfig(episodes=100, seed=0, prior=baseline.prior)
plain = evaluate(novel, bank, init_params(enh_cfg, 0), enh_cfg, baseline)
piped = evaluate(novel, bank, params, enh_cfg, full)
print("5-way 1-shot over 100 episodes:")
print(f"  plain prototypes  {100 * plain.mean:5.2f} +/- {100 * plain.ci95_half_width:.2f}")
print(f"  full pipeline     {100 * piped.mean:5.2f} +/- {100 * piped.ci95_half_width:.2f}")
