"""End-to-end acceptance suite at pinned tolerances.

Each check prints exactly one pass/fail line to the real stdout so the
verdicts are visible in any pytest capture mode.
"""

import dataclasses
import time

import numpy as np
import pytest
from scipy import stats

from pmce.cli import main as cli_main
from pmce.enhancer import EnhancerConfig, forward, init_params
from pmce.episodic_eval import (
    Episode,
    EvalConfig,
    episode_predictions,
    evaluate,
    sample_episode,
)
from pmce.gradcheck import check_objective_gradients
from pmce.knowledge_bank import build_bank
from pmce.objectives import cross_entropy, rec_loss, supcon_loss
from pmce.prior_retrieval import PriorConfig, map_fuse, prior_weights, top_k
from pmce.synthetic import SynthConfig, generate
from pmce.trainer import TrainConfig, default_enhancer_config, train


_CAP = None


@pytest.fixture(autouse=True)
def _live_output(capfd):
    # verdict lines bypass capture so they show for passing tests too
    global _CAP
    _CAP = capfd
    yield
    _CAP = None


def verdict(num: int, ok: bool, detail: str) -> None:
    line = f"[accept {num:2d}] {'PASS' if ok else 'FAIL'} {detail}"
    with _CAP.disabled():
        print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def world():
    """Default synthetic store, bank, and one 50-epoch training run."""
    base, novel = generate(SynthConfig())
    bank = build_bank(base)
    enh_cfg = default_enhancer_config(base.d_v, base.d_t)
    t0 = time.time()
    trained, _, _ = train(base, bank, TrainConfig(seed=0), enh_cfg)
    train_secs = time.time() - t0
    untrained = init_params(enh_cfg, 0)
    return {
        "novel": novel,
        "bank": bank,
        "enh_cfg": enh_cfg,
        "trained": trained,
        "untrained": untrained,
        "train_secs": train_secs,
    }


def test_01_gradient_fidelity():
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        for t_tokens in (1, 3):
            errs = check_objective_gradients(seed=seed, t_tokens=t_tokens)
            worst = max(worst, max(errs.values()))
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 30.0
    verdict(
        1, ok,
        f"gradient fidelity: max rel err {worst:.2e} < 1e-4 over 20 seeds "
        f"x T in {{1,3}} in {elapsed:.1f}s (< 30s)",
    )


def test_02_map_convexity_and_limits():
    rng = np.random.default_rng(0)
    worst_excess = -np.inf
    for _ in range(1000):
        p = rng.normal(size=32)
        mu = rng.normal(size=32)
        t = rng.normal(size=32)
        alpha = float(rng.uniform())
        fused = map_fuse(p, mu, alpha)
        excess = np.linalg.norm(fused - t) - max(
            np.linalg.norm(p - t), np.linalg.norm(mu - t)
        )
        worst_excess = max(worst_excess, excess)
    endpoints_exact = np.array_equal(map_fuse(p, mu, 1.0), p) and np.array_equal(
        map_fuse(p, mu, 0.0), mu
    )
    ok = worst_excess <= 1e-12 and endpoints_exact
    verdict(
        2, ok,
        f"MAP convexity: worst distance excess {worst_excess:.2e} over 1000 "
        f"triples, endpoints exact: {endpoints_exact}",
    )


def test_03_retrieval_oracle_equivalence():
    rng = np.random.default_rng(1)
    grid = np.linspace(-1.0, 1.0, 9)  # coarse values force ties
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        scores = rng.choice(grid, size=n)
        k = int(rng.integers(1, n + 1))
        oracle = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
        mismatches += top_k(scores, k) != oracle
    sum_err, shift_err = 0.0, 0.0
    for _ in range(200):
        s = rng.uniform(-1.0, 1.0, size=int(rng.integers(1, 12)))
        w = prior_weights(s, 1.0)
        sum_err = max(sum_err, abs(float(w.sum()) - 1.0))
        shifted = prior_weights(s + float(rng.uniform(-5, 5)), 1.0)
        shift_err = max(shift_err, float(np.abs(w - shifted).max()))
    ok = mismatches == 0 and sum_err < 1e-9 and shift_err < 1e-12
    verdict(
        3, ok,
        f"retrieval oracle: {mismatches} top-k mismatches in 1000 tied draws, "
        f"weight sum err {sum_err:.1e}, shift err {shift_err:.1e}",
    )


def test_04_degenerate_enhancer_identities():
    rng = np.random.default_rng(2)
    worst_beta0, worst_t1 = 0.0, 0.0
    for trial in range(20):
        cfg = EnhancerConfig(d_v=8, d_t=6, h=2, d_k=4)
        params = init_params(cfg, trial)
        v = rng.normal(size=8)
        S = rng.normal(size=(3, 6))
        frozen = dataclasses.replace(params, beta=0.0)
        out, _ = forward(v, S, frozen, cfg)
        worst_beta0 = max(worst_beta0, float(np.abs(out - v).max()))

        single = rng.normal(size=(1, 6))
        ref, _ = forward(v, single, params, cfg)
        bumped = dataclasses.replace(
            params,
            W_q=params.W_q + 10.0 * rng.normal(size=params.W_q.shape),
            W_k=params.W_k + 10.0 * rng.normal(size=params.W_k.shape),
        )
        alt, _ = forward(v, single, bumped, cfg)
        worst_t1 = max(worst_t1, float(np.abs(alt - ref).max()))
    ok = worst_beta0 <= 1e-12 and worst_t1 <= 1e-12
    verdict(
        4, ok,
        f"degenerate identities: beta=0 deviation {worst_beta0:.1e}, T=1 "
        f"query/key invariance {worst_t1:.1e} (both <= 1e-12)",
    )


def test_05_loss_oracles():
    ce_err = 0.0
    for c in (2, 5, 10):
        logits = np.full((4, c), 0.7)
        loss, _ = cross_entropy(logits, np.zeros(4, dtype=np.int64))
        ce_err = max(ce_err, abs(loss - np.log(c)))
    row = np.array([0.3, -1.2, 0.8, 0.05])
    con, _ = supcon_loss(np.tile(row, (4, 1)), np.zeros(4, dtype=np.int64), 0.1)
    con_err = abs(con - np.log(3.0))
    targets = np.random.default_rng(3).normal(size=(6, 5))
    rec, _ = rec_loss(targets.copy(), targets)
    ok = ce_err < 1e-9 and con_err < 1e-9 and rec == 0.0
    verdict(
        5, ok,
        f"loss oracles: CE uniform err {ce_err:.1e}, contrastive ln3 err "
        f"{con_err:.1e}, reconstruction fixed point {rec}",
    )


def test_06_ablation_trend(world):
    t0 = time.time()

    def run(use_map, es, eq, params):
        cfg = EvalConfig(
            episodes=600, seed=0, use_map=use_map,
            enhance_support=es, enhance_query=eq,
        )
        report = evaluate(
            world["novel"], world["bank"], params, world["enh_cfg"], cfg
        )
        return np.asarray(report.accuracies)

    base = run(False, False, False, world["untrained"])
    mapped = run(True, False, False, world["untrained"])
    enhanced = run(False, True, True, world["trained"])
    full = run(True, True, True, world["trained"])
    in_window = 0.55 <= base.mean() <= 0.75

    def gain(a, b):
        diff = float(np.mean(a - b))
        p = float(stats.ttest_rel(a, b, alternative="greater").pvalue)
        return diff, p

    pairs = [gain(mapped, base), gain(enhanced, base),
             gain(full, mapped), gain(full, enhanced)]
    elapsed = world["train_secs"] + (time.time() - t0)
    ok = (
        in_window
        and all(d > 0 and p < 0.05 for d, p in pairs)
        and elapsed < 300.0
    )
    verdict(
        6, ok,
        f"ablation trend: base {base.mean():.3f} (in 0.55-0.75: {in_window}), "
        f"map {mapped.mean():.3f}, enhance {enhanced.mean():.3f}, "
        f"full {full.mean():.3f}; worst p {max(p for _, p in pairs):.1e} "
        f"over 600 paired episodes in {elapsed:.0f}s (< 300s)",
    )


def test_07_shot_dependent_alpha(world):
    grid = np.round(np.arange(0.1, 1.0, 0.1), 1)
    best = {}
    for k_shot in (1, 5):
        accs = []
        for alpha in grid:
            # nearest-prototype keeps the 18-point sweep fast
            cfg = EvalConfig(
                episodes=300, seed=0, k_shot=k_shot, classifier="EU",
                use_map=True, enhance_support=False, enhance_query=False,
                prior=PriorConfig(alpha=float(alpha)),
            )
            accs.append(
                evaluate(
                    world["novel"], world["bank"], world["untrained"],
                    world["enh_cfg"], cfg,
                ).mean
            )
        best[k_shot] = float(grid[int(np.argmax(accs))])
    ok = best[1] < best[5]
    verdict(
        7, ok,
        f"shot-dependent alpha: best 1-shot alpha {best[1]} < best 5-shot "
        f"alpha {best[5]} over a 0.1..0.9 grid, 300 episodes per point",
    )


def test_08_inductive_contract(world):
    rng = np.random.default_rng(4)
    checked, violations = 0, 0
    for clf in ("LR", "EU", "CO"):
        cfg = EvalConfig(episodes=1, seed=6, classifier=clf, m_query=6)
        for i in range(50):
            ep = sample_episode(world["novel"], cfg, i)
            full_preds, _ = episode_predictions(
                ep, world["bank"], world["trained"], world["enh_cfg"], cfg
            )
            n, m = cfg.n_way, cfg.m_query
            keep = np.stack(
                [np.delete(np.arange(m), rng.integers(m)) for _ in range(n)]
            )
            sub = dataclasses.replace(
                ep,
                query_visual=np.stack(
                    [ep.query_visual[c, keep[c]] for c in range(n)]
                ),
                query_caption=np.stack(
                    [ep.query_caption[c, keep[c]] for c in range(n)]
                ),
                query_indices=np.stack(
                    [ep.query_indices[c, keep[c]] for c in range(n)]
                ),
            )
            sub_preds, _ = episode_predictions(
                sub, world["bank"], world["trained"], world["enh_cfg"], cfg
            )
            survivors = np.stack(
                [full_preds.reshape(n, m)[c, keep[c]] for c in range(n)]
            )
            violations += int((sub_preds.reshape(n, m - 1) != survivors).any())
            checked += 1
    ok = violations == 0 and checked == 150
    verdict(
        8, ok,
        f"inductive contract: {violations} prediction changes after query "
        f"removal across {checked} episode checks (50 per classifier)",
    )


def test_09_determinism(tmp_path):
    store, bank = tmp_path / "store", tmp_path / "bank"
    assert cli_main([
        "synth", "--out", str(store), "--n-base", "12", "--n-novel", "8",
        "--per-class", "24", "--d-v", "16", "--d-t", "8", "--d-s", "4",
        "--seed", "5",
    ]) == 0
    assert cli_main(["bank", "--store", str(store), "--out", str(bank)]) == 0

    ckpts = []
    for name in ("a.bin", "b.bin"):
        assert cli_main([
            "train", "--store", str(store), "--bank", str(bank),
            "--out", str(tmp_path / name), "--epochs", "2", "--seed", "3",
        ]) == 0
        ckpts.append((tmp_path / name).read_bytes())
    train_same = ckpts[0] == ckpts[1]

    reports = []
    for jobs in ("1", "8"):
        out = tmp_path / f"report{jobs}.json"
        assert cli_main([
            "eval", "--store", str(store), "--bank", str(bank),
            "--checkpoint", str(tmp_path / "a.bin"), "--episodes", "96",
            "--seed", "0", "--k", "5", "--jobs", jobs, "--out", str(out),
        ]) == 0
        reports.append(out.read_bytes())
    eval_same = reports[0] == reports[1]
    ok = train_same and eval_same
    verdict(
        9, ok,
        f"determinism: repeated train checkpoints identical: {train_same}, "
        f"eval --jobs 1 vs --jobs 8 reports byte-identical: {eval_same}",
    )


def test_10_classifier_parity(world):
    means = {}
    for clf in ("LR", "EU", "CO"):
        cfg = EvalConfig(episodes=600, seed=0, classifier=clf)
        means[clf] = evaluate(
            world["novel"], world["bank"], world["trained"],
            world["enh_cfg"], cfg,
        ).mean
    spread = max(means.values()) - min(means.values())
    ok = spread <= 0.05
    verdict(
        10, ok,
        f"classifier parity: LR {means['LR']:.3f}, EU {means['EU']:.3f}, "
        f"CO {means['CO']:.3f}; spread {100 * spread:.2f} points <= 5",
    )
