import dataclasses
import json

import numpy as np
import pytest

from pmce.enhancer import EnhancerConfig, init_params
from pmce.episodic_eval import (
    Episode,
    EvalConfig,
    aggregate_report,
    aggregate_support_semantics,
    classify_lr,
    classify_nearest,
    episode_predictions,
    evaluate,
    fit_lr,
    run_episode,
    sample_episode,
)
from pmce.knowledge_bank import build_bank
from pmce.prior_retrieval import PriorConfig
from pmce.synthetic import SynthConfig, generate

SMALL = SynthConfig(
    n_base=10, n_novel=8, per_class=20, d_v=16, d_t=8, d_s=4, sigma_vis=0.5, seed=3
)


@pytest.fixture(scope="module")
def world():
    base, novel = generate(SMALL)
    bank = build_bank(base)
    enh_cfg = EnhancerConfig(d_v=SMALL.d_v, d_t=SMALL.d_t, h=4)
    params = init_params(enh_cfg, 0)
    return base, novel, bank, params, enh_cfg


class TestEvalConfig:
    def test_rejects_bad_classifier(self):
        with pytest.raises(ValueError, match="classifier"):
            EvalConfig(classifier="SVM")

    def test_rejects_bad_retrieval_cue(self):
        with pytest.raises(ValueError, match="retrieval_cue"):
            EvalConfig(retrieval_cue="caption")

    def test_rejects_negative_l2(self):
        with pytest.raises(ValueError, match="lr_l2"):
            EvalConfig(lr_l2=-0.5)

    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ValueError):
            EvalConfig(n_way=0)
        with pytest.raises(ValueError):
            EvalConfig(episodes=0)

    def test_to_dict_nests_prior(self):
        d = EvalConfig(prior=PriorConfig(k=3)).to_dict()
        assert d["prior"]["k"] == 3
        assert d["n_way"] == 5


class TestSampleEpisode:
    def test_support_query_disjoint_and_counts(self, world):
        _, novel, *_ = world
        cfg = EvalConfig(n_way=5, k_shot=2, m_query=4, episodes=1, seed=7)
        for i in range(10):
            ep = sample_episode(novel, cfg, i)
            sup = set(ep.support_indices.ravel().tolist())
            qry = set(ep.query_indices.ravel().tolist())
            assert not sup & qry
            assert ep.support_visual.shape == (5, 2, SMALL.d_v)
            assert ep.query_visual.shape == (5, 4, SMALL.d_v)
            # every drawn record really belongs to its row's class
            for row, c in enumerate(ep.class_ids):
                assert (novel.class_ids[ep.support_indices[row]] == c).all()
                assert (novel.class_ids[ep.query_indices[row]] == c).all()

    def test_same_seed_index_is_identical(self, world):
        _, novel, *_ = world
        cfg = EvalConfig(k_shot=1, m_query=3, episodes=1, seed=11)
        a = sample_episode(novel, cfg, 4)
        b = sample_episode(novel, cfg, 4)
        assert (a.class_ids == b.class_ids).all()
        assert a.support_visual.tobytes() == b.support_visual.tobytes()
        assert a.query_indices.tobytes() == b.query_indices.tobytes()
        c = sample_episode(novel, cfg, 5)
        assert a.query_indices.tobytes() != c.query_indices.tobytes()

    def test_class_frequency_within_binomial_bound(self):
        # 1000 draws of 5 from 20 classes: count ~ Binomial(1000, 1/4)
        scfg = dataclasses.replace(SMALL, n_novel=20, per_class=16)
        _, novel = generate(scfg)
        cfg = EvalConfig(n_way=5, k_shot=1, m_query=15, episodes=1, seed=13)
        counts = np.zeros(20)
        for i in range(1000):
            ep = sample_episode(novel, cfg, i)
            counts[ep.class_ids] += 1
        p = 5 / 20
        sigma = np.sqrt(1000 * p * (1 - p))
        assert (np.abs(counts - 1000 * p) <= 3 * sigma).all()

    def test_too_few_classes_rejected(self, world):
        _, novel, *_ = world
        cfg = EvalConfig(n_way=9, episodes=1)
        with pytest.raises(ValueError, match="classes"):
            sample_episode(novel, cfg, 0)

    def test_too_few_records_rejected(self, world):
        _, novel, *_ = world
        cfg = EvalConfig(n_way=5, k_shot=5, m_query=16, episodes=1)
        with pytest.raises(ValueError, match="records"):
            sample_episode(novel, cfg, 0)


class TestAggregateSupportSemantics:
    def test_single_row_returned_as_is(self):
        row = np.array([[1.5, -2.0, 0.25]])
        np.testing.assert_array_equal(aggregate_support_semantics(row), row[0])

    def test_two_row_mean(self):
        mat = np.array([[0.0, 2.0], [2.0, 0.0]])
        np.testing.assert_array_equal(aggregate_support_semantics(mat), [1.0, 1.0])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        mat = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        np.testing.assert_allclose(
            aggregate_support_semantics(mat),
            aggregate_support_semantics(mat[perm]),
            atol=1e-15,
        )

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            aggregate_support_semantics(np.zeros(3))


class TestFitLr:
    def test_separable_prototypes(self):
        P = np.array([[1.0, 0.0], [-1.0, 0.0]])
        preds = classify_lr(P, np.array([[0.9, 0.0]]))
        assert preds.tolist() == [0]

    def test_gradient_at_convergence(self):
        # optimality: returned W satisfies the first-order condition
        rng = np.random.default_rng(17)
        X = rng.normal(size=(5, 8))
        y = np.arange(5)
        l2 = 1.0
        W, converged = fit_lr(X, y, 5, l2)
        assert converged
        logits = X @ W
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        onehot = np.eye(5)
        g = X.T @ (probs - onehot) + l2 * W
        assert np.abs(g).max() < 1e-6

    def test_midpoint_probabilities_are_half(self):
        P = np.array([[-1.0, 0.0], [1.0, 0.0]])
        W, _ = fit_lr(P, np.arange(2), 2, 1.0)
        logits = np.array([[0.0, 0.0]]) @ W
        e = np.exp(logits - logits.max())
        probs = e / e.sum()
        assert abs(probs[0, 0] - 0.5) < 1e-6
        # tie at the midpoint breaks to the lower class index
        assert classify_lr(P, np.array([[0.0, 0.0]])).tolist() == [0]

    def test_single_prototype_rejected(self):
        with pytest.raises(ValueError, match="2 prototypes"):
            classify_lr(np.ones((1, 3)), np.ones((2, 3)))

    def test_nonconvergence_warns_and_reports(self):
        # l2 = 0 on separable data: gradient decays only logarithmically
        X = np.array([[2.0, 0.0], [-2.0, 0.0]])
        with pytest.warns(UserWarning, match="1000 iterations"):
            W, converged = fit_lr(X, np.arange(2), 2, 0.0)
        assert not converged
        assert np.isfinite(W).all()


class TestClassifyNearest:
    def test_query_equal_to_prototype(self):
        P = np.array([[3.0, 1.0], [-2.0, 5.0]])
        for metric in ("EU", "CO"):
            assert classify_nearest(P, P.copy(), metric).tolist() == [0, 1]

    def test_eu_co_disagree_on_constructed_case(self):
        P = np.array([[10.0, 0.0], [0.0, 1.0]])
        q = np.array([[1.0, 1.0]])
        # EU: distances 1 (class 1) vs sqrt(82) (class 0)
        assert classify_nearest(P, q, "EU").tolist() == [1]
        # CO: both cosines equal 1/sqrt(2); tie goes to class 0
        sims = (q @ P.T) / (np.linalg.norm(q) * np.linalg.norm(P, axis=1))
        np.testing.assert_allclose(sims, 1 / np.sqrt(2), atol=1e-12)
        assert classify_nearest(P, q, "CO").tolist() == [0]

    def test_eu_tie_breaks_to_lower_index(self):
        P = np.array([[-1.0, 0.0], [1.0, 0.0]])
        q = np.array([[0.0, 0.5]])  # both squared distances exactly 1.25
        assert classify_nearest(P, q, "EU").tolist() == [0]

    def test_co_scale_invariance(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            P = rng.normal(size=(4, 6))
            Q = rng.normal(size=(9, 6))
            base = classify_nearest(P, Q, "CO")
            assert (classify_nearest(P, 3.7 * Q, "CO") == base).all()

    def test_zero_vector_rejected_under_co(self):
        P = np.array([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="zero"):
            classify_nearest(P, np.zeros((1, 2)), "CO")
        with pytest.raises(ValueError, match="zero"):
            classify_nearest(np.zeros((2, 2)), np.ones((1, 2)), "CO")

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError, match="metric"):
            classify_nearest(np.ones((2, 2)), np.ones((1, 2)), "L1")


class TestAggregateReport:
    def test_all_equal_gives_zero_half_width(self):
        r = aggregate_report([0.6, 0.6, 0.6])
        assert r.mean == 0.6
        assert r.ci95_half_width == 0.0

    def test_two_point_oracle(self):
        r = aggregate_report([0.8, 1.0])
        assert abs(r.mean - 0.9) < 1e-12
        # 1.96 * std([0.8, 1.0], ddof=1) / sqrt(2) = 1.96 * 0.1
        assert abs(r.ci95_half_width - 0.196) < 1e-9

    def test_mean_within_range(self):
        rng = np.random.default_rng(29)
        acc = rng.uniform(size=50)
        r = aggregate_report(acc)
        assert acc.min() <= r.mean <= acc.max()

    def test_fewer_than_two_rejected(self):
        with pytest.raises(ValueError):
            aggregate_report([1.0])

    def test_report_serialization(self, tmp_path):
        r = aggregate_report([0.5, 0.7, 0.9])
        payload = json.loads(r.to_json())
        assert payload["mean"] == r.mean
        assert payload["accuracies"] == [0.5, 0.7, 0.9]
        path = tmp_path / "report.json"
        r.save(path)
        assert json.loads(path.read_text()) == payload
        csv = r.accuracies_csv()
        assert csv.splitlines()[0] == "episode,accuracy"
        assert len(csv.splitlines()) == 4


def baseline_cfg(**kw):
    merged = dict(
        episodes=1, seed=0, use_map=False, enhance_support=False, enhance_query=False
    )
    merged.update(kw)
    return EvalConfig(**merged)


class TestRunEpisode:
    def test_baseline_matches_prototypical_oracle(self, world):
        # flags off + EU must equal an independently coded nearest-mean rule
        _, novel, bank, params, enh_cfg = world
        cfg = baseline_cfg(classifier="EU")
        for i in range(10):
            ep = sample_episode(novel, cfg, i)
            protos = ep.support_visual.mean(axis=1)
            correct = 0
            for c in range(cfg.n_way):
                for m in range(cfg.m_query):
                    d2 = ((protos - ep.query_visual[c, m]) ** 2).sum(axis=1)
                    correct += int(np.argmin(d2) == c)
            oracle = correct / (cfg.n_way * cfg.m_query)
            assert run_episode(ep, bank, params, enh_cfg, cfg) == oracle

    def test_beta_zero_makes_enhance_flags_inert(self, world):
        _, novel, bank, params, enh_cfg = world
        frozen = dataclasses.replace(params, beta=0.0)
        accs = set()
        for es in (False, True):
            for eq in (False, True):
                cfg = baseline_cfg(enhance_support=es, enhance_query=eq)
                ep = sample_episode(novel, cfg, 2)
                accs.add(run_episode(ep, bank, frozen, enh_cfg, cfg))
        assert len(accs) == 1

    def test_well_separated_classes_reach_perfect_accuracy(self, world):
        *_, params, enh_cfg = world
        scfg = dataclasses.replace(SMALL, sigma_vis=0.001, seed=9)
        base, novel = generate(scfg)
        bank = build_bank(base)
        cfg = baseline_cfg(classifier="EU")
        ep = sample_episode(novel, cfg, 0)
        assert run_episode(ep, bank, params, enh_cfg, cfg) == 1.0

    def test_ablation_lattice_all_execute(self, world):
        _, novel, bank, params, enh_cfg = world
        for um in (False, True):
            for es in (False, True):
                for eq in (False, True):
                    cfg = EvalConfig(
                        episodes=2,
                        seed=1,
                        use_map=um,
                        enhance_support=es,
                        enhance_query=eq,
                        prior=PriorConfig(k=5),
                    )
                    r = evaluate(novel, bank, params, enh_cfg, cfg)
                    assert 0.0 <= r.mean <= 1.0
                    assert r.config["use_map"] == um
                    assert r.config["enhance_support"] == es
                    assert r.config["enhance_query"] == eq

    def test_alpha_one_reduces_to_classical(self, world):
        # alpha = 1 keeps p_init exactly, so MAP on/off must agree bitwise
        _, novel, bank, params, enh_cfg = world
        for clf in ("LR", "EU", "CO"):
            plain = baseline_cfg(episodes=4, classifier=clf)
            mapped = EvalConfig(
                episodes=4,
                seed=0,
                classifier=clf,
                use_map=True,
                enhance_support=False,
                enhance_query=False,
                prior=PriorConfig(k=5, alpha=1.0),
            )
            a = evaluate(novel, bank, params, enh_cfg, plain)
            b = evaluate(novel, bank, params, enh_cfg, mapped)
            assert a.accuracies == b.accuracies

    def test_query_removal_leaves_other_predictions_unchanged(self, world):
        # inductive contract: drop one query per class, survivors keep labels
        _, novel, bank, params, enh_cfg = world
        rng = np.random.default_rng(31)
        for clf in ("LR", "EU", "CO"):
            cfg = EvalConfig(episodes=1, seed=5, classifier=clf, m_query=6)
            for i in range(5):
                ep = sample_episode(novel, cfg, i)
                full_preds, _ = episode_predictions(ep, bank, params, enh_cfg, cfg)
                n, m = cfg.n_way, cfg.m_query
                drop = rng.integers(0, m, size=n)
                keep = np.stack([np.delete(np.arange(m), d) for d in drop])
                sub = Episode(
                    class_ids=ep.class_ids,
                    name_embs=ep.name_embs,
                    support_visual=ep.support_visual,
                    support_caption=ep.support_caption,
                    query_visual=np.stack(
                        [ep.query_visual[c, keep[c]] for c in range(n)]
                    ),
                    query_caption=np.stack(
                        [ep.query_caption[c, keep[c]] for c in range(n)]
                    ),
                    support_indices=ep.support_indices,
                    query_indices=np.stack(
                        [ep.query_indices[c, keep[c]] for c in range(n)]
                    ),
                )
                sub_preds, _ = episode_predictions(sub, bank, params, enh_cfg, cfg)
                survivors = np.stack(
                    [full_preds.reshape(n, m)[c, keep[c]] for c in range(n)]
                )
                assert (sub_preds.reshape(n, m - 1) == survivors).all()

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_lr_on_supports_variant(self, world):
        _, novel, bank, params, enh_cfg = world
        cfg = EvalConfig(episodes=2, seed=3, k_shot=2, lr_on_supports=True)
        r = evaluate(novel, bank, params, enh_cfg, cfg)
        assert 0.0 <= r.mean <= 1.0

    def test_visual_retrieval_cue_variant(self, world):
        _, novel, bank, params, enh_cfg = world
        cfg = EvalConfig(
            episodes=2, seed=3, retrieval_cue="visual", prior=PriorConfig(k=5)
        )
        r = evaluate(novel, bank, params, enh_cfg, cfg)
        assert 0.0 <= r.mean <= 1.0


class TestEvaluate:
    def test_parallel_matches_serial_bytewise(self, world):
        _, novel, bank, params, enh_cfg = world
        cfg = EvalConfig(episodes=12, seed=2, prior=PriorConfig(k=5))
        serial = evaluate(novel, bank, params, enh_cfg, cfg, jobs=1)
        parallel = evaluate(novel, bank, params, enh_cfg, cfg, jobs=3)
        assert serial.to_json() == parallel.to_json()

    def test_same_seed_reproduces_report(self, world):
        _, novel, bank, params, enh_cfg = world
        cfg = EvalConfig(episodes=6, seed=4, prior=PriorConfig(k=5))
        a = evaluate(novel, bank, params, enh_cfg, cfg)
        b = evaluate(novel, bank, params, enh_cfg, cfg)
        assert a.to_json() == b.to_json()
        c = evaluate(
            novel, bank, params, enh_cfg, dataclasses.replace(cfg, seed=40)
        )
        assert a.accuracies != c.accuracies

    def test_bad_jobs_rejected(self, world):
        _, novel, bank, params, enh_cfg = world
        cfg = EvalConfig(episodes=2)
        with pytest.raises(ValueError, match="jobs"):
            evaluate(novel, bank, params, enh_cfg, cfg, jobs=0)
