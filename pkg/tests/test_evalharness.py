import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainet import evalharness as eh
from brainet.data import derive_seed
from brainet.synthetic import collider_blocks, noisy_chain_net, two_moons


def outcomes(scores, positives):
    return eh.ScoredBinaryOutcomes(
        scores=np.asarray(scores, float), positives=np.asarray(positives, bool)
    )


def brute_roc(scores, positives):
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    total = 0.0
    for sp in pos:
        for sn in neg:
            total += 1.0 if sp > sn else (0.5 if sp == sn else 0.0)
    return total / (len(pos) * len(neg))


def brute_threshold_metrics(scores, positives):
    """Exhaustive threshold sweep: returns (pr_auc, fpr@95, detection_error)."""
    scores = np.asarray(scores, float)
    positives = np.asarray(positives, bool)
    n_pos, n_neg = positives.sum(), (~positives).sum()
    pairs = []
    for t in sorted(set(scores), reverse=True):
        predicted = scores >= t
        tp = (predicted & positives).sum()
        fp = (predicted & ~positives).sum()
        pairs.append((tp / n_pos, tp / (tp + fp), fp / n_neg))
    ap, prev_recall = 0.0, 0.0
    for recall, precision, _ in pairs:
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    fprs = [fpr for recall, _, fpr in pairs if recall >= 0.95]
    det = min(
        [0.5 * (1 - r) + 0.5 * f for r, _, f in pairs] + [0.5]
    )
    return ap, min(fprs), det


class TestRocAuc:
    def test_perfect_separation(self):
        assert eh.roc_auc(outcomes([1, 2, 3, 4], [0, 0, 1, 1])) == 1.0

    def test_all_ties(self):
        assert eh.roc_auc(outcomes([5, 5, 5, 5], [0, 1, 0, 1])) == 0.5

    def test_four_point_case(self):
        o = outcomes([0.1, 0.4, 0.35, 0.8], [False, False, True, True])
        assert eh.roc_auc(o) == pytest.approx(0.75)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            outcomes([1, 2], [1, 1])

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(deadline=None, max_examples=40)
    def test_matches_pairwise_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        scores = rng.integers(0, 6, n).astype(float)  # ties likely
        positives = rng.random(n) < 0.5
        if positives.all() or not positives.any():
            return
        assert eh.roc_auc(outcomes(scores, positives)) == pytest.approx(
            brute_roc(scores, positives)
        )

    def test_symmetry_for_tie_free_scores(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(20).astype(float)
        positives = rng.random(20) < 0.4
        o_plus = outcomes(scores, positives)
        o_minus = outcomes(-scores, positives)
        assert eh.roc_auc(o_plus) + eh.roc_auc(o_minus) == pytest.approx(1.0)

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(deadline=None, max_examples=25)
    def test_invariant_under_increasing_transform(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=15)
        positives = rng.random(15) < 0.5
        if positives.all() or not positives.any():
            return
        o = outcomes(scores, positives)
        t = outcomes(np.exp(scores) + 3, positives)
        assert eh.roc_auc(o) == pytest.approx(eh.roc_auc(t))
        assert eh.pr_auc(o) == pytest.approx(eh.pr_auc(t))
        assert eh.fpr_at_tpr(o) == pytest.approx(eh.fpr_at_tpr(t))
        assert eh.detection_error(o) == pytest.approx(eh.detection_error(t))


class TestPrAuc:
    def test_perfect_separation(self):
        assert eh.pr_auc(outcomes([1, 2, 3, 4], [0, 0, 1, 1])) == 1.0

    def test_three_point_hand_case(self):
        scores, positives = [0.9, 0.5, 0.1], [True, False, True]
        expected, _, _ = brute_threshold_metrics(scores, positives)
        assert eh.pr_auc(outcomes(scores, positives)) == pytest.approx(expected)

    def test_random_balanced_scores_near_half(self):
        values = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            scores = rng.normal(size=60)
            positives = np.array([True, False] * 30)
            values.append(eh.pr_auc(outcomes(scores, positives)))
        assert abs(np.mean(values) - 0.5) < 0.05

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(deadline=None, max_examples=40)
    def test_matches_threshold_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 25))
        scores = rng.integers(0, 5, n).astype(float)
        positives = rng.random(n) < 0.5
        if positives.all() or not positives.any():
            return
        expected, _, _ = brute_threshold_metrics(scores, positives)
        assert eh.pr_auc(outcomes(scores, positives)) == pytest.approx(expected)


class TestFprAndDetection:
    def test_perfect(self):
        o = outcomes([1, 2, 3, 4], [0, 0, 1, 1])
        assert eh.fpr_at_tpr(o) == 0.0
        assert eh.detection_error(o) == 0.0

    def test_identical_scores(self):
        o = outcomes([1, 1, 1, 1], [0, 1, 0, 1])
        assert eh.fpr_at_tpr(o) == 1.0
        assert eh.detection_error(o) == 0.5

    def test_twenty_point_case_matches_oracle(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=20)
        positives = np.array([True] * 10 + [False] * 10)
        scores[positives] += 1.0
        o = outcomes(scores, positives)
        _, fpr, det = brute_threshold_metrics(scores, positives)
        assert eh.fpr_at_tpr(o, 0.95) == pytest.approx(fpr)
        assert eh.detection_error(o) == pytest.approx(det)

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(deadline=None, max_examples=40)
    def test_matches_oracle_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 30))
        scores = rng.integers(0, 4, n).astype(float)
        positives = rng.random(n) < 0.5
        if positives.all() or not positives.any():
            return
        _, fpr, det = brute_threshold_metrics(scores, positives)
        o = outcomes(scores, positives)
        assert eh.fpr_at_tpr(o, 0.95) == pytest.approx(fpr)
        assert eh.detection_error(o) == pytest.approx(det)


class TestDrivers:
    def test_ablation_zero_endpoint_is_stacked(self):
        ds = collider_blocks(400, seed=derive_seed(0, "abl"))
        settings_ = eh.HarnessSettings(s=2, epochs=1, width=8, passes=2, seed=0)
        tree = eh._zero_threshold_tree(ds, settings_)
        assert len(tree.branches) == settings_.s
        for branch in tree.branches:
            assert branch.ancestors == []
            leaves = list(branch.descendant.leaves())
            assert len(leaves) == 1
            assert leaves[0].variables == frozenset(ds.ci_columns)

    def test_ablation_rows_and_determinism(self):
        ds = collider_blocks(500, seed=derive_seed(1, "abl"))
        settings_ = eh.HarnessSettings(s=2, epochs=2, width=8, passes=3, seed=1)
        rows_a = eh.run_ablation(ds, [0, 0.01], settings_)
        rows_b = eh.run_ablation(ds, [0, 0.01], settings_)
        assert rows_a == rows_b
        assert [r["threshold"] for r in rows_a] == [0, 0.01]
        for row in rows_a:
            assert {"nll", "error", "brier", "parameters"} <= row.keys()
            assert np.isfinite(row["nll"])

    def test_sweep_s1_counts_are_one(self):
        ds = noisy_chain_net(4).sample(800, seed=2)
        settings_ = eh.HarnessSettings(s=1, seed=3)
        rows = eh.run_unique_structures_sweep(ds, [200, 600], settings_, seeds=3)
        assert all(r["unique_structures"] == 1.0 for r in rows)

    def test_sweep_size_guard(self):
        ds = noisy_chain_net(4).sample(100, seed=4)
        with pytest.raises(ValueError):
            eh.run_unique_structures_sweep(
                ds, [500], eh.HarnessSettings(seed=0), seeds=1
            )

    def test_ood_identical_distributions_near_chance(self):
        train = two_moons(600, seed=derive_seed(5, "t"))
        id_test = two_moons(300, seed=derive_seed(5, "i"))
        ood_test = two_moons(300, seed=derive_seed(5, "o"))
        settings_ = eh.HarnessSettings(s=2, epochs=5, width=8, passes=8, seed=5)
        doc = eh.run_ood(train, id_test, ood_test, settings_)
        for name, metrics in doc["stochastic"].items():
            assert abs(metrics["auc_roc"] - 0.5) < 0.12
        assert doc["error"] is not None
        assert set(doc["simultaneous"]) == {"max_softmax", "entropy"}
        assert set(doc["stochastic"]) == {
            "max_softmax",
            "entropy",
            "mutual_information",
            "expected_entropy",
        }

    def test_regression_rows(self):
        rng = np.random.default_rng(6)
        from brainet.data import Dataset

        X = rng.normal(size=(300, 3))
        y = X[:, 0] - 2 * X[:, 1] + 0.1 * rng.normal(size=300)
        ds = Dataset(
            column_names=("a", "b", "c"),
            cardinalities=np.zeros(3, int),
            values=np.zeros((300, 3), int),
            labels=y,
            raw_features=X,
            continuous=np.ones(3, bool),
        )
        settings_ = eh.HarnessSettings(
            s=2, epochs=10, width=8, passes=4, loss="gaussian-nll", seed=7
        )
        rows = eh.run_regression(ds, settings_, repeats=2)
        assert len(rows) == 2
        for row in rows:
            assert np.isfinite(row["rmse"]) and np.isfinite(row["nll"])
            assert np.isfinite(row["rmse_stack"])


def test_matched_stack_width_hits_target():
    ds = collider_blocks(200, seed=derive_seed(8, "w"))
    settings_ = eh.HarnessSettings(s=2, stack_depth=2, seed=0)
    from brainet import nnet, structure

    target = 2000
    width = eh.matched_stack_width(target, ds, settings_)
    tree = structure.stacked_ensemble_tree(ds.ci_columns, 2, 2)
    h = nnet.build_network(
        tree, head="softmax", class_count=2, width=width, input_width=ds.n_cols
    )
    assert abs(h.parameter_count() - target) / target < 0.25
