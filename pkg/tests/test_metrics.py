import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from altl.data import Example
from altl.metrics import MetricsError, f1, labels_discovered, lrap
from oracles import brute_lrap


def random_instance(rng, n_labels=None, n_samples=None):
    c = n_labels or rng.integers(2, 9)
    n = n_samples or rng.integers(1, 7)
    true_sets = []
    for _ in range(n):
        size = rng.integers(1, c + 1)
        true_sets.append(set(int(j) for j in rng.choice(c, size=size, replace=False)))
    score_rows = rng.normal(size=(n, c))
    # sprinkle exact ties to exercise the >= handling
    if n >= 2 and rng.random() < 0.5:
        score_rows[0, :2] = score_rows[0, 0]
    return true_sets, score_rows


class TestLrap:
    def test_top_ranked_true_label_scores_one(self):
        assert lrap([{0}], [[0.9, 0.1, 0.0]]) == 1.0

    def test_worked_two_sample_value(self):
        value = lrap([{0}, {2}], [[0.75, 0.5, 1.0], [1.0, 0.2, 0.1]])
        assert value == pytest.approx(5 / 12, abs=1e-15)

    def test_all_labels_true_scores_one_for_any_scores(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            rows = rng.normal(size=(3, 5))
            assert lrap([set(range(5))] * 3, rows) == 1.0

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            true_sets, rows = random_instance(rng)
            assert lrap(true_sets, rows) == brute_lrap(true_sets, rows)

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(7)
        true_sets, rows = random_instance(rng, n_labels=6, n_samples=4)
        base = lrap(true_sets, rows)
        assert lrap(true_sets, 3.0 * rows + 11.0) == pytest.approx(base, abs=1e-12)
        assert lrap(true_sets, np.exp(rows)) == pytest.approx(base, abs=1e-12)

    def test_one_iff_true_labels_outrank_false(self):
        # all true >= all false
        assert lrap([{0, 1}], [[0.5, 0.5, 0.4]]) == 1.0
        # one false label sneaks above a true one
        assert lrap([{0, 1}], [[0.5, 0.3, 0.4]]) < 1.0

    def test_errors(self):
        with pytest.raises(MetricsError, match="length"):
            lrap([{0}], [[0.1], [0.2]])
        with pytest.raises(MetricsError, match="empty"):
            lrap([set()], [[0.1, 0.2]])
        with pytest.raises(MetricsError, match="samples"):
            lrap([], [])


class TestF1:
    def test_perfect_prediction(self):
        truth = [{0, 1}, {2}]
        assert f1(truth, truth, "micro") == 1.0
        assert f1(truth, truth, "macro") == 1.0

    def test_worked_half_overlap(self):
        # true {B,C}, predicted {A,B}: TP=1, FP=1, FN=1
        assert f1([{1, 2}], [{0, 1}], "micro") == pytest.approx(0.5)

    def test_disjoint_is_zero(self):
        assert f1([{0}, {1}], [{1}, {0}], "micro") == 0.0
        assert f1([{0}, {1}], [{1}, {0}], "macro") == 0.0

    def test_micro_invariant_to_sample_order(self):
        truth = [{0, 1}, {2}, {1}]
        pred = [{0}, {2, 3}, {0, 1}]
        order = [2, 0, 1]
        assert f1(truth, pred, "micro") == f1(
            [truth[i] for i in order], [pred[i] for i in order], "micro"
        )

    @given(st.permutations(list(range(5))))
    @settings(max_examples=20, deadline=None)
    def test_macro_invariant_to_label_permutation(self, perm):
        truth = [{0, 1}, {2}, {3}, {1, 4}]
        pred = [{0}, {2, 3}, {4}, {1}]
        relabel = lambda sets: [{perm[j] for j in s} for s in sets]
        assert f1(truth, pred, "macro") == pytest.approx(
            f1(relabel(truth), relabel(pred), "macro"), abs=1e-12
        )

    def test_macro_counts_present_but_missed_labels_as_zero(self):
        # label 1 occurs in truth only: included with F1 = 0
        value = f1([{0}, {1}], [{0}, {0}], "macro")
        # label 0: TP=1, FP=1, FN=0 -> P=0.5, R=1 -> F1=2/3; label 1: 0
        assert value == pytest.approx((2 / 3 + 0.0) / 2)

    def test_macro_excludes_absent_labels(self):
        # only labels 0 and 1 ever occur; the universe size is irrelevant
        assert f1([{0}], [{1}], "macro") == 0.0

    def test_errors(self):
        with pytest.raises(MetricsError, match="length"):
            f1([{0}], [{0}, {1}], "micro")
        with pytest.raises(MetricsError, match="averaging"):
            f1([{0}], [{0}], "weighted")


class TestLabelsDiscovered:
    def _example(self, ex_id, labels):
        return Example(ex_id, None, np.zeros(2), np.zeros(1, dtype=np.uint8),
                       frozenset(labels) if labels is not None else None)

    def test_counts_distinct_labels(self):
        exs = [self._example("a", {0}), self._example("b", {0, 1})]
        assert labels_discovered(exs) == 2

    def test_empty_set_of_examples(self):
        assert labels_discovered([]) == 0

    def test_unlabeled_example_rejected(self):
        with pytest.raises(MetricsError, match="unlabeled"):
            labels_discovered([self._example("a", None)])

    def test_matches_generator_bookkeeping(self):
        from altl.data import SynthConfig, synth_generate

        ds = synth_generate(SynthConfig(n_examples=150, n_prototypes=30, seed=5))
        emitted = set()
        for ex in ds.examples:
            emitted |= ex.labels
        assert labels_discovered(ds.examples) == len(emitted)
