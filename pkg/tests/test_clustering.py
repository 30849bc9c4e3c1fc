import numpy as np
import pytest

from altl.clustering import (
    APConfig,
    ClusteringError,
    affinity_propagation,
    centroids,
    median_preference,
    propagate,
    similarity_matrix,
)
from oracles import naive_affinity_propagation


def check_invariants(result, n):
    assert 1 <= len(result.exemplars) <= n
    assert len(result.assignment) == n
    ex_set = set(result.exemplars)
    for k in result.exemplars:
        assert result.assignment[k] == k  # exemplars assigned to themselves
    for target in result.assignment:
        assert target in ex_set


def two_pairs():
    return np.array([[0.0], [0.1], [10.0], [10.1]])


class TestBasics:
    def test_single_point(self):
        result = affinity_propagation(np.array([[3.0, 4.0]]))
        assert result.exemplars == [0]
        assert list(result.assignment) == [0]
        assert result.converged

    def test_two_pair_structure(self):
        result = affinity_propagation(two_pairs())
        check_invariants(result, 4)
        assert len(result.exemplars) == 2
        assert result.converged
        # one exemplar per pair, assignments group the pairs
        assert result.assignment[0] == result.assignment[1]
        assert result.assignment[2] == result.assignment[3]
        assert result.assignment[0] != result.assignment[2]
        assert result.exemplars[0] in (0, 1) and result.exemplars[1] in (2, 3)

    def test_two_pair_matches_naive_oracle_exactly(self):
        result = affinity_propagation(two_pairs())
        ex, asg, conv = naive_affinity_propagation(two_pairs())
        assert result.exemplars == ex
        assert list(result.assignment) == asg
        assert result.converged == conv

    @pytest.mark.parametrize("seed", range(10))
    def test_seeded_instances_match_naive_oracle_exactly(self, seed):
        x = np.random.default_rng(seed).normal(size=(30, 5))
        result = affinity_propagation(x)
        ex, asg, conv = naive_affinity_propagation(x)
        assert result.exemplars == ex
        assert list(result.assignment) == asg
        assert result.converged == conv
        check_invariants(result, 30)


class TestProperties:
    def test_diagonal_of_similarities_is_irrelevant(self):
        x = np.random.default_rng(3).normal(size=(15, 3))
        s = similarity_matrix(x)
        pref = median_preference(s)
        base = propagate(s, APConfig(preference=pref))
        for junk in (123.0, -999.0):
            poked = s.copy()
            np.fill_diagonal(poked, junk)
            # median rule must also ignore the diagonal
            assert median_preference(poked) == pref
            result = propagate(poked, APConfig(preference=pref))
            assert result.exemplars == base.exemplars
            assert np.array_equal(result.assignment, base.assignment)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(20, 4))
        base = affinity_propagation(x)
        perm = rng.permutation(20)
        permuted = affinity_propagation(x[perm])
        # position j in the permuted input is original point perm[j]
        assert sorted(perm[k] for k in permuted.exemplars) == sorted(base.exemplars)
        for j in range(20):
            assert perm[permuted.assignment[j]] == base.assignment[perm[j]]

    def test_high_preference_makes_every_point_an_exemplar(self):
        x = np.random.default_rng(5).normal(size=(12, 3))
        result = affinity_propagation(x, APConfig(preference=1.0))
        assert result.exemplars == list(range(12))
        ex, _, _ = naive_affinity_propagation(x, preference=1.0)
        assert ex == list(range(12))

    @pytest.mark.parametrize("seed", [5, 6, 7])
    def test_low_preference_collapses_a_blob(self, seed):
        # "far below" within numerical reason: several times the most negative
        # similarity; astronomically low preferences make the messages
        # oscillate at 1e6 scale and nothing converges
        x = np.random.default_rng(seed).normal(size=(12, 3))
        low = float(similarity_matrix(x).min()) * 3
        result = affinity_propagation(x, APConfig(preference=low))
        assert len(result.exemplars) == 1
        assert result.converged
        ex, asg, _ = naive_affinity_propagation(x, preference=low)
        assert result.exemplars == ex
        assert list(result.assignment) == asg

    def test_messages_stay_finite_over_full_iteration_budget(self):
        x = np.random.default_rng(7).normal(size=(25, 4))
        # a window larger than any plausible convergence forces all iterations
        config = APConfig(damping=0.5, max_iterations=60, convergence_window=60)
        result = affinity_propagation(x, config)
        assert result.iterations_run == 60
        assert not result.converged
        check_invariants(result, 25)

    def test_convergence_flag_and_iteration_count(self):
        x = np.random.default_rng(8).normal(size=(20, 3))
        result = affinity_propagation(x)
        assert result.converged
        assert result.iterations_run <= APConfig().max_iterations

    def test_higher_damping_still_converges_here(self):
        x = np.random.default_rng(9).normal(size=(20, 3))
        result = affinity_propagation(x, APConfig(damping=0.9, max_iterations=500))
        check_invariants(result, 20)


class TestCentroids:
    def test_single_point(self):
        x = np.array([[1.0, 2.0]])
        result = affinity_propagation(x)
        assert np.array_equal(centroids(result, x), x)

    def test_two_pair_centroids_are_exemplar_points(self):
        x = two_pairs()
        result = affinity_propagation(x)
        cents = centroids(result, x)
        assert cents.shape == (2, 1)
        for row in cents:
            assert any(np.array_equal(row, p) for p in x)

    def test_every_centroid_is_an_input_point(self):
        x = np.random.default_rng(12).normal(size=(18, 4))
        result = affinity_propagation(x)
        cents = centroids(result, x)
        assert cents.shape == (len(result.exemplars), 4)
        for row in cents:
            assert any(np.array_equal(row, p) for p in x)

    def test_index_out_of_range(self):
        x = np.random.default_rng(0).normal(size=(5, 2))
        result = affinity_propagation(x)
        result.exemplars = [99]
        with pytest.raises(ClusteringError, match="out of range"):
            centroids(result, x)


class TestValidation:
    def test_empty_input(self):
        with pytest.raises(ClusteringError, match="non-empty"):
            affinity_propagation(np.zeros((0, 3)))

    def test_non_finite_coordinates(self):
        x = np.array([[0.0, 1.0], [np.nan, 2.0]])
        with pytest.raises(ClusteringError, match="finite"):
            affinity_propagation(x)

    @pytest.mark.parametrize("damping", [0.49, 1.0, 1.5])
    def test_damping_range(self, damping):
        with pytest.raises(ClusteringError, match="damping"):
            APConfig(damping=damping).validate()

    def test_window_vs_max_iterations(self):
        with pytest.raises(ClusteringError):
            APConfig(max_iterations=10, convergence_window=11).validate()

    def test_serialization_record(self):
        result = affinity_propagation(two_pairs())
        record = result.to_record()
        assert set(record) == {"exemplars", "assignment", "converged"}
        assert record["exemplars"] == result.exemplars
        assert record["converged"] is True
