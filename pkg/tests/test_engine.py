import json

import numpy as np
import pytest

from altl.acquisition import AcquisitionConfig
from altl.data import Dataset, Example, SynthConfig, split, synth_generate
from altl.engine import (
    CSV_HEADER,
    EngineError,
    ExperimentConfig,
    ModelArch,
    SimulatedOracle,
    aggregate_records,
    experiment_config_from_dict,
    pca_projection,
    results_csv,
    run_experiment,
    run_single,
    sweep_lambda,
    write_results,
)
from altl.metrics import MetricsRecord
from altl.model import TrainConfig


def tiny_config(strategy="altl", lam=0.1, runs=1, iterations=2, seed=0):
    return ExperimentConfig(
        synth=SynthConfig(
            n_examples=70, n_labels=6, embedding_dim=8, feature_dim=6,
            n_prototypes=8, noise_sigma=0.1, seed=seed,
        ),
        split_ratio=0.8,
        initial_labeled=5,
        iterations=iterations,
        runs=runs,
        base_seed=seed,
        acquisition=AcquisitionConfig(strategy=strategy, lam=lam, batch_size=4),
        arch=ModelArch(stage1_widths=(12, 8), stage2_widths=(12, 8)),
        train=TrainConfig(epochs=15),
    )


def prepared(config):
    from altl.engine import load_experiment_dataset

    dataset = load_experiment_dataset(config)
    return split(dataset, config.split_ratio, config.base_seed)


class TestRunSingle:
    @pytest.mark.parametrize("strategy", ["altl", "coreset", "maxentropy", "random"])
    def test_pool_bookkeeping_every_iteration(self, strategy):
        config = tiny_config(strategy=strategy)
        train_ds, test_ds = prepared(config)
        test_ids = set(test_ds.ids())
        all_train = set(train_ds.ids())
        seen = []

        def check(iteration, pool, record, selected):
            pool.validate(train_ds, all_ids=list(all_train))
            assert len(selected) == config.acquisition.batch_size
            assert not set(selected) & test_ids
            assert not (set(pool.labeled) | set(pool.unlabeled)) & test_ids
            seen.append((iteration, len(pool.labeled), record.n_labeled))

        result = run_single(train_ds, test_ds, config, run_seed=7, on_iteration=check)
        assert len(result.records) == config.iterations + 1
        assert [r.n_labeled for r in result.records] == [5, 9, 13]
        assert seen == [(0, 9, 5), (1, 13, 9)]
        discovered = [r.labels_discovered for r in result.records]
        assert discovered == sorted(discovered)

    def test_lambda_zero_trajectory_equals_coreset(self):
        selections = {}
        for strategy, lam in (("altl", 0.0), ("coreset", 0.0)):
            config = tiny_config(strategy=strategy, lam=lam)
            train_ds, test_ds = prepared(config)
            picks = []
            run_single(train_ds, test_ds, config, run_seed=11,
                       on_iteration=lambda k, p, r, sel: picks.append(list(sel)))
            selections[strategy] = picks
        assert selections["altl"] == selections["coreset"]

    def test_strategies_never_see_unlabeled_ground_truth(self):
        # scrambling the not-yet-revealed labels must not change the first batch
        config = tiny_config(strategy="altl")
        train_ds, test_ds = prepared(config)
        first = {}
        boot = {}

        def capture(k, pool, record, selected):
            if k == 0:
                first["sel"] = list(selected)
                boot["ids"] = list(pool.labeled[: config.initial_labeled])

        run_single(train_ds, test_ds, config, run_seed=3, on_iteration=capture)
        base_sel = first["sel"]

        rng = np.random.default_rng(99)
        hidden = [ex for ex in train_ds.examples if ex.id not in set(boot["ids"])]
        shuffled_labels = [ex.labels for ex in hidden]
        rng.shuffle(shuffled_labels)
        scrambled_examples = []
        pos = 0
        for ex in train_ds.examples:
            if ex.id in set(boot["ids"]):
                scrambled_examples.append(ex)
            else:
                scrambled_examples.append(
                    Example(ex.id, ex.text, ex.embedding, ex.surface_features,
                            shuffled_labels[pos])
                )
                pos += 1
        scrambled = Dataset(train_ds.vocab, scrambled_examples, train_ds.d, train_ds.m)

        run_single(scrambled, test_ds, config, run_seed=3, on_iteration=capture)
        assert first["sel"] == base_sel

    def test_oracle_contract(self):
        config = tiny_config()
        train_ds, _ = prepared(config)
        oracle = SimulatedOracle(train_ds)
        some_id = train_ds.ids()[0]
        (labels,) = oracle.reveal([some_id])
        assert labels == train_ds.by_id(some_id).labels
        with pytest.raises(EngineError, match="already labeled"):
            oracle.reveal([some_id])
        with pytest.raises(EngineError, match="unknown id"):
            oracle.reveal(["ghost"])


class TestRunExperiment:
    def test_zero_iterations_single_record(self):
        config = tiny_config(iterations=0, runs=1)
        result = run_experiment(config)
        assert len(result.runs) == 1
        assert len(result.runs[0].records) == 1
        assert result.runs[0].records[0].n_labeled == config.initial_labeled

    def test_deterministic_results_csv(self):
        a = run_experiment(tiny_config(runs=2))
        b = run_experiment(tiny_config(runs=2))
        assert results_csv(a.runs) == results_csv(b.runs)

    def test_budget_infeasible(self):
        config = tiny_config()
        config.iterations = 100
        with pytest.raises(EngineError, match="budget infeasible"):
            run_experiment(config)

    def test_write_results_layout_and_determinism(self, tmp_path):
        config = tiny_config(runs=2)
        config.fully_supervised = True
        result = run_experiment(config)
        write_results(result, tmp_path / "out1")
        write_results(run_experiment(config), tmp_path / "out2")
        csv1 = (tmp_path / "out1" / "results.csv").read_bytes()
        assert csv1 == (tmp_path / "out2" / "results.csv").read_bytes()
        assert csv1.decode().splitlines()[0] == ",".join(CSV_HEADER)
        agg = json.loads((tmp_path / "out1" / "aggregate.json").read_text())
        assert agg["fully_supervised"]["lrap"] > 0
        assert len(agg["per_iteration"]) == config.iterations + 1
        assert (tmp_path / "out1" / "model_run0.npz").exists()

    def test_sweep_lambda_returns_one_aggregate_per_value(self):
        config = tiny_config(iterations=1, runs=1)
        swept = sweep_lambda(config, [0.0, 0.1, 1.0])
        assert set(swept) == {0.0, 0.1, 1.0}
        for result in swept.values():
            assert len(result.aggregate) == 2


class TestAggregation:
    def test_mean_and_sd(self):
        runs = [
            [MetricsRecord(0, 5, 0.4, 0.3, 0.2, 3)],
            [MetricsRecord(0, 5, 0.6, 0.5, 0.4, 5)],
        ]
        (row,) = aggregate_records(runs)
        assert row["lrap_mean"] == pytest.approx(0.5)
        assert row["lrap_sd"] == pytest.approx(np.std([0.4, 0.6], ddof=1))
        assert row["labels_discovered_mean"] == pytest.approx(4.0)

    def test_single_run_sd_is_zero(self):
        (row,) = aggregate_records([[MetricsRecord(0, 5, 0.4, 0.3, 0.2, 3)]])
        assert row["lrap_sd"] == 0.0

    def test_mismatched_record_counts_rejected(self):
        with pytest.raises(EngineError):
            aggregate_records([
                [MetricsRecord(0, 5, 0.4, 0.3, 0.2, 3)],
                [],
            ])


class TestPcaProjection:
    def test_planar_data_distances_preserved(self):
        rng = np.random.default_rng(0)
        coords = rng.normal(size=(40, 2))
        basis, _ = np.linalg.qr(rng.normal(size=(7, 2)))
        x = coords @ basis.T + rng.normal(size=7)
        proj = pca_projection(x)
        orig = np.sqrt(((coords[:, None] - coords[None, :]) ** 2).sum(-1))
        new = np.sqrt(((proj[:, None] - proj[None, :]) ** 2).sum(-1))
        assert np.abs(orig - new).max() <= 1e-6

    def test_identical_points_project_to_origin(self):
        x = np.ones((5, 3))
        assert np.array_equal(pca_projection(x), np.zeros((5, 2)))

    def test_rank_one_input_zero_second_component(self):
        t = np.linspace(0, 1, 9)[:, None]
        direction = np.array([[1.0, 2.0, -1.0]])
        proj = pca_projection(t @ direction)
        assert np.all(proj[:, 1] == 0.0)
        assert np.std(proj[:, 0]) > 0

    def test_reproducible_sign_convention(self):
        x = np.random.default_rng(4).normal(size=(20, 5))
        assert np.array_equal(pca_projection(x), pca_projection(x))

    def test_needs_two_points(self):
        with pytest.raises(EngineError):
            pca_projection(np.ones((1, 4)))


class TestConfigParsing:
    def test_defaults_applied(self):
        cfg = experiment_config_from_dict({})
        assert cfg.split_ratio == 0.8
        assert cfg.initial_labeled == 10
        assert cfg.acquisition.batch_size == 10
        assert cfg.acquisition.lam == 0.1
        assert cfg.runs == 4
        assert cfg.train.epochs == 200
        assert cfg.train.learning_rate == 0.001
        assert cfg.ap.damping == 0.5

    def test_lambda_key_accepted(self):
        cfg = experiment_config_from_dict({"acquisition": {"lambda": 0.7}})
        assert cfg.acquisition.lam == 0.7

    def test_nested_sections(self):
        cfg = experiment_config_from_dict(
            {
                "synth": {"n_examples": 50, "seed": 3},
                "model": {"stage1_widths": [32, 16]},
                "train": {"epochs": 10},
                "ap": {"damping": 0.7},
                "iterations": 1,
            }
        )
        assert cfg.synth.n_examples == 50
        assert cfg.arch.stage1_widths == (32, 16)
        assert cfg.train.epochs == 10
        assert cfg.ap.damping == 0.7

    def test_dataset_path_disables_synth(self):
        cfg = experiment_config_from_dict({"dataset": "some.jsonl"})
        assert cfg.dataset_path == "some.jsonl"
        assert cfg.synth is None

    def test_unknown_keys_rejected(self):
        with pytest.raises(EngineError, match="unknown config keys"):
            experiment_config_from_dict({"lerning_rate": 1})
