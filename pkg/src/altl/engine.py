"""Active-learning experiment driver.

Each run: draw a small initial labeled set, then repeatedly (re)train the
classifier from scratch, record test-set metrics, extract latent features of
the whole training pool, cluster them when the strategy needs centroids,
select a batch, reveal its labels through the simulated oracle and grow the
labeled set. Records are written before each selection, so the record at
iteration k reflects a model trained on initial + k*batch labels.

Strategies only ever receive features, scores and ids; ground truth stays
behind the oracle.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import acquisition as acq
from . import model as mdl
from .clustering import APConfig, affinity_propagation, centroids
from .data import Dataset, Example, Pool, SynthConfig, load_dataset, synth_generate, split
from .metrics import MetricsRecord, f1, lrap
from .rng import derive, stream


class EngineError(ValueError):
    pass


@dataclass
class ModelArch:
    """Architecture knobs; data dims and label count come from the dataset.
    Defaults are the desk-scale setup; paper-scale widths remain expressible."""

    stage1_widths: tuple[int, int] = (64, 32)
    stage2_widths: tuple[int, int] = (64, 32)
    dropout_rate: float = 0.5


@dataclass
class ExperimentConfig:
    dataset_path: str | None = None
    synth: SynthConfig | None = field(default_factory=SynthConfig)
    split_ratio: float = 0.8
    initial_labeled: int = 10
    iterations: int = 10
    acquisition: acq.AcquisitionConfig = field(default_factory=acq.AcquisitionConfig)
    arch: ModelArch = field(default_factory=ModelArch)
    train: mdl.TrainConfig = field(default_factory=mdl.TrainConfig)
    ap: APConfig = field(default_factory=APConfig)
    runs: int = 4
    base_seed: int = 0
    margin: float = 0.2
    fully_supervised: bool = False

    def validate(self, pool_size: int | None = None):
        if self.runs < 1:
            raise EngineError("runs must be >= 1")
        if self.initial_labeled < 1:
            raise EngineError("initial_labeled must be >= 1")
        if self.iterations < 0:
            raise EngineError("iterations must be >= 0")
        self.acquisition.validate()
        self.train.validate()
        self.ap.validate()
        if pool_size is not None:
            budget = self.initial_labeled + self.iterations * self.acquisition.batch_size
            if budget > pool_size:
                raise EngineError(
                    f"budget infeasible: need {budget} labeled points, "
                    f"training pool has {pool_size}"
                )
        return self


@dataclass
class RunResult:
    seed: int
    records: list[MetricsRecord]
    final_params: mdl.ModelParams


class SimulatedOracle:
    """Reveals held-back ground truth, once per id."""

    def __init__(self, dataset: Dataset):
        self._truth = {ex.id: ex.labels for ex in dataset.examples}
        self._revealed: set[str] = set()

    def reveal(self, ids) -> list[frozenset[int]]:
        out = []
        for ex_id in ids:
            if ex_id not in self._truth:
                raise EngineError(f"oracle: unknown id {ex_id!r}")
            if ex_id in self._revealed:
                raise EngineError(f"oracle: id {ex_id!r} is already labeled")
            labels = self._truth[ex_id]
            if labels is None:
                raise EngineError(f"oracle: id {ex_id!r} has no ground truth")
            self._revealed.add(ex_id)
            out.append(labels)
        return out


def load_experiment_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset_path:
        return load_dataset(config.dataset_path)
    if config.synth is None:
        raise EngineError("config needs either dataset_path or synth")
    return synth_generate(config.synth)


def evaluate(
    params: mdl.ModelParams,
    test_examples: list[Example],
    margin: float,
) -> tuple[float, float, float]:
    score_mat = mdl.scores(params, test_examples)
    true_sets = [ex.labels for ex in test_examples]
    preds = [mdl.predict_labels(row, margin=margin) for row in score_mat]
    return (
        lrap(true_sets, score_mat),
        f1(true_sets, preds, "micro"),
        f1(true_sets, preds, "macro"),
    )


def _with_labels(ex: Example, labels: frozenset[int]) -> Example:
    return Example(ex.id, ex.text, ex.embedding, ex.surface_features, labels)


def run_single(
    train_ds: Dataset,
    test_ds: Dataset,
    config: ExperimentConfig,
    run_seed: int,
    on_iteration=None,
) -> RunResult:
    """One full trajectory with its own oracle, pool and retrains."""
    oracle = SimulatedOracle(train_ds)
    all_ids = sorted(train_ds.ids())
    boot = stream(run_seed, "bootstrap").choice(len(all_ids), size=config.initial_labeled, replace=False)
    initial = [all_ids[i] for i in boot]
    known: dict[str, frozenset[int]] = dict(zip(initial, oracle.reveal(initial)))
    pool = Pool(
        labeled=list(initial),
        unlabeled=[i for i in train_ds.ids() if i not in known],
    )

    b = config.acquisition.batch_size
    records: list[MetricsRecord] = []
    params = None
    for k in range(config.iterations + 1):
        labeled_examples = [_with_labels(train_ds.by_id(i), known[i]) for i in pool.labeled]
        model_cfg = mdl.ModelConfig(
            d=train_ds.d,
            m=train_ds.m,
            n_labels=len(train_ds.vocab),
            stage1_widths=tuple(config.arch.stage1_widths),
            stage2_widths=tuple(config.arch.stage2_widths),
            dropout_rate=config.arch.dropout_rate,
            seed=derive(run_seed, "init", k),
        )
        train_cfg = replace(config.train, seed=derive(run_seed, "train", k))
        params = mdl.train(mdl.init(model_cfg), labeled_examples, train_cfg)

        lr, f1mi, f1ma = evaluate(params, test_ds.examples, config.margin)
        discovered = len(set().union(*known.values())) if known else 0
        records.append(
            MetricsRecord(k, len(pool.labeled), lr, f1mi, f1ma, discovered)
        )
        if k == config.iterations:
            break

        selected = _select_batch(params, train_ds, pool, config, run_seed, k)
        revealed = oracle.reveal(selected)
        known.update(zip(selected, revealed))
        chosen = set(selected)
        pool.labeled.extend(selected)
        pool.unlabeled = [i for i in pool.unlabeled if i not in chosen]
        if on_iteration is not None:
            on_iteration(k, pool, records[-1], selected)
    return RunResult(run_seed, records, params)


def _select_batch(
    params: mdl.ModelParams,
    train_ds: Dataset,
    pool: Pool,
    config: ExperimentConfig,
    run_seed: int,
    iteration: int,
) -> list[str]:
    strategy = config.acquisition.strategy
    acq_cfg = replace(config.acquisition, seed=derive(run_seed, "strategy", iteration))
    if strategy == "random":
        return acq.select_batch_random(pool.unlabeled, acq_cfg)
    unlabeled_examples = [train_ds.by_id(i) for i in pool.unlabeled]
    if strategy == "maxentropy":
        score_mat = mdl.scores(params, unlabeled_examples)
        return acq.select_batch_maxentropy(pool.unlabeled, score_mat, acq_cfg)
    labeled_examples = [train_ds.by_id(i) for i in pool.labeled]
    feats = mdl.features(params, labeled_examples + unlabeled_examples)
    n_l = len(labeled_examples)
    if strategy == "coreset":
        return acq.select_batch_coreset(feats[:n_l], pool.unlabeled, feats[n_l:], acq_cfg)
    result = affinity_propagation(feats, config.ap)
    cents = centroids(result, feats)
    return acq.select_batch_altl(feats[:n_l], pool.unlabeled, feats[n_l:], cents, acq_cfg)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult]
    aggregate: list[dict]
    fully_supervised: dict | None


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    dataset = load_experiment_dataset(config)
    train_ds, test_ds = split(dataset, config.split_ratio, config.base_seed)
    config.validate(pool_size=len(train_ds.examples))
    for ex in dataset.examples:
        if ex.labels is None:
            raise EngineError(f"experiment dataset must be fully labeled; {ex.id!r} is not")

    runs = [
        run_single(train_ds, test_ds, config, config.base_seed + i)
        for i in range(config.runs)
    ]
    aggregate = aggregate_records([r.records for r in runs])

    fully = None
    if config.fully_supervised:
        fully = fully_supervised_reference(train_ds, test_ds, config)
    return ExperimentResult(config, runs, aggregate, fully)


def fully_supervised_reference(train_ds: Dataset, test_ds: Dataset, config: ExperimentConfig) -> dict:
    """Upper reference: one model trained on the whole labeled training pool.
    Uses the seed slot one past the last run."""
    seed = config.base_seed + config.runs
    model_cfg = mdl.ModelConfig(
        d=train_ds.d,
        m=train_ds.m,
        n_labels=len(train_ds.vocab),
        stage1_widths=tuple(config.arch.stage1_widths),
        stage2_widths=tuple(config.arch.stage2_widths),
        dropout_rate=config.arch.dropout_rate,
        seed=derive(seed, "init", 0),
    )
    train_cfg = replace(config.train, seed=derive(seed, "train", 0))
    params = mdl.train(mdl.init(model_cfg), train_ds.examples, train_cfg)
    lr, f1mi, f1ma = evaluate(params, test_ds.examples, config.margin)
    return {"lrap": lr, "f1_micro": f1mi, "f1_macro": f1ma, "n_labeled": len(train_ds.examples)}


def aggregate_records(per_run: list[list[MetricsRecord]]) -> list[dict]:
    """Per-iteration mean and sample sd across runs."""
    n_iters = len(per_run[0])
    if any(len(records) != n_iters for records in per_run):
        raise EngineError("runs produced different record counts")
    rows = []
    for k in range(n_iters):
        recs = [records[k] for records in per_run]
        row = {"iteration": k, "n_labeled": recs[0].n_labeled}
        for name in ("lrap", "f1_micro", "f1_macro", "labels_discovered"):
            vals = np.array([getattr(r, name) for r in recs], dtype=np.float64)
            row[f"{name}_mean"] = float(vals.mean())
            row[f"{name}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


CSV_HEADER = ["run", "iteration", "n_labeled", "lrap", "f1_micro", "f1_macro", "labels_discovered"]


def results_csv(runs: list[RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i, run in enumerate(runs):
        for rec in run.records:
            writer.writerow(
                [i, rec.iteration, rec.n_labeled, repr(rec.lrap), repr(rec.f1_micro),
                 repr(rec.f1_macro), rec.labels_discovered]
            )
    return buf.getvalue()


def write_results(result: ExperimentResult, outdir: str | Path):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "results.csv").write_text(results_csv(result.runs), encoding="utf-8")
    payload = {
        "per_iteration": result.aggregate,
        "fully_supervised": result.fully_supervised,
        "runs": result.config.runs,
        "base_seed": result.config.base_seed,
        "strategy": result.config.acquisition.strategy,
        "lambda": result.config.acquisition.lam,
    }
    (outdir / "aggregate.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for i, run in enumerate(result.runs):
        mdl.save_params(run.final_params, outdir / f"model_run{i}.npz")


def sweep_lambda(config: ExperimentConfig, lambdas) -> dict[float, ExperimentResult]:
    """Ablation over the exploration/centroid trade-off."""
    out = {}
    for lam in lambdas:
        cfg = replace(
            config,
            acquisition=replace(config.acquisition, strategy="altl", lam=float(lam)),
        )
        out[float(lam)] = run_experiment(cfg)
    return out


def pca_projection(feature_rows) -> np.ndarray:
    """Mean-centered projection onto the top two principal directions.

    Sign convention: each direction's largest-magnitude coordinate is made
    positive, so output is reproducible. Rank-deficient inputs yield zero
    trailing components.
    """
    x = np.asarray(feature_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise EngineError("need at least 2 points to project")
    centered = x - x.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    out = np.zeros((x.shape[0], 2))
    scale = s[0] if s.size and s[0] > 0 else 0.0
    for comp in range(min(2, vt.shape[0])):
        if scale == 0.0 or s[comp] <= 1e-12 * scale:
            break
        v = vt[comp]
        if v[int(np.argmax(np.abs(v)))] < 0:
            v = -v
        out[:, comp] = centered @ v
    return out


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    """Every field optional; unknown keys rejected to catch typos."""
    raw = dict(raw)
    cfg = ExperimentConfig()
    known = {
        "dataset", "dataset_path", "synth", "split_ratio", "initial_labeled",
        "iterations", "acquisition", "model", "train", "ap", "runs",
        "base_seed", "margin", "fully_supervised",
    }
    unknown = set(raw) - known
    if unknown:
        raise EngineError(f"unknown config keys: {sorted(unknown)}")
    cfg.dataset_path = raw.get("dataset", raw.get("dataset_path"))
    if "synth" in raw:
        cfg.synth = SynthConfig(**raw["synth"]) if raw["synth"] is not None else None
    if cfg.dataset_path is not None and "synth" not in raw:
        cfg.synth = None
    cfg.split_ratio = raw.get("split_ratio", cfg.split_ratio)
    cfg.initial_labeled = raw.get("initial_labeled", cfg.initial_labeled)
    cfg.iterations = raw.get("iterations", cfg.iterations)
    cfg.runs = raw.get("runs", cfg.runs)
    cfg.base_seed = raw.get("base_seed", cfg.base_seed)
    cfg.margin = raw.get("margin", cfg.margin)
    cfg.fully_supervised = raw.get("fully_supervised", cfg.fully_supervised)
    if "acquisition" in raw:
        a = dict(raw["acquisition"])
        if "lambda" in a:
            a["lam"] = a.pop("lambda")
        cfg.acquisition = acq.AcquisitionConfig(**a)
    if "model" in raw:
        m = dict(raw["model"])
        for key in ("stage1_widths", "stage2_widths"):
            if key in m:
                m[key] = tuple(m[key])
        cfg.arch = ModelArch(**m)
    if "train" in raw:
        cfg.train = mdl.TrainConfig(**raw["train"])
    if "ap" in raw:
        cfg.ap = APConfig(**raw["ap"])
    return cfg


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["acquisition"]["lambda"] = out["acquisition"].pop("lam")
    out["model"] = out.pop("arch")
    return out
