"""Human-in-the-loop labeling service.

One session = one dataset + one growing labeled pool + one classifier that is
retrained from scratch after every completed batch. The server proposes a
batch, a human labels it over HTTP, training runs as a background job, and
the next batch is selected with the configured strategy. Metrics and a 2-D
latent map are recomputed after every training round.

When every example in the dataset file carries labels the session treats them
as hidden ground truth (simulation mode): the pool starts fully unlabeled, a
test split is held out for metrics, and the truth is never exposed in any
response. Otherwise the file's labeled examples seed the pool and metrics are
computed on the labeled set itself.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import acquisition as acq
from . import model as mdl
from .clustering import APConfig, affinity_propagation, centroids
from .data import (
    DataError,
    Dataset,
    Example,
    LabelVocabulary,
    Pool,
    load_dataset,
    split,
)
from .engine import ModelArch, evaluate, pca_projection
from .metrics import MetricsRecord, f1, lrap
from .rng import derive, stream


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ServiceConfig:
    initial_labeled: int = 10
    acquisition: acq.AcquisitionConfig = field(default_factory=acq.AcquisitionConfig)
    arch: ModelArch = field(default_factory=ModelArch)
    train: mdl.TrainConfig = field(default_factory=mdl.TrainConfig)
    ap: APConfig = field(default_factory=APConfig)
    split_ratio: float = 0.8
    margin: float = 0.2
    simulate_truth: bool | None = None
    seed: int = 0
    background: bool = True


def service_config_from_dict(raw: dict) -> ServiceConfig:
    raw = dict(raw or {})
    cfg = ServiceConfig()
    if "acquisition" in raw:
        a = dict(raw.pop("acquisition"))
        if "lambda" in a:
            a["lam"] = a.pop("lambda")
        cfg.acquisition = acq.AcquisitionConfig(**a)
    if "model" in raw:
        m = dict(raw.pop("model"))
        for key in ("stage1_widths", "stage2_widths"):
            if key in m:
                m[key] = tuple(m[key])
        cfg.arch = ModelArch(**m)
    if "train" in raw:
        cfg.train = mdl.TrainConfig(**raw.pop("train"))
    if "ap" in raw:
        cfg.ap = APConfig(**raw.pop("ap"))
    for key in (
        "initial_labeled", "split_ratio", "margin", "simulate_truth", "seed", "background",
    ):
        if key in raw:
            setattr(cfg, key, raw.pop(key))
    if raw:
        raise ApiError(400, "bad_request", f"unknown config keys: {sorted(raw)}")
    return cfg


class Session:
    def __init__(self, session_id: str, dataset_path: str, config: ServiceConfig, root: Path):
        self.id = session_id
        self.dataset_path = str(dataset_path)
        self.config = config
        self.root = root
        self.lock = threading.Lock()

        dataset = load_dataset(dataset_path)
        self.vocab = LabelVocabulary(dataset.vocab.names)
        simulate = config.simulate_truth
        if simulate is None:
            simulate = all(ex.labels is not None for ex in dataset.examples)
        self.simulate = simulate

        if simulate:
            for ex in dataset.examples:
                if ex.labels is None:
                    raise ApiError(
                        400, "bad_request",
                        "simulation mode needs ground truth on every example",
                    )
            train_ds, test_ds = split(dataset, config.split_ratio, config.seed)
            self.work = train_ds
            self.test = test_ds
            self.truth = {ex.id: ex.labels for ex in train_ds.examples}
            self.known: dict[str, frozenset[int]] = {}
        else:
            self.work = dataset
            self.test = None
            self.truth = None
            self.known = {
                ex.id: ex.labels for ex in dataset.examples if ex.labels is not None
            }

        self.pool = Pool(
            labeled=[i for i in self.work.ids() if i in self.known],
            unlabeled=[i for i in self.work.ids() if i not in self.known],
        )
        self.params: mdl.ModelParams | None = None
        self.pending: list[str] = []
        self.metrics: list[MetricsRecord] = []
        self.retrains = 0
        self.projection: list[dict] | None = None
        self.cluster_record: dict | None = None

        if self.pool.labeled:
            self.state = "idle"
        else:
            self._propose_bootstrap()
            self.state = "awaiting_labels"

    def _propose_bootstrap(self):
        ids = sorted(self.pool.unlabeled)
        size = min(self.config.initial_labeled, len(ids))
        picked = stream(self.config.seed, "bootstrap").choice(len(ids), size=size, replace=False)
        self.pending = [ids[i] for i in picked]

    # ----- views ---------------------------------------------------------

    def summary(self) -> dict:
        return {
            "id": self.id,
            "state": self.state,
            "n_labeled": len(self.pool.labeled),
            "n_unlabeled": len(self.pool.unlabeled),
            "pending": len(self.pending),
            "retrains": self.retrains,
            "vocab_size": len(self.vocab),
            "simulate": self.simulate,
        }

    def batch_items(self) -> list[dict]:
        if self.state != "awaiting_labels":
            raise ApiError(
                409, "wrong_state",
                f"batch is available in state awaiting_labels, session is {self.state}",
            )
        items = []
        score_mat = None
        if self.params is not None:
            examples = [self.work.by_id(i) for i in self.pending]
            score_mat = mdl.scores(self.params, examples)
        for pos, ex_id in enumerate(self.pending):
            ex = self.work.by_id(ex_id)
            items.append(
                {
                    "id": ex_id,
                    "text": ex.text,
                    "scores": None if score_mat is None else [float(v) for v in score_mat[pos]],
                }
            )
        return items

    def metrics_records(self) -> list[dict]:
        return [asdict(r) for r in self.metrics]

    def projection_points(self) -> list[dict]:
        if self.retrains == 0 or self.projection is None:
            raise ApiError(409, "wrong_state", "no trained model yet")
        return self.projection

    # ----- mutations ------------------------------------------------------

    def add_label_name(self, name: str) -> int:
        if not name or not isinstance(name, str):
            raise ApiError(400, "bad_request", "label name must be a non-empty string")
        return self.vocab.add(name)

    def submit_labels(self, assignments: dict, create_missing: bool) -> tuple[int, bool]:
        """Returns (accepted count, whether training should start)."""
        if self.state != "awaiting_labels":
            raise ApiError(
                409, "wrong_state",
                f"labels are accepted in state awaiting_labels, session is {self.state}",
            )
        if not assignments:
            raise ApiError(400, "bad_request", "no assignments given")
        pending = set(self.pending)
        resolved: dict[str, frozenset[int]] = {}
        for ex_id, names in assignments.items():
            if ex_id not in pending:
                raise ApiError(400, "id_not_in_batch", f"id {ex_id!r} is not in the pending batch")
            if not names:
                raise ApiError(400, "bad_request", f"empty label set for id {ex_id!r}")
            idx = set()
            for name in names:
                if name in self.vocab:
                    idx.add(self.vocab.index(name))
                elif create_missing:
                    idx.add(self.vocab.add(name))
                else:
                    raise ApiError(
                        400, "unknown_label",
                        f"unknown label {name!r}; add it first or pass create_missing",
                    )
            resolved[ex_id] = frozenset(idx)

        for ex_id, labels in resolved.items():
            self.known[ex_id] = labels
            self.pending.remove(ex_id)
            self.pool.unlabeled.remove(ex_id)
            self.pool.labeled.append(ex_id)
        start_training = not self.pending
        if start_training:
            self.state = "training"
        return len(resolved), start_training

    def train_round(self):
        """Retrain from scratch, refresh metrics/map, select the next batch.
        Runs outside the lock except for the final state swap."""
        k = self.retrains
        labeled_examples = [
            Example(i, self.work.by_id(i).text, self.work.by_id(i).embedding,
                    self.work.by_id(i).surface_features, self.known[i])
            for i in self.pool.labeled
        ]
        model_cfg = mdl.ModelConfig(
            d=self.work.d,
            m=self.work.m,
            n_labels=max(2, len(self.vocab)),
            stage1_widths=tuple(self.config.arch.stage1_widths),
            stage2_widths=tuple(self.config.arch.stage2_widths),
            dropout_rate=self.config.arch.dropout_rate,
            seed=derive(self.config.seed, "init", k),
        )
        train_cfg = replace(self.config.train, seed=derive(self.config.seed, "train", k))
        params = mdl.train(mdl.init(model_cfg), labeled_examples, train_cfg)

        if self.simulate:
            lr, f1mi, f1ma = evaluate(params, self.test.examples, self.config.margin)
        else:
            score_mat = mdl.scores(params, labeled_examples)
            true_sets = [ex.labels for ex in labeled_examples]
            preds = [mdl.predict_labels(row, margin=self.config.margin) for row in score_mat]
            lr = lrap(true_sets, score_mat)
            f1mi = f1(true_sets, preds, "micro")
            f1ma = f1(true_sets, preds, "macro")
        discovered = len(set().union(*self.known.values())) if self.known else 0
        record = MetricsRecord(k, len(self.pool.labeled), lr, f1mi, f1ma, discovered)

        pool_ids = list(self.pool.labeled) + list(self.pool.unlabeled)
        pool_examples = [self.work.by_id(i) for i in pool_ids]
        feats = mdl.features(params, pool_examples)
        cluster = affinity_propagation(feats, self.config.ap)

        n_l = len(self.pool.labeled)
        next_batch: list[str] = []
        n_pick = min(self.config.acquisition.batch_size, len(self.pool.unlabeled))
        if n_pick > 0:
            acq_cfg = replace(
                self.config.acquisition,
                batch_size=n_pick,
                seed=derive(self.config.seed, "strategy", k),
            )
            strategy = acq_cfg.strategy
            if strategy == "random":
                next_batch = acq.select_batch_random(self.pool.unlabeled, acq_cfg)
            elif strategy == "maxentropy":
                unl = [self.work.by_id(i) for i in self.pool.unlabeled]
                next_batch = acq.select_batch_maxentropy(
                    self.pool.unlabeled, mdl.scores(params, unl), acq_cfg
                )
            elif strategy == "coreset":
                next_batch = acq.select_batch_coreset(
                    feats[:n_l], self.pool.unlabeled, feats[n_l:], acq_cfg
                )
            else:
                cents = centroids(cluster, feats)
                next_batch = acq.select_batch_altl(
                    feats[:n_l], self.pool.unlabeled, feats[n_l:], cents, acq_cfg
                )

        coords = pca_projection(feats) if len(pool_examples) >= 2 else np.zeros((1, 2))
        in_batch = set(next_batch)
        labeled_set = set(self.pool.labeled)
        projection = [
            {
                "id": ex_id,
                "x": float(coords[i, 0]),
                "y": float(coords[i, 1]),
                "cluster": int(cluster.assignment[i]),
                "labeled": ex_id in labeled_set,
                "in_batch": ex_id in in_batch,
            }
            for i, ex_id in enumerate(pool_ids)
        ]

        with self.lock:
            self.params = params
            self.metrics.append(record)
            self.retrains += 1
            self.pending = next_batch
            self.projection = projection
            self.cluster_record = cluster.to_record()
            self.state = "awaiting_labels" if next_batch else "idle"
            self.persist()

    def start_training(self):
        if self.config.background:
            threading.Thread(target=self._train_guarded, daemon=True).start()
        else:
            self._train_guarded()

    def _train_guarded(self):
        try:
            self.train_round()
        except Exception:
            with self.lock:
                self.state = "idle"
            raise

    # ----- persistence ----------------------------------------------------

    def dir(self) -> Path:
        return self.root / self.id

    def persist(self):
        d = self.dir()
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "id": self.id,
            "dataset_path": self.dataset_path,
            "config": _config_to_dict(self.config),
            "state": self.state,
            "retrains": self.retrains,
            "pending": self.pending,
            "simulate": self.simulate,
            "metrics": self.metrics_records(),
            "projection": self.projection,
            "cluster": self.cluster_record,
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        (d / "pool.json").write_text(
            json.dumps({"labeled": self.pool.labeled, "unlabeled": self.pool.unlabeled}) + "\n",
            encoding="utf-8",
        )
        (d / "vocab.txt").write_text(
            "".join(name + "\n" for name in self.vocab), encoding="utf-8"
        )
        labels_by_name = {
            ex_id: [self.vocab.name(j) for j in sorted(labels)]
            for ex_id, labels in self.known.items()
        }
        (d / "labels.json").write_text(json.dumps(labels_by_name) + "\n", encoding="utf-8")
        metrics_csv = ["iteration,n_labeled,lrap,f1_micro,f1_macro,labels_discovered"]
        for r in self.metrics:
            metrics_csv.append(
                f"{r.iteration},{r.n_labeled},{r.lrap!r},{r.f1_micro!r},"
                f"{r.f1_macro!r},{r.labels_discovered}"
            )
        (d / "metrics.csv").write_text("\n".join(metrics_csv) + "\n", encoding="utf-8")
        if self.params is not None:
            mdl.save_params(self.params, d / "checkpoint.npz")

    @classmethod
    def load(cls, root: Path, session_id: str) -> "Session":
        d = root / session_id
        if not (d / "meta.json").exists():
            raise ApiError(404, "not_found", f"no persisted session {session_id!r}")
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        config = service_config_from_dict(meta["config"])
        session = cls.__new__(cls)
        session.id = meta["id"]
        session.dataset_path = meta["dataset_path"]
        session.config = config
        session.root = root
        session.lock = threading.Lock()

        dataset = load_dataset(session.dataset_path)
        vocab_names = [
            ln for ln in (d / "vocab.txt").read_text(encoding="utf-8").splitlines() if ln
        ]
        session.vocab = LabelVocabulary(vocab_names)
        session.simulate = meta["simulate"]
        if session.simulate:
            train_ds, test_ds = split(dataset, config.split_ratio, config.seed)
            session.work, session.test = train_ds, test_ds
            session.truth = {ex.id: ex.labels for ex in train_ds.examples}
        else:
            session.work, session.test, session.truth = dataset, None, None

        pool_raw = json.loads((d / "pool.json").read_text(encoding="utf-8"))
        session.pool = Pool(labeled=pool_raw["labeled"], unlabeled=pool_raw["unlabeled"])
        labels_raw = json.loads((d / "labels.json").read_text(encoding="utf-8"))
        session.known = {
            ex_id: frozenset(session.vocab.index(n) for n in names)
            for ex_id, names in labels_raw.items()
        }
        session.pending = list(meta["pending"])
        session.metrics = [MetricsRecord(**r) for r in meta["metrics"]]
        session.retrains = meta["retrains"]
        session.projection = meta.get("projection")
        session.cluster_record = meta.get("cluster")
        session.params = None
        ckpt = d / "checkpoint.npz"
        if ckpt.exists():
            session.params = mdl.load_params(ckpt)
        state = meta["state"]
        if state == "training":  # job lost on restart
            state = "awaiting_labels" if session.pending else "idle"
        session.state = state
        return session


def _config_to_dict(cfg: ServiceConfig) -> dict:
    out = asdict(cfg)
    out["acquisition"]["lambda"] = out["acquisition"].pop("lam")
    out["model"] = out.pop("arch")
    return out


def create_app(sessions_root: str | Path, default_background: bool = True):
    """FastAPI application serving the labeling protocol."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    root = Path(sessions_root)
    root.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="altl labeling service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    app.state.sessions = sessions

    def get_session(session_id: str) -> Session:
        with registry_lock:
            if session_id in sessions:
                return sessions[session_id]
        try:
            loaded = Session.load(root, session_id)
        except ApiError:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        with registry_lock:
            sessions.setdefault(session_id, loaded)
            return sessions[session_id]

    @app.exception_handler(ApiError)
    async def on_api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(DataError)
    async def on_data_error(_req: Request, exc: DataError):
        status = 404 if "not found" in str(exc) else 400
        return JSONResponse(
            status_code=status,
            content={"error": {"code": "data_error", "message": str(exc)}},
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "validation", "message": str(exc.errors())}},
        )

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: dict):
        dataset = body.get("dataset")
        if not dataset:
            raise ApiError(400, "bad_request", "body needs a dataset path")
        config = service_config_from_dict(body.get("config") or {})
        if "background" not in (body.get("config") or {}):
            config.background = default_background
        session_id = uuid.uuid4().hex[:12]
        session = Session(session_id, dataset, config, root)
        with registry_lock:
            sessions[session_id] = session
        with session.lock:
            session.persist()
        return session.summary()

    @app.get("/v1/sessions/{session_id}")
    def get_session_summary(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.summary()

    @app.get("/v1/sessions/{session_id}/batch")
    def get_batch(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {"items": session.batch_items(), "vocab": session.vocab.names}

    @app.post("/v1/sessions/{session_id}/labels")
    def post_labels(session_id: str, body: dict):
        session = get_session(session_id)
        assignments = body.get("assignments")
        if not isinstance(assignments, dict):
            raise ApiError(400, "bad_request", "body needs an assignments object")
        create_missing = bool(body.get("create_missing", False))
        with session.lock:
            accepted, start = session.submit_labels(assignments, create_missing)
            session.persist()
        if start:
            session.start_training()
        with session.lock:
            return {"accepted": accepted, "state": session.state}

    @app.post("/v1/sessions/{session_id}/retrain")
    def post_retrain(session_id: str):
        session = get_session(session_id)
        with session.lock:
            if session.state != "idle":
                raise ApiError(
                    409, "wrong_state",
                    f"retrain starts from state idle, session is {session.state}",
                )
            session.state = "training"
        session.start_training()
        with session.lock:
            return {"state": session.state}

    @app.get("/v1/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {"records": session.metrics_records()}

    @app.get("/v1/sessions/{session_id}/projection")
    def get_projection(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {"points": session.projection_points()}

    @app.get("/v1/sessions/{session_id}/labels-vocab")
    def get_vocab(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {"labels": session.vocab.names}

    @app.post("/v1/sessions/{session_id}/labels-vocab", status_code=201)
    def post_vocab(session_id: str, body: dict):
        name = body.get("name")
        session = get_session(session_id)
        with session.lock:
            index = session.add_label_name(name)
            session.persist()
            return {"name": name, "index": index}

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:  # pragma: no cover - dev convenience
        @app.get("/")
        def index():
            return JSONResponse({"service": "altl", "ui": "not built"})
    return app
