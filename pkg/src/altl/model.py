"""Two-stage MLP multi-label classifier, written directly in numpy.

Stage 1 maps the embedding through two ReLU layers; the output is
concatenated with the boolean surface features and fed through stage 2 (two
more ReLU layers) into a final linear map producing one logit per label.
Dropout (inverted scaling) follows every hidden activation during training.
The activations feeding the final linear map are the latent features used by
the acquisition strategies.

Training minimizes cross-entropy between the softmax of the logits and the
multi-hot label vector normalized to sum to 1, with Adam. Gradients are
hand-derived for this fixed architecture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Example
from .rng import stream


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int
    m: int
    n_labels: int
    stage1_widths: tuple[int, int] = (512, 256)
    stage2_widths: tuple[int, int] = (512, 128)
    dropout_rate: float = 0.5
    seed: int = 0

    def validate(self):
        widths = (*self.stage1_widths, *self.stage2_widths)
        if len(self.stage1_widths) != 2 or len(self.stage2_widths) != 2:
            raise ModelError("each stage takes exactly two layer widths")
        if any(w < 1 for w in widths) or self.d < 1 or self.m < 1:
            raise ModelError("all dimensions must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must be in [0, 1)")
        if self.n_labels < 2:
            raise ModelError("need at least 2 labels")
        return self

    def layer_dims(self) -> list[tuple[int, int]]:
        s1, s2 = self.stage1_widths, self.stage2_widths
        return [
            (self.d, s1[0]),
            (s1[0], s1[1]),
            (s1[1] + self.m, s2[0]),
            (s2[0], s2[1]),
            (s2[1], self.n_labels),
        ]


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.001
    minibatch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ModelError("learning_rate must be >= 0")
        if self.minibatch_size < 1:
            raise ModelError("minibatch_size must be >= 1")
        return self


@dataclass
class ModelParams:
    config: ModelConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


def init(config: ModelConfig) -> ModelParams:
    """Scaled-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    config.validate()
    rng = stream(config.seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(config, weights, biases)


def encode_batch(examples: list[Example], config: ModelConfig):
    """Stack examples into (embeddings, surface features, label sets)."""
    emb = np.stack([ex.embedding for ex in examples]).astype(np.float64)
    feats = np.stack([ex.surface_features for ex in examples]).astype(np.float64)
    if emb.shape[1] != config.d:
        raise ModelError(f"embedding dim {emb.shape[1]} != model d {config.d}")
    if feats.shape[1] != config.m:
        raise ModelError(f"feature dim {feats.shape[1]} != model m {config.m}")
    return emb, feats, [ex.labels for ex in examples]


def targets_from_labels(label_sets, n_labels: int) -> np.ndarray:
    """Multi-hot rows normalized to sum to 1."""
    t = np.zeros((len(label_sets), n_labels))
    for i, labels in enumerate(label_sets):
        if not labels:
            raise ModelError("empty label set")
        idx = sorted(labels)
        if idx[-1] >= n_labels:
            raise ModelError(f"label index {idx[-1]} out of range for {n_labels} labels")
        t[i, idx] = 1.0 / len(idx)
    return t


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss(logits: np.ndarray, labels) -> float:
    """Cross-entropy of the normalized multi-hot target against the softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    if not labels:
        raise ModelError("empty label set")
    t = targets_from_labels([labels], logits.shape[-1])[0]
    return float(-(t * log_softmax(logits)).sum())


def _forward(params: ModelParams, emb, feats, masks=None):
    """Returns (logits, cache). `masks` are the per-layer dropout masks
    (already inverted-scaled); None disables dropout."""
    w, b = params.weights, params.biases
    cache = {"emb": emb, "feats": feats, "pre": [], "out": []}
    h = emb
    for layer in range(2):
        pre = h @ w[layer] + b[layer]
        h = np.maximum(pre, 0.0)
        if masks is not None:
            h = h * masks[layer]
        cache["pre"].append(pre)
        cache["out"].append(h)
    z = np.concatenate([h, feats], axis=1)
    cache["concat"] = z
    h = z
    for layer in range(2, 4):
        pre = h @ w[layer] + b[layer]
        h = np.maximum(pre, 0.0)
        if masks is not None:
            h = h * masks[layer]
        cache["pre"].append(pre)
        cache["out"].append(h)
    logits = h @ w[4] + b[4]
    return logits, cache


def _backward(params: ModelParams, cache, dlogits, masks=None):
    """Gradients of the (mean) loss wrt every weight and bias."""
    w = params.weights
    gw = [None] * 5
    gb = [None] * 5
    h4 = cache["out"][3]
    gw[4] = h4.T @ dlogits
    gb[4] = dlogits.sum(axis=0)
    grad = dlogits @ w[4].T
    for layer in (3, 2):
        if masks is not None:
            grad = grad * masks[layer]
        grad = grad * (cache["pre"][layer] > 0)
        inp = cache["concat"] if layer == 2 else cache["out"][layer - 1]
        gw[layer] = inp.T @ grad
        gb[layer] = grad.sum(axis=0)
        grad = grad @ w[layer].T
    s1_out = params.config.stage1_widths[1]
    grad = grad[:, :s1_out]  # surface-feature columns carry no parameters
    for layer in (1, 0):
        if masks is not None:
            grad = grad * masks[layer]
        grad = grad * (cache["pre"][layer] > 0)
        inp = cache["emb"] if layer == 0 else cache["out"][layer - 1]
        gw[layer] = inp.T @ grad
        gb[layer] = grad.sum(axis=0)
        if layer > 0:
            grad = grad @ w[layer].T
    return gw, gb


def loss_and_grads(params: ModelParams, examples: list[Example], masks=None):
    """Mean loss over the batch and its parameter gradients."""
    emb, feats, label_sets = encode_batch(examples, params.config)
    t = targets_from_labels(label_sets, params.config.n_labels)
    return _loss_and_grads_encoded(params, emb, feats, t, masks)


def _loss_and_grads_encoded(params: ModelParams, emb, feats, t, masks=None):
    logits, cache = _forward(params, emb, feats, masks)
    ls = log_softmax(logits)
    value = float(-(t * ls).sum(axis=1).mean())
    dlogits = (np.exp(ls) - t) / emb.shape[0]
    gw, gb = _backward(params, cache, dlogits, masks)
    return value, gw, gb


def _draw_masks(config: ModelConfig, batch: int, rng) -> list[np.ndarray]:
    rate = config.dropout_rate
    widths = [*config.stage1_widths, *config.stage2_widths]
    if rate == 0.0:
        return [np.ones((batch, w)) for w in widths]
    keep = 1.0 - rate
    return [(rng.random((batch, w)) >= rate) / keep for w in widths]


def train(params: ModelParams, examples: list[Example], config: TrainConfig) -> ModelParams:
    """Adam over shuffled minibatches for `epochs`; returns fresh params.

    Dropout is active here and only here. Deterministic given config.seed.
    """
    config.validate()
    if not examples:
        raise ModelError("no training examples")
    for ex in examples:
        if ex.labels is None:
            raise ModelError(f"example {ex.id!r} is unlabeled")
    out = params.copy()
    shuffle_rng = stream(config.seed, "train")
    dropout_rng = stream(config.seed, "dropout")
    n = len(examples)
    all_emb, all_feats, label_sets = encode_batch(examples, out.config)
    all_targets = targets_from_labels(label_sets, out.config.n_labels)
    mw = [np.zeros_like(t) for t in out.weights]
    vw = [np.zeros_like(t) for t in out.weights]
    mb = [np.zeros_like(t) for t in out.biases]
    vb = [np.zeros_like(t) for t in out.biases]
    step = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            rows = order[start : start + config.minibatch_size]
            masks = _draw_masks(out.config, len(rows), dropout_rng)
            _, gw, gb = _loss_and_grads_encoded(
                out, all_emb[rows], all_feats[rows], all_targets[rows], masks
            )
            step += 1
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            for i in range(5):
                for g, p, mm, vv in ((gw[i], out.weights[i], mw[i], vw[i]),
                                     (gb[i], out.biases[i], mb[i], vb[i])):
                    mm *= config.beta1
                    mm += (1.0 - config.beta1) * g
                    vv *= config.beta2
                    vv += (1.0 - config.beta2) * g * g
                    p -= config.learning_rate * (mm / c1) / (np.sqrt(vv / c2) + config.epsilon)
    return out


def logits_of(params: ModelParams, examples: list[Example]) -> np.ndarray:
    emb, feats, _ = encode_batch(examples, params.config)
    logits, _ = _forward(params, emb, feats, masks=None)
    return logits


def scores(params: ModelParams, examples: list[Example]) -> np.ndarray:
    """Softmax probabilities, dropout disabled. Rows sum to 1."""
    return softmax(logits_of(params, examples))


def features(params: ModelParams, examples: list[Example]) -> np.ndarray:
    """Latent representation: the activations feeding the final linear map."""
    emb, feats, _ = encode_batch(examples, params.config)
    _, cache = _forward(params, emb, feats, masks=None)
    return cache["out"][3]


def predict_labels(score_vector, margin: float = 0.2, absolute: bool = False) -> set[int]:
    """Every label whose score is within `margin` of the top score (or above
    the absolute threshold when `absolute`); never empty in relative mode."""
    s = np.asarray(score_vector, dtype=np.float64)
    if absolute:
        picked = set(np.flatnonzero(s >= margin))
        return picked or {int(np.argmax(s))}
    return set(int(j) for j in np.flatnonzero(s >= s.max() - margin))


def save_params(params: ModelParams, path: str | Path):
    """Versioned checkpoint: config header + flat float64 arrays."""
    cfg = params.config
    header = {
        "version": 1,
        "d": cfg.d,
        "m": cfg.m,
        "n_labels": cfg.n_labels,
        "stage1_widths": list(cfg.stage1_widths),
        "stage2_widths": list(cfg.stage2_widths),
        "dropout_rate": cfg.dropout_rate,
        "seed": cfg.seed,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_params(path: str | Path) -> ModelParams:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != 1:
            raise ModelError(f"unsupported checkpoint version {header.get('version')}")
        cfg = ModelConfig(
            d=header["d"],
            m=header["m"],
            n_labels=header["n_labels"],
            stage1_widths=tuple(header["stage1_widths"]),
            stage2_widths=tuple(header["stage2_widths"]),
            dropout_rate=header["dropout_rate"],
            seed=header["seed"],
        )
        weights = [data[f"w{i}"] for i in range(5)]
        biases = [data[f"b{i}"] for i in range(5)]
    return ModelParams(cfg, weights, biases)
