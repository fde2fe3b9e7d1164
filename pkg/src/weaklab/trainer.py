"""Noise-robust classifier trained on weak labels.

The model is deliberately small: hashed unigram+bigram counts feed a
one-hidden-layer softmax classifier, so the whole thing runs on numpy with
hand-derived gradients (checked against finite differences). Training has
two phases:

1. ``init_train`` fits the classifier to the aggregated weak labels of the
   covered samples by mini-batch gradient descent on cross-entropy.
2. ``self_train`` iterates rounds of confidence-thresholded pseudo-labeling
   over *all* samples: predictions above the threshold are sharpened into
   soft targets, and one epoch of descent minimizes cross-entropy plus a
   KL(uniform || p) confidence regularizer plus a margin contrastive loss
   that pulls same-pseudo-label hidden representations together and pushes
   different ones apart.

Everything is deterministic given the config seed; gradient accumulation
within a batch is a fixed-order dense reduction.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "TrainerError",
    "TrainingDivergedError",
    "TrainConfig",
    "FeatureVector",
    "ClassifierParams",
    "TrainReport",
    "RoundStats",
    "featurize",
    "stack_features",
    "predict_proba",
    "predict_proba_batch",
    "sharpen",
    "init_train",
    "self_train",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "load_embeddings",
]

CHECKPOINT_VERSION = 1
SHARPEN_TEMPERATURE = 0.5


class TrainerError(ValueError):
    """Bad shapes, labels or configuration."""


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; carries where it happened."""


@dataclass(frozen=True)
class TrainConfig:
    """All self-training hyperparameters.

    ``threshold`` is the pseudo-label confidence cutoff (values above 0.5
    are the useful regime; lower values admit every sample), ``reg_weight``
    scales the KL(uniform || p) confidence regularizer, ``contrast_weight``
    and ``margin`` control the pairwise hidden-representation loss.
    """

    dim: int = 65536
    hidden: int = 64
    learning_rate: float = 0.1
    epochs: int = 20
    rounds: int = 5
    threshold: float = 0.8
    reg_weight: float = 0.1
    contrast_weight: float = 0.1
    margin: float = 1.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise TrainerError(f"feature dim must be >= 2, got {self.dim}")
        if self.hidden < 1:
            raise TrainerError(f"hidden width must be >= 1, got {self.hidden}")
        if self.learning_rate <= 0:
            raise TrainerError("learning rate must be positive")
        if self.epochs < 0 or self.rounds < 0:
            raise TrainerError("epochs and rounds must be non-negative")
        if not (0.0 <= self.threshold <= 1.0):
            raise TrainerError(f"confidence threshold must lie in [0, 1], got {self.threshold}")
        if self.reg_weight < 0 or self.contrast_weight < 0:
            raise TrainerError("loss weights must be non-negative")
        if self.margin <= 0:
            raise TrainerError(f"contrastive margin must be positive, got {self.margin}")
        if self.batch_size < 1:
            raise TrainerError("batch size must be >= 1")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureVector:
    """L2-normalized sparse bag of hashed n-gram counts."""

    dim: int
    values: Mapping[int, float]

    def __post_init__(self) -> None:
        for idx in self.values:
            if not (0 <= idx < self.dim):
                raise TrainerError(f"feature index {idx} outside [0, {self.dim})")

    def norm(self) -> float:
        return float(np.sqrt(sum(v * v for v in self.values.values())))


def _hash_ngram(key: str, dim: int) -> int:
    return zlib.crc32(key.encode("utf-8")) % dim


def featurize(tokens: Sequence[str], dim: int) -> FeatureVector:
    """Hash unigram and adjacent-bigram counts into ``dim`` buckets, L2-normalized.

    Hash collisions fold counts into the same bucket. Empty input gives the
    zero vector.
    """
    if dim < 2:
        raise TrainerError(f"feature dim must be >= 2, got {dim}")
    toks = list(tokens)
    counts: dict[int, float] = {}
    for tok in toks:
        idx = _hash_ngram(tok, dim)
        counts[idx] = counts.get(idx, 0.0) + 1.0
    for a, b in zip(toks, toks[1:]):
        idx = _hash_ngram(f"{a}_{b}", dim)
        counts[idx] = counts.get(idx, 0.0) + 1.0
    norm = np.sqrt(sum(v * v for v in counts.values()))
    if norm > 0:
        counts = {i: v / norm for i, v in counts.items()}
    return FeatureVector(dim, counts)


def stack_features(features: Sequence[FeatureVector], dim: int | None = None) -> sp.csr_matrix:
    """Stack feature vectors into a CSR matrix, one row per sample."""
    if not features:
        raise TrainerError("cannot stack an empty feature list")
    dims = {f.dim for f in features}
    if len(dims) > 1:
        raise TrainerError(f"inconsistent feature dims {sorted(dims)}")
    d = dim if dim is not None else dims.pop()
    rows, cols, vals = [], [], []
    for i, f in enumerate(features):
        for idx, val in f.values.items():
            rows.append(i)
            cols.append(idx)
            vals.append(val)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(features), d))


def _as_csr(features, dim: int) -> sp.csr_matrix:
    if sp.issparse(features):
        return features.tocsr()
    if isinstance(features, np.ndarray):
        return sp.csr_matrix(features)
    return stack_features(features, dim)


@dataclass
class ClassifierParams:
    """Weights of the one-hidden-layer softmax classifier."""

    W1: np.ndarray  # (hidden, dim)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (classes, hidden)
    b2: np.ndarray  # (classes,)

    def __post_init__(self) -> None:
        h, d = self.W1.shape
        c, h2 = self.W2.shape
        if self.b1.shape != (h,) or h2 != h or self.b2.shape != (c,):
            raise TrainerError(
                f"inconsistent parameter shapes: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.W2.shape}, b2 {self.b2.shape}"
            )
        for arr in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise TrainerError("parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.W1, self.b1, self.W2, self.b2):
            digest.update(str(arr.shape).encode())
            digest.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return digest.hexdigest()[:16]

    @classmethod
    def init(cls, dim: int, hidden: int, n_classes: int, rng: np.random.Generator,
             scale: float = 0.1) -> "ClassifierParams":
        return cls(
            W1=rng.normal(0.0, scale, size=(hidden, dim)),
            b1=np.zeros(hidden),
            W2=rng.normal(0.0, scale, size=(n_classes, hidden)),
            b2=np.zeros(n_classes),
        )


@dataclass(frozen=True)
class RoundStats:
    round: int
    confident: int
    mean_confidence: float
    loss: float | None


@dataclass(frozen=True)
class TrainReport:
    """Per-round self-training diagnostics plus the final parameter checksum."""

    rounds: tuple[RoundStats, ...]
    final_checksum: str
    stopped_early_at: int | None = None

    def to_dict(self) -> dict:
        return {
            "rounds": [asdict(r) for r in self.rounds],
            "final_checksum": self.final_checksum,
            "stopped_early_at": self.stopped_early_at,
        }


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(params: ClassifierParams, X: sp.csr_matrix):
    Z1 = X.dot(params.W1.T) + params.b1
    H = np.maximum(Z1, 0.0)
    logits = H @ params.W2.T + params.b2
    return Z1, H, logits


def predict_proba_batch(params: ClassifierParams, X) -> np.ndarray:
    """Class probabilities, one row per sample; rows sum to 1."""
    X = _as_csr(X, params.input_dim)
    if X.shape[1] != params.input_dim:
        raise TrainerError(
            f"feature dim {X.shape[1]} does not match classifier input {params.input_dim}"
        )
    _, _, logits = _forward(params, X)
    return np.exp(_log_softmax(logits))


def predict_proba(params: ClassifierParams, x: FeatureVector) -> np.ndarray:
    """Class probabilities for a single feature vector."""
    return predict_proba_batch(params, stack_features([x], x.dim))[0]


def sharpen(p: np.ndarray, temperature: float = SHARPEN_TEMPERATURE) -> np.ndarray:
    """Raise a distribution to 1/temperature and renormalize; keeps the argmax."""
    powered = np.power(p, 1.0 / temperature)
    return powered / powered.sum(axis=-1, keepdims=True)


def _contrast_weights(H: np.ndarray, y: np.ndarray, margin: float):
    """Pairwise loss and the symmetric weight matrix for its gradient.

    For an unordered batch pair: same pseudo-label costs squared distance,
    different labels cost squared hinge max(0, margin - distance). The
    gradient of the pair sum w.r.t. H is (row-sums(W) * H - W @ H) with the
    returned weights.
    """
    B = H.shape[0]
    n_pairs = B * (B - 1) // 2
    if n_pairs == 0:
        return 0.0, None, 0
    diffs = H[:, None, :] - H[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
    dist = np.sqrt(np.maximum(d2, 0.0))
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    diff_mask = ~same
    np.fill_diagonal(diff_mask, False)
    hinge = np.maximum(margin - dist, 0.0)
    upper = np.triu(np.ones((B, B), dtype=bool), k=1)
    loss = float(d2[same & upper].sum() + (hinge[diff_mask & upper] ** 2).sum())
    W = np.zeros((B, B))
    W[same] = 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        repel = np.where(
            (hinge > 0) & (dist > 1e-12), -2.0 * hinge / np.where(dist > 0, dist, 1.0), 0.0
        )
    W[diff_mask] = repel[diff_mask]
    return loss / n_pairs, W / n_pairs, n_pairs


def _loss_and_grads(
    params: ClassifierParams,
    X: sp.csr_matrix,
    Q: np.ndarray,
    reg_weight: float,
    contrast_weight: float,
    margin: float,
):
    """Mean loss over the batch and gradients for every parameter array.

    Loss = CE(p, q) + reg_weight * KL(uniform || p)
         + contrast_weight * mean-pair contrastive term on the hidden layer.
    Targets Q are fixed (no gradient flows through them).
    """
    B = X.shape[0]
    C = Q.shape[1]
    Z1, H, logits = _forward(params, X)
    logp = _log_softmax(logits)
    P = np.exp(logp)

    ce = -float((Q * logp).sum()) / B
    loss = ce
    dlogits = (P - Q) / B

    if reg_weight > 0:
        uniform = 1.0 / C
        kl = float((-np.log(C) - logp.mean(axis=1)).sum()) / B
        loss += reg_weight * kl
        dlogits += reg_weight * (P - uniform) / B

    dH = dlogits @ params.W2
    if contrast_weight > 0:
        y = Q.argmax(axis=1)
        c_loss, W, n_pairs = _contrast_weights(H, y, margin)
        if n_pairs:
            loss += contrast_weight * c_loss
            G = W.sum(axis=1)[:, None] * H - W @ H
            dH += contrast_weight * G

    dZ1 = dH * (Z1 > 0)
    # W1's gradient is nonzero only in feature columns the batch touches,
    # so it travels in compact (columns, block) form.
    cols = np.unique(X.indices) if X.nnz else np.empty(0, dtype=int)
    X_sub = np.asarray(X[:, cols].todense()) if cols.size else np.zeros((B, 0))
    grads = {
        "W2": dlogits.T @ H,
        "b2": dlogits.sum(axis=0),
        "W1_cols": cols,
        "W1_block": dZ1.T @ X_sub,
        "b1": dZ1.sum(axis=0),
    }
    return loss, grads


def _sgd_epoch(
    params: ClassifierParams,
    X: sp.csr_matrix,
    Q: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    reg_weight: float,
    contrast_weight: float,
    where: str,
) -> float:
    """One shuffled pass of mini-batch descent, updating params in place."""
    order = rng.permutation(X.shape[0])
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        loss, grads = _loss_and_grads(
            params, X[batch], Q[batch], reg_weight, contrast_weight, cfg.margin
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss {loss} in {where}, batch starting at {start}"
            )
        cols = grads["W1_cols"]
        if cols.size:
            params.W1[:, cols] -= cfg.learning_rate * grads["W1_block"]
        params.b1 -= cfg.learning_rate * grads["b1"]
        params.W2 -= cfg.learning_rate * grads["W2"]
        params.b2 -= cfg.learning_rate * grads["b2"]
        losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


def _targets_from_labels(labels, n_classes: int) -> np.ndarray:
    labels_arr = np.asarray(labels)
    if labels_arr.ndim == 2:
        if labels_arr.shape[1] != n_classes:
            raise TrainerError(
                f"soft targets have {labels_arr.shape[1]} columns for {n_classes} classes"
            )
        if not np.allclose(labels_arr.sum(axis=1), 1.0, atol=1e-6):
            raise TrainerError("soft targets must sum to 1 per row")
        return labels_arr.astype(float)
    if labels_arr.ndim != 1:
        raise TrainerError("labels must be class indices or a (n, classes) matrix")
    if labels_arr.size and (labels_arr.min() < 0 or labels_arr.max() >= n_classes):
        raise TrainerError("label index outside schema range")
    Q = np.zeros((len(labels_arr), n_classes))
    Q[np.arange(len(labels_arr)), labels_arr] = 1.0
    return Q


def init_train(
    features,
    weak_labels,
    cfg: TrainConfig,
    n_classes: int,
) -> ClassifierParams:
    """Fit the classifier to the covered samples' weak labels.

    ``weak_labels`` are hard class indices (or soft target rows) for exactly
    the covered samples, aligned with ``features``. Every class must be
    represented at least once. Deterministic given ``cfg.seed``.
    """
    X = _as_csr(features, cfg.dim)
    if X.shape[0] == 0:
        raise TrainerError("no covered samples to initialize on")
    Q = _targets_from_labels(weak_labels, n_classes)
    if Q.shape[0] != X.shape[0]:
        raise TrainerError(f"{Q.shape[0]} labels for {X.shape[0]} samples")
    present = np.bincount(Q.argmax(axis=1), minlength=n_classes)
    if (present == 0).any():
        missing = int(np.flatnonzero(present == 0)[0])
        raise TrainerError(f"class index {missing} has no covered samples")
    rng = np.random.default_rng(cfg.seed)
    params = ClassifierParams.init(X.shape[1], cfg.hidden, n_classes, rng)
    for epoch in range(cfg.epochs):
        _sgd_epoch(params, X, Q, cfg, rng, 0.0, 0.0, where=f"init epoch {epoch}")
    return params


def self_train(
    params: ClassifierParams,
    all_features,
    cfg: TrainConfig,
) -> tuple[ClassifierParams, TrainReport]:
    """Iterate confidence-thresholded pseudo-labeling rounds.

    Each round predicts over every sample (covered by weak sources or not),
    keeps those whose top probability clears ``cfg.threshold``, sharpens
    their distributions into fixed soft targets, and runs one epoch of
    descent on the full loss. An empty confident set stops early.
    """
    params = params.copy()
    X = _as_csr(all_features, cfg.dim)
    rng = np.random.default_rng([cfg.seed, 1])
    rounds: list[RoundStats] = []
    stopped_early_at: int | None = None
    for round_no in range(1, cfg.rounds + 1):
        P = predict_proba_batch(params, X)
        top = P.max(axis=1)
        confident = np.flatnonzero(top >= cfg.threshold)
        if confident.size == 0:
            stopped_early_at = round_no
            rounds.append(RoundStats(round_no, 0, 0.0, None))
            break
        Q = sharpen(P[confident])
        loss = _sgd_epoch(
            params, X[confident], Q, cfg, rng,
            cfg.reg_weight, cfg.contrast_weight,
            where=f"self-train round {round_no}",
        )
        rounds.append(
            RoundStats(round_no, int(confident.size), float(top[confident].mean()), loss)
        )
    report = TrainReport(tuple(rounds), params.checksum(), stopped_early_at)
    return params, report


def grad_check(
    params: ClassifierParams,
    batch,
    cfg: TrainConfig,
    num_checks: int = 60,
    step: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Probes b1 and b2 fully plus random W2 entries and W1 entries in feature
    columns the batch actually touches (other W1 gradients are exactly zero
    on both routes).
    """
    X, Q = batch
    X = _as_csr(X, cfg.dim)
    Q = np.asarray(Q, dtype=float)
    if X.shape[0] == 0:
        raise TrainerError("grad check needs a non-empty batch")
    rng = np.random.default_rng(seed)

    def loss_at(p: ClassifierParams) -> float:
        loss, _ = _loss_and_grads(
            p, X, Q, cfg.reg_weight, cfg.contrast_weight, cfg.margin
        )
        return loss

    _, grads = _loss_and_grads(
        params, X, Q, cfg.reg_weight, cfg.contrast_weight, cfg.margin
    )
    col_pos = {int(c): k for k, c in enumerate(grads["W1_cols"])}

    active_cols = np.unique(X.indices) if X.nnz else np.arange(params.input_dim)
    coords: list[tuple[str, tuple[int, ...]]] = []
    coords += [("b1", (i,)) for i in range(params.hidden_dim)]
    coords += [("b2", (i,)) for i in range(params.n_classes)]
    for _ in range(max(num_checks, 50)):
        coords.append(
            ("W2", (int(rng.integers(params.n_classes)), int(rng.integers(params.hidden_dim))))
        )
        coords.append(
            ("W1", (int(rng.integers(params.hidden_dim)), int(rng.choice(active_cols))))
        )
    picked_idx = rng.choice(len(coords), size=max(num_checks, 50), replace=False)

    worst = 0.0
    for k in picked_idx:
        name, idx = coords[int(k)]
        probe = params.copy()
        arr = getattr(probe, name)
        original = arr[idx]
        arr[idx] = original + step
        loss_plus = loss_at(probe)
        arr[idx] = original - step
        loss_minus = loss_at(probe)
        arr[idx] = original
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        if name == "W1":
            pos = col_pos.get(idx[1])
            analytic = float(grads["W1_block"][idx[0], pos]) if pos is not None else 0.0
        else:
            analytic = float(grads[name][idx])
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def save_checkpoint(params: ClassifierParams, cfg: TrainConfig, path: str | Path) -> None:
    """Persist parameters with shapes, seed and a config hash for safe reload."""
    meta = json.dumps(
        {"version": CHECKPOINT_VERSION, "seed": cfg.seed, "config_hash": cfg.config_hash()}
    )
    np.savez(
        path,
        W1=params.W1, b1=params.b1, W2=params.W2, b2=params.b2,
        meta=np.array(meta),
    )


def load_checkpoint(path: str | Path, cfg: TrainConfig) -> ClassifierParams:
    """Reload a checkpoint, rejecting one written under a different config."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise TrainerError(f"unsupported checkpoint version {meta.get('version')}")
        if meta.get("config_hash") != cfg.config_hash():
            raise TrainerError(
                "checkpoint config hash mismatch: "
                f"{meta.get('config_hash')} vs {cfg.config_hash()}"
            )
        return ClassifierParams(
            W1=data["W1"], b1=data["b1"], W2=data["W2"], b2=data["b2"]
        )


def load_embeddings(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    """Read precomputed per-sample embeddings: ``id<TAB>v1,v2,...`` lines.

    Replaces hashed featurization when a real encoder's outputs are
    available. All rows must share one dimension.
    """
    path = Path(path)
    embeddings: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            sample_id, sep, rest = line.partition("\t")
            if not sep or not sample_id:
                raise TrainerError(f"{path}:{lineno}: expected id<TAB>comma-separated reals")
            try:
                vec = np.array([float(x) for x in rest.split(",")])
            except ValueError:
                raise TrainerError(f"{path}:{lineno}: non-numeric embedding value") from None
            if not np.all(np.isfinite(vec)):
                raise TrainerError(f"{path}:{lineno}: embedding values must be finite")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise TrainerError(
                    f"{path}:{lineno}: embedding dim {len(vec)} != first row's {dim}"
                )
            if sample_id in embeddings:
                raise TrainerError(f"{path}:{lineno}: duplicate id {sample_id!r}")
            embeddings[sample_id] = vec
    if dim is None:
        raise TrainerError(f"{path}: empty embedding file")
    return embeddings, dim
