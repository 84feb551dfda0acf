"""Relation representations and pretraining of the lightweight head.

An instance's relation representation is the concatenation of its two
entity start-marker vectors. A small trainable trunk (standing in for
encoder fine-tuning, which happens upstream of ingestion) is optimized on
the known-relation train set with cross-entropy plus a temperature-scaled
supervised contrastive term over projected, L2-normalized outputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset, Instance
from .nn import DenseNet, TrainingError


@dataclass(frozen=True)
class ReprConfig:
    tau: float = 0.1
    proj_dim: int = 128
    ce_weight: float = 1.0
    supcon_weight: float = 1.0
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.proj_dim <= 0:
            raise ValueError("projection size must be positive")
        if self.ce_weight < 0 or self.supcon_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class ReprModel:
    """Trunk + contrastive projection + known-relation classification head."""

    trunk: DenseNet
    proj: DenseNet
    class_head: DenseNet
    known_relations: tuple[str, ...]
    curve: list = field(default_factory=list)

    def __post_init__(self):
        if self.trunk.out_dim != self.proj.in_dim:
            raise ValueError("projection input does not compose with trunk output")
        if self.trunk.out_dim != self.class_head.in_dim:
            raise ValueError("class head input does not compose with trunk output")
        if self.class_head.out_dim != len(self.known_relations):
            raise ValueError("class head output must match the known label count")


def relation_repr(inst: Instance) -> np.ndarray:
    """[head ++ tail] start-marker vector of length 2d, in float64."""
    return np.concatenate([inst.head_vec, inst.tail_vec]).astype(np.float64)


def dataset_matrix(ds: Dataset) -> np.ndarray:
    """Stacked relation representations, one row per instance, file order."""
    return np.vstack([relation_repr(i) for i in ds])


def supcon_loss(z: np.ndarray, y, tau: float) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over a batch of projected vectors.

    For each anchor, the candidates are every other row and the positives
    are the other rows sharing its label; anchors without positives
    contribute zero. Rows are expected to be L2-normalized by the caller.
    Returns the summed loss and its exact gradient with respect to ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    b = z.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    if y.shape[0] != b:
        raise ValueError("labels must match batch size")

    sim = (z @ z.T) / tau
    off_diag = ~np.eye(b, dtype=bool)
    pos = (y[:, None] == y[None, :]) & off_diag
    n_pos = pos.sum(axis=1)
    active = n_pos > 0

    shifted = np.where(off_diag, sim, -np.inf)
    row_max = shifted.max(axis=1)
    exps = np.exp(shifted - row_max[:, None])
    denom = exps.sum(axis=1)
    lse = row_max + np.log(denom)
    softmax = exps / denom[:, None]

    per_anchor = np.zeros(b)
    mean_pos_sim = np.zeros(b)
    np.divide(
        (sim * pos).sum(axis=1), n_pos, out=mean_pos_sim, where=active
    )
    per_anchor[active] = lse[active] - mean_pos_sim[active]
    loss = float(per_anchor.sum())

    grad_s = softmax * active[:, None]
    with np.errstate(invalid="ignore"):
        grad_s = grad_s - np.where(active[:, None], pos / np.maximum(n_pos, 1)[:, None], 0.0)
    grad = (grad_s + grad_s.T) @ z / tau
    return loss, grad


def softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy of softmax(logits) against integer labels,
    with the gradient wrt logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    rows = np.arange(len(labels))
    loss = float(-log_probs[rows, labels].sum())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad


def _normalize_rows(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    return p / norms, norms


def build_model(dim2: int, known_relations, cfg: ReprConfig, rng: np.random.Generator) -> ReprModel:
    # The trunk starts as the exact identity map over the ingested
    # representations (the stand-in for a fine-tuned upstream encoder):
    # training then reshapes it without destroying the raw geometry.
    trunk = DenseNet.identity(dim2)
    proj = DenseNet.build([dim2, cfg.proj_dim], ["identity"], rng)
    head = DenseNet.build([dim2, len(known_relations)], ["identity"], rng)
    return ReprModel(trunk, proj, head, tuple(known_relations))


def pretrain(train: Dataset, cfg: ReprConfig) -> ReprModel:
    """Mini-batch training of trunk, projection, and class head on the
    known-relation train set; per-epoch losses are recorded on the model."""
    relations = sorted(train.label_space)
    if len(relations) < 2:
        raise ValueError("pretraining needs at least 2 known relations")
    rel_index = {r: i for i, r in enumerate(relations)}
    x = dataset_matrix(train)
    y = np.array([rel_index[i.gold_relation] for i in train])

    rng = np.random.default_rng(cfg.seed)
    model = build_model(x.shape[1], relations, cfg, rng)
    params = model.trunk.params() + model.proj.params() + model.class_head.params()
    opt = nn.OptState("adam", cfg.lr, weight_decay=cfg.weight_decay)

    n = len(train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ce_total = sc_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            bx, by = x[idx], y[idx]
            bsize = len(idx)

            h, trunk_cache = nn.forward(model.trunk, bx)
            logits, head_cache = nn.forward(model.class_head, h)
            ce, dlogits = softmax_ce(logits, by)
            head_grads, dh_ce = nn.backward(model.class_head, head_cache, dlogits / bsize)

            if bsize >= 2:
                p, proj_cache = nn.forward(model.proj, h)
                zn, norms = _normalize_rows(p)
                sc, dz = supcon_loss(zn, by, cfg.tau)
                # Jacobian of row normalization: (I - zz^T) / ||p||.
                dp = (dz - zn * (dz * zn).sum(axis=1, keepdims=True)) / norms
                proj_grads, dh_sc = nn.backward(model.proj, proj_cache, dp / bsize)
            else:
                sc = 0.0
                proj_grads = [(np.zeros_like(w), np.zeros_like(bv))
                              for w, bv in zip(model.proj.weights, model.proj.biases)]
                dh_sc = np.zeros_like(h)

            dh = cfg.ce_weight * dh_ce + cfg.supcon_weight * dh_sc
            trunk_grads, _ = nn.backward(model.trunk, trunk_cache, dh)

            grads = (
                nn.flat_grads(trunk_grads)
                + [cfg.supcon_weight * g for g in nn.flat_grads(proj_grads)]
                + [cfg.ce_weight * g for g in nn.flat_grads(head_grads)]
            )
            assert len(grads) == len(params)
            nn.step(opt, params, grads)
            ce_total += ce
            sc_total += sc
        ce_epoch, sc_epoch = ce_total / n, sc_total / n
        total = cfg.ce_weight * ce_epoch + cfg.supcon_weight * sc_epoch
        if not np.isfinite(total):
            raise TrainingError(f"pretraining diverged at epoch {epoch}: loss={total}")
        model.curve.append((epoch, ce_epoch, sc_epoch, total))
    return model


def embed_all(model: ReprModel, ds: Dataset) -> np.ndarray:
    """Trunk outputs for every instance, one row each, order preserved."""
    if len(ds) == 0:
        return np.zeros((0, model.trunk.out_dim))
    out, _ = nn.forward(model.trunk, dataset_matrix(ds))
    return out


def predict_known(model: ReprModel, ds: Dataset) -> list[str]:
    """Known-relation names assigned by the classification head."""
    if len(ds) == 0:
        return []
    h = embed_all(model, ds)
    logits, _ = nn.forward(model.class_head, h)
    return [model.known_relations[i] for i in logits.argmax(axis=1)]


def train_accuracy(model: ReprModel, ds: Dataset) -> float:
    preds = predict_known(model, ds)
    gold = [i.gold_relation for i in ds]
    return float(np.mean([p == g for p, g in zip(preds, gold)]))


def save_model(model: ReprModel, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(model.trunk, out_dir / "trunk.ardp")
    nn.save_checkpoint(model.proj, out_dir / "proj.ardp")
    nn.save_checkpoint(model.class_head, out_dir / "class_head.ardp")
    (out_dir / "labels.json").write_text(json.dumps(list(model.known_relations)))


def load_model(out_dir) -> ReprModel:
    out_dir = Path(out_dir)
    return ReprModel(
        trunk=nn.load_checkpoint(out_dir / "trunk.ardp"),
        proj=nn.load_checkpoint(out_dir / "proj.ardp"),
        class_head=nn.load_checkpoint(out_dir / "class_head.ardp"),
        known_relations=tuple(json.loads((out_dir / "labels.json").read_text())),
    )


def write_curve_csv(model: ReprModel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "ce", "supcon", "total"])
        for row in model.curve:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
