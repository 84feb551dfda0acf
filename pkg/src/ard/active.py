"""Budgeted active labeling of the novel pool.

An encoder/discriminator pair is trained adversarially over the labeled and
unlabeled partitions; the discriminator's output is read as the probability
that an instance is still unlabeled, so the top-scoring unlabeled instances
are the most informative to annotate next. Annotation follows an
assign-or-create protocol: a selected instance either reuses an existing
label index or mints the next dense index with a surface name.
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset
from .nn import DenseNet, OptState
from .represent import ReprModel, dataset_matrix, embed_all, predict_known, softmax_ce

PROB_CLAMP = 1e-7

Decision = tuple  # ("assign", index) | ("create", name) | ("exact", index, name)


class ReplayError(RuntimeError):
    """Event log does not reproduce under deterministic re-execution."""


class AnnotationAborted(Exception):
    """Raised by an annotator to deliver only a prefix of its decisions."""

    def __init__(self, decisions: list[Decision]):
        super().__init__(f"annotation aborted after {len(decisions)} decisions")
        self.decisions = decisions


@dataclass(frozen=True)
class ActiveConfig:
    seminal_size: int = 32
    k_per_round: int = 32
    rounds: int = 8
    lambda_e: float = 1.0
    lambda_d: float = 1.0
    disc_lr: float = 0.0005
    enc_lr: float = 0.0005
    cls_lr: float = 0.5
    cls_epochs: int = 200
    inner_epochs: int = 5
    batch_size: int = 64
    disc_hidden: tuple[int, int] = (256, 64)
    enc_out: int = 128
    encoder_frozen: bool = False
    strategy: str = "highest"
    seed: int = 0

    def __post_init__(self):
        if min(self.seminal_size, self.k_per_round, self.batch_size) < 1 or self.rounds < 0:
            raise ValueError("counts must be positive (rounds may be 0)")
        if self.lambda_e < 0 or self.lambda_d < 0:
            raise ValueError("objective weights must be non-negative")
        if self.strategy not in ("highest", "random", "lowest"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class RoundRecord:
    round: int
    selected_ids: list[str]
    disc_confidence_mean: float
    labeled_total: int
    metrics: dict | None = None
    early_stop: bool = False

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "selected_ids": list(self.selected_ids),
            "disc_confidence_mean": self.disc_confidence_mean,
            "labeled_total": self.labeled_total,
            "metrics": self.metrics,
            "early_stop": self.early_stop,
        }


class EventLog:
    """Append-only JSONL sink; keeps events in memory as well."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.events: list[dict] = []
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def append(self, round_no: int, event: str, ids=None, label_index=None,
               label_name=None, disc_confidence_mean=None) -> dict:
        obj = {
            "round": round_no,
            "event": event,
            "ids": list(ids) if ids is not None else None,
            "label_index": label_index,
            "label_name": label_name,
            "disc_confidence_mean": disc_confidence_mean,
            "timestamp": time.time(),
        }
        self.events.append(obj)
        if self._fh:
            self._fh.write(json.dumps(obj) + "\n")
            self._fh.flush()
        return obj

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def read_event_log(path) -> list[dict]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
    return events


@dataclass
class ActiveSession:
    """Evolving state of one labeling run over a fixed instance pool."""

    pool: Dataset
    features: np.ndarray
    encoder: DenseNet
    discriminator: DenseNet
    rng: np.random.Generator
    config: ActiveConfig
    classifier: DenseNet | None = None
    labeled: list[tuple[str, int]] = field(default_factory=list)
    unlabeled: list[str] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)
    history: list[RoundRecord] = field(default_factory=list)
    round: int = 0
    enc_opt: OptState = None
    disc_opt: OptState = None
    _row: dict[str, int] = field(default_factory=dict)
    _unlabeled_set: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.features.shape[0] != len(self.pool):
            raise ValueError("feature rows must match pool size")
        self._row = {inst.id: i for i, inst in enumerate(self.pool)}
        if not self.unlabeled and not self.labeled:
            self.unlabeled = self.pool.ids()
        self._unlabeled_set = set(self.unlabeled)
        if self.enc_opt is None:
            self.enc_opt = OptState("adam", self.config.enc_lr)
        if self.disc_opt is None:
            self.disc_opt = OptState("adam", self.config.disc_lr)

    def rows(self, ids) -> np.ndarray:
        return self.features[[self._row[i] for i in ids]]

    def labeled_ids(self) -> list[str]:
        return [i for i, _ in self.labeled]

    def check_conservation(self):
        combined = set(self.labeled_ids()) | self._unlabeled_set
        if combined != set(self.pool.ids()) or (
            set(self.labeled_ids()) & self._unlabeled_set
        ):
            raise RuntimeError("labeled/unlabeled sets no longer partition the pool")

    def disc_confidence(self, ids) -> np.ndarray:
        """Clamped discriminator outputs for the given instance ids."""
        if len(ids) == 0:
            return np.zeros(0)
        h, _ = nn.forward(self.encoder, self.rows(ids))
        p, _ = nn.forward(self.discriminator, h)
        return np.clip(p[:, 0], PROB_CLAMP, 1.0 - PROB_CLAMP)

    def mean_unlabeled_confidence(self) -> float:
        if not self.unlabeled:
            return float("nan")
        return float(self.disc_confidence(self.unlabeled).mean())


def _clip_probs(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clipped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    return clipped, inside.astype(np.float64)


def encoder_loss(enc: DenseNet, disc: DenseNet, batch_l: np.ndarray, batch_u: np.ndarray):
    """Encoder objective: make labeled instances score high and unlabeled
    low under the discriminator. Returns (loss, encoder gradients)."""
    if len(batch_l) == 0 or len(batch_u) == 0:
        raise ValueError("both batches must be nonempty")
    h_l, ce_l = nn.forward(enc, batch_l)
    h_u, ce_u = nn.forward(enc, batch_u)
    p_l, cd_l = nn.forward(disc, h_l)
    p_u, cd_u = nn.forward(disc, h_u)
    pl, in_l = _clip_probs(p_l)
    pu, in_u = _clip_probs(p_u)
    n_l, n_u = len(batch_l), len(batch_u)
    loss = float(-np.log(pl).mean() - np.log(1.0 - pu).mean())
    dp_l = -in_l / (n_l * pl)
    dp_u = in_u / (n_u * (1.0 - pu))
    _, dh_l = nn.backward(disc, cd_l, dp_l)
    _, dh_u = nn.backward(disc, cd_u, dp_u)
    g_l, _ = nn.backward(enc, ce_l, dh_l)
    g_u, _ = nn.backward(enc, ce_u, dh_u)
    grads = [a + b for a, b in zip(nn.flat_grads(g_l), nn.flat_grads(g_u))]
    return loss, grads


def discriminator_loss(enc: DenseNet, disc: DenseNet, batch_l: np.ndarray, batch_u: np.ndarray):
    """Discriminator objective, the flipped targets: unlabeled scores high.
    Encoder outputs are treated as constants. Returns (loss, disc grads)."""
    if len(batch_l) == 0 or len(batch_u) == 0:
        raise ValueError("both batches must be nonempty")
    h_l, _ = nn.forward(enc, batch_l)
    h_u, _ = nn.forward(enc, batch_u)
    p_l, cd_l = nn.forward(disc, h_l)
    p_u, cd_u = nn.forward(disc, h_u)
    pl, in_l = _clip_probs(p_l)
    pu, in_u = _clip_probs(p_u)
    n_l, n_u = len(batch_l), len(batch_u)
    loss = float(-np.log(1.0 - pl).mean() - np.log(pu).mean())
    dp_l = in_l / (n_l * (1.0 - pl))
    dp_u = -in_u / (n_u * pu)
    g_l, _ = nn.backward(disc, cd_l, dp_l)
    g_u, _ = nn.backward(disc, cd_u, dp_u)
    grads = [a + b for a, b in zip(nn.flat_grads(g_l), nn.flat_grads(g_u))]
    return loss, grads


def joint_update(session: ActiveSession, cfg: ActiveConfig) -> ActiveSession:
    """One round of alternating encoder/discriminator minibatch updates."""
    l_ids, u_ids = session.labeled_ids(), session.unlabeled
    if not l_ids or not u_ids:
        return session
    x_l, x_u = session.rows(l_ids), session.rows(u_ids)
    rng = session.rng
    bsz = cfg.batch_size
    l_order = rng.permutation(len(l_ids))
    li = 0
    for _ in range(cfg.inner_epochs):
        u_order = rng.permutation(len(u_ids))
        for start in range(0, len(u_ids), bsz):
            bu = x_u[u_order[start : start + bsz]]
            take = min(bsz, len(l_ids))
            picked = []
            while len(picked) < take:
                if li >= len(l_order):
                    l_order = rng.permutation(len(l_ids))
                    li = 0
                picked.append(l_order[li])
                li += 1
            bl = x_l[picked]
            _, enc_grads = encoder_loss(session.encoder, session.discriminator, bl, bu)
            if not cfg.encoder_frozen:
                nn.step(session.enc_opt, session.encoder.params(),
                        [cfg.lambda_e * g for g in enc_grads])
            _, disc_grads = discriminator_loss(session.encoder, session.discriminator, bl, bu)
            nn.step(session.disc_opt, session.discriminator.params(),
                    [cfg.lambda_d * g for g in disc_grads])
    return session


def select_informative(session: ActiveSession, k: int) -> list[str]:
    """The k unlabeled ids with the highest discriminator confidence,
    ties broken by ascending id; truncated to the pool."""
    if not session.unlabeled:
        return []
    conf = session.disc_confidence(session.unlabeled)
    ranked = sorted(zip(session.unlabeled, conf), key=lambda t: (-t[1], t[0]))
    return [i for i, _ in ranked[: min(k, len(ranked))]]


def _select_by_strategy(session: ActiveSession, k: int, strategy: str) -> list[str]:
    if strategy == "highest":
        return select_informative(session, k)
    if not session.unlabeled:
        return []
    k = min(k, len(session.unlabeled))
    if strategy == "random":
        picked = session.rng.choice(len(session.unlabeled), size=k, replace=False)
        return [session.unlabeled[i] for i in sorted(picked)]
    conf = session.disc_confidence(session.unlabeled)
    ranked = sorted(zip(session.unlabeled, conf), key=lambda t: (t[1], t[0]))
    return [i for i, _ in ranked[:k]]


class OracleAnnotator:
    """Answers every query with the instance's gold relation name."""

    def decide(self, session: ActiveSession, ids) -> list[Decision]:
        out: list[Decision] = []
        for id in ids:
            gold = session.pool.by_id(id).gold_relation
            if gold is None:
                raise ValueError(f"instance {id!r} has no gold relation for the oracle")
            out.append(("create", str(gold)))
        return out


def apply_decisions(session: ActiveSession, ids, decisions, log: EventLog | None) -> int:
    """Assign-or-create each decided instance, in order; returns the count
    applied. Creations reuse an existing index when the surface name is
    already present, and repeat creations within one batch share the index."""
    name_index = {n: i for i, n in enumerate(session.label_names)}
    applied = 0
    for id, dec in zip(ids, decisions):
        if id not in session._unlabeled_set:
            raise ValueError(f"instance {id!r} is not in the unlabeled pool")
        kind = dec[0]
        if kind == "assign":
            idx = int(dec[1])
            if not 0 <= idx < len(session.label_names):
                raise ValueError(f"assign to unknown label index {idx}")
            name = session.label_names[idx]
        elif kind == "create":
            name = str(dec[1]).strip()
            if not name:
                raise ValueError("created surface name must be nonempty")
            if name in name_index:
                idx = name_index[name]
            else:
                idx = len(session.label_names)
                session.label_names.append(name)
                name_index[name] = idx
        elif kind == "exact":
            idx, name = int(dec[1]), str(dec[2])
            if idx == len(session.label_names):
                session.label_names.append(name)
                name_index[name] = idx
            elif not (0 <= idx < len(session.label_names)
                      and session.label_names[idx] == name):
                raise ReplayError(f"logged label ({idx}, {name!r}) conflicts with state")
        else:
            raise ValueError(f"unknown decision kind {kind!r}")
        session.labeled.append((id, idx))
        session._unlabeled_set.discard(id)
        session.unlabeled.remove(id)
        applied += 1
        if log is not None:
            log.append(session.round, "labeled", ids=[id], label_index=idx, label_name=name)
    return applied


def annotate(session: ActiveSession, ids, annotator, log: EventLog | None = None) -> ActiveSession:
    """Route the selected ids through the annotator and apply its decisions.

    An aborting annotator delivers a prefix; the prefix is applied and the
    remaining ids stay unlabeled.
    """
    missing = [i for i in ids if i not in session._unlabeled_set]
    if missing:
        raise ValueError(f"ids not in unlabeled pool: {missing[:5]}")
    try:
        decisions = annotator.decide(session, ids)
    except AnnotationAborted as abort:
        decisions = abort.decisions
    if len(decisions) > len(ids):
        raise ValueError("annotator returned more decisions than queries")
    apply_decisions(session, ids[: len(decisions)], decisions, log)
    session.check_conservation()
    return session


def train_classifier(session: ActiveSession, cfg: ActiveConfig | None = None) -> ActiveSession:
    """Retrain the label classifier from scratch on everything labeled so
    far; its output width is the current label count."""
    cfg = cfg or session.config
    if not session.labeled:
        raise ValueError("cannot train a classifier with no labeled instances")
    n_classes = len(session.label_names)
    if n_classes == 1:
        warnings.warn("single labeled class: classifier will predict it everywhere")
    x = session.rows(session.labeled_ids())
    y = np.array([idx for _, idx in session.labeled])
    clf = DenseNet.build([session.features.shape[1], n_classes], ["identity"], session.rng)
    opt = OptState("sgd", cfg.cls_lr)
    for _ in range(cfg.cls_epochs):
        logits, cache = nn.forward(clf, x)
        _, dlogits = softmax_ce(logits, y)
        grads, _ = nn.backward(clf, cache, dlogits / len(y))
        nn.step(opt, clf.params(), nn.flat_grads(grads))
    session.classifier = clf
    return session


def classifier_loss(clf: DenseNet, x: np.ndarray, y: np.ndarray) -> tuple[float, list]:
    """Summed cross-entropy of the classifier on (x, y) and its gradients."""
    logits, cache = nn.forward(clf, x)
    loss, dlogits = softmax_ce(logits, y)
    grads, _ = nn.backward(clf, cache, dlogits)
    return loss, nn.flat_grads(grads)


def predict_labels(session: ActiveSession, ds: Dataset, features: np.ndarray | None = None):
    """Classifier label names for the given instances."""
    if session.classifier is None:
        raise ValueError("classifier has not been trained")
    if features is None:
        raise ValueError("features for the dataset are required")
    logits, _ = nn.forward(session.classifier, features)
    return [session.label_names[i] for i in logits.argmax(axis=1)]


def init_session(
    pool: Dataset,
    cfg: ActiveConfig,
    model: ReprModel | None = None,
    features: np.ndarray | None = None,
) -> ActiveSession:
    """Build nets and an empty session over the pool.

    With a pretrained representation model, instances are embedded through
    its trunk and the loop's encoder starts from a copy of that trunk;
    otherwise raw [head ++ tail] features feed a fresh tanh encoder.
    """
    rng = np.random.default_rng(cfg.seed)
    if features is None:
        features = embed_all(model, pool) if model is not None else dataset_matrix(pool)
    feat_dim = features.shape[1]
    if model is not None:
        encoder = model.trunk.copy()
    else:
        encoder = DenseNet.build([feat_dim, cfg.enc_out], ["tanh"], rng)
    h1, h2 = cfg.disc_hidden
    disc = DenseNet.build([encoder.out_dim, h1, h2, 1], ["relu", "relu", "sigmoid"], rng)
    return ActiveSession(
        pool=pool, features=features, encoder=encoder, discriminator=disc,
        rng=rng, config=cfg,
    )


def run_loop(
    x_n_train: Dataset,
    cfg: ActiveConfig,
    annotator,
    model: ReprModel | None = None,
    features: np.ndarray | None = None,
    eval_fn=None,
    log: EventLog | None = None,
    round_hook=None,
) -> tuple[ActiveSession, list[RoundRecord]]:
    """Seed, then iterate adversarial training / selection / annotation /
    classifier retraining for the configured number of rounds.

    ``eval_fn(session) -> dict`` supplies the per-round metric snapshot;
    ``round_hook(session, record)`` runs after each history append. Pool
    exhaustion ends the loop early and is recorded on the last round.
    """
    if len(x_n_train) < cfg.seminal_size:
        raise ValueError(
            f"pool of {len(x_n_train)} is smaller than seminal size {cfg.seminal_size}"
        )
    log = log or EventLog()
    session = init_session(x_n_train, cfg, model=model, features=features)

    seminal_rows = session.rng.choice(len(x_n_train), size=cfg.seminal_size, replace=False)
    seminal_ids = [x_n_train.instances[i].id for i in sorted(seminal_rows)]
    log.append(0, "seeded", ids=seminal_ids)
    annotate(session, seminal_ids, annotator, log)
    train_classifier(session, cfg)
    conf0 = session.mean_unlabeled_confidence()
    record = RoundRecord(
        round=0, selected_ids=[], disc_confidence_mean=conf0,
        labeled_total=len(session.labeled),
        metrics=eval_fn(session) if eval_fn else None,
    )
    session.history.append(record)
    if round_hook:
        round_hook(session, record)

    for round_no in range(1, cfg.rounds + 1):
        if not session.unlabeled:
            session.history[-1].early_stop = True
            break
        session.round = round_no
        joint_update(session, cfg)
        conf = session.mean_unlabeled_confidence()
        ids = _select_by_strategy(session, cfg.k_per_round, cfg.strategy)
        log.append(round_no, "selected", ids=ids, disc_confidence_mean=conf)
        annotate(session, ids, annotator, log)
        train_classifier(session, cfg)
        log.append(round_no, "trained", disc_confidence_mean=conf)
        record = RoundRecord(
            round=round_no, selected_ids=ids, disc_confidence_mean=conf,
            labeled_total=len(session.labeled),
            metrics=eval_fn(session) if eval_fn else None,
        )
        session.history.append(record)
        if round_hook:
            round_hook(session, record)
    return session, session.history


def label_known(x_k: Dataset, model: ReprModel) -> dict[str, str]:
    """Known-relation predictions for the known-looking split, id -> name."""
    return dict(zip(x_k.ids(), predict_known(model, x_k)))


# ---------------------------------------------------------------------------
# Deterministic replay of an event log
# ---------------------------------------------------------------------------


class _ReplayAnnotator:
    """Feeds logged labeling decisions back into the loop, validating that
    the deterministic re-execution selects the same instances; hands off to
    a live annotator once the log is exhausted."""

    def __init__(self, events: list[dict], live=None):
        self.labeled = [e for e in events if e["event"] == "labeled"]
        self.selected = {e["round"]: e["ids"] for e in events if e["event"] == "selected"}
        self.seeded = next((e["ids"] for e in events if e["event"] == "seeded"), None)
        self.pos = 0
        self.live = live
        self.mismatch: str | None = None

    def exhausted(self) -> bool:
        return self.pos >= len(self.labeled)

    def decide(self, session: ActiveSession, ids) -> list[Decision]:
        expected = self.seeded if session.round == 0 else self.selected.get(session.round)
        if expected is not None and list(ids) != list(expected):
            raise ReplayError(
                f"round {session.round}: recomputed selection {list(ids)[:4]}... "
                f"differs from logged {list(expected)[:4]}..."
            )
        out: list[Decision] = []
        for id in ids:
            if self.pos >= len(self.labeled):
                if self.live is not None:
                    rest = self.live.decide(session, list(ids)[len(out):])
                    out.extend(rest)
                return out
            ev = self.labeled[self.pos]
            if ev["ids"] != [id]:
                raise ReplayError(
                    f"logged labeled id {ev['ids']} does not match replayed {id!r}"
                )
            out.append(("exact", ev["label_index"], ev["label_name"]))
            self.pos += 1
        return out


def replay_log(
    x_n_train: Dataset,
    cfg: ActiveConfig,
    events: list[dict],
    model: ReprModel | None = None,
    features: np.ndarray | None = None,
    live_annotator=None,
    eval_fn=None,
    log: EventLog | None = None,
) -> tuple[ActiveSession, list[RoundRecord]]:
    """Re-execute the loop against a recorded event log.

    Training is deterministic given the config seed, so replay reconstructs
    the exact session state; any divergence between the log and the
    recomputation raises ReplayError. When a live annotator is supplied the
    run continues past the end of the log.
    """
    replayer = _ReplayAnnotator(events, live=live_annotator)
    n_labeled = len(replayer.labeled)
    budget = cfg.seminal_size + cfg.rounds * cfg.k_per_round
    if live_annotator is None and n_labeled < min(budget, len(x_n_train)):
        # Replay of a partial log: run only the rounds the log covers.
        covered = max((e["round"] for e in events), default=0)
        cfg = dataclasses.replace(cfg, rounds=covered)
    session, history = run_loop(
        x_n_train, cfg, replayer, model=model, features=features,
        eval_fn=eval_fn, log=log,
    )
    if live_annotator is None and not replayer.exhausted():
        raise ReplayError("event log contains more labeled events than the replay consumed")
    return session, history
