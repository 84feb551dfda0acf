"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its measured numbers. Run with `pytest -v` (add -s to
see the lines inline)."""

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from ard import active as act
from ard import nn
from ard.active import ActiveConfig, OracleAnnotator, run_loop
from ard.config import ExperimentConfig, PathsConfig
from ard.data import (
    Dataset,
    SyntheticSpec,
    VariantSpec,
    gen_synthetic,
    make_imbalanced_variant,
    split_novel,
)
from ard.lof import LofConfig, lof_scores, split_known_novel
from ard.metrics import Labeling, MetricReport, ari, bcubed, pair_oracle, v_measure
from ard.nn import DenseNet
from ard.pipeline import ablate_lof, run_single
from ard.represent import ReprConfig, dataset_matrix, pretrain, supcon_loss

from test_lof import brute_lof


def report(name, ok, detail):
    line = f"ACCEPTANCE {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------


def test_lof_exact_oracle():
    t0 = time.monotonic()
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    s = lof_scores(pts, 2)
    corners_exact = bool(np.all(s[:4] == 1.0))
    outlier_err = abs(s[4] - (math.sqrt(32) + 2 * math.sqrt(41)) / 3)

    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(12, 51))
        pool = rng.normal(size=(n, int(rng.integers(2, 7))))
        for k in (2, 5, 10):
            diff = np.abs(lof_scores(pool, k) - brute_lof(pool, k)).max()
            worst = max(worst, float(diff))
    elapsed = time.monotonic() - t0
    report(
        "LOF exact oracle",
        corners_exact and outlier_err <= 1e-9 and worst <= 1e-12 and elapsed < 5.0,
        f"corner==1 {corners_exact}, outlier err {outlier_err:.2e}, "
        f"brute-force max diff {worst:.2e}, {elapsed:.2f}s",
    )


def test_lof_invariances():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(80, 5))
    base = lof_scores(pts, 10)
    worst = 0.0
    for _ in range(20):
        c = float(rng.uniform(0.2, 5.0))
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        t = rng.normal(size=5) * 10
        worst = max(worst, float(np.abs(lof_scores(pts @ q.T * c + t, 10) - base).max()))
    report("LOF similarity invariance", worst <= 1e-9, f"max score drift {worst:.2e}")


def test_split_quality():
    t0 = time.monotonic()
    f1s = []
    for seed in range(5):
        train, test = gen_synthetic(SyntheticSpec(seed=seed))
        model = pretrain(train, ReprConfig(seed=seed))
        known, novel, _ = split_known_novel(test, model, LofConfig())
        tp = sum(1 for i in novel if i.gold_relation.startswith("novel"))
        fn = sum(1 for i in known if i.gold_relation.startswith("novel"))
        prec = tp / max(1, len(novel))
        rec = tp / max(1, tp + fn)
        f1s.append(2 * prec * rec / max(1e-9, prec + rec))
    mean = float(np.mean(f1s))
    elapsed = time.monotonic() - t0
    report(
        "General-OpenRE split quality",
        mean >= 0.90 and elapsed < 30.0,
        f"mean binary F1 {mean:.4f} over 5 seeds, {elapsed:.1f}s",
    )


def _fd_over(params, f, h=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = f()
            p[idx] = orig - h
            down = f()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
            it.iternext()
        out.append(g)
    return out


def _rel(analytic, fd):
    err = max(np.abs(a - b).max() for a, b in zip(analytic, fd))
    scale = max(max(np.abs(b).max() for b in fd), 1e-10)
    return err / scale


def test_gradient_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(99)
    worst = {"supcon": 0.0, "encoder": 0.0, "discriminator": 0.0, "classifier": 0.0}

    for _ in range(20):
        b = int(rng.integers(3, 8))
        z = rng.normal(size=(b, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        y = rng.integers(0, 3, size=b)
        _, grad = supcon_loss(z, y, 0.1)
        zz = z.copy()
        fd = _fd_over([zz], lambda: supcon_loss(zz, y, 0.1)[0])
        worst["supcon"] = max(worst["supcon"], _rel([grad], fd))

    for _ in range(20):
        enc = DenseNet.build([3, 4], ["tanh"], rng)
        disc = DenseNet.build([4, 5, 1], ["relu", "sigmoid"], rng)
        bl = rng.normal(size=(4, 3))
        bu = rng.normal(size=(5, 3))
        _, ge = act.encoder_loss(enc, disc, bl, bu)
        fd = _fd_over(enc.params(), lambda: act.encoder_loss(enc, disc, bl, bu)[0])
        worst["encoder"] = max(worst["encoder"], _rel(ge, fd))
        _, gd = act.discriminator_loss(enc, disc, bl, bu)
        fd = _fd_over(disc.params(), lambda: act.discriminator_loss(enc, disc, bl, bu)[0])
        worst["discriminator"] = max(worst["discriminator"], _rel(gd, fd))

    for _ in range(20):
        clf = DenseNet.build([4, 3], ["identity"], rng)
        x = rng.normal(size=(6, 4))
        y = rng.integers(0, 3, size=6)
        _, gc = act.classifier_loss(clf, x, y)
        fd = _fd_over(clf.params(), lambda: act.classifier_loss(clf, x, y)[0])
        worst["classifier"] = max(worst["classifier"], _rel(gc, fd))

    elapsed = time.monotonic() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 60.0
    report(
        "gradient suite (contrastive, encoder, discriminator, classifier)",
        ok,
        ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", {elapsed:.1f}s",
    )


def test_metric_oracles():
    import random

    l23 = Labeling.from_sequences(["a", "b", "c"], ["A", "B", "B"], ["x", "x", "y"])
    p, r, f = bcubed(l23)
    bc_ok = max(abs(p - 2 / 3), abs(r - 2 / 3), abs(f - 2 / 3)) <= 1e-12
    h, c, v = v_measure(
        Labeling.from_sequences(list("abcd"), [0, 0, 0, 0], ["g1", "g1", "g2", "g2"])
    )
    vm_ok = (h, c, v) == (0.0, 1.0, 0.0)
    ari_ok = abs(ari(l23) + 0.5) <= 1e-12

    rng = random.Random(41)
    worst = 0.0
    for _ in range(200):
        n = rng.randrange(2, 13)
        lab = Labeling.from_sequences(
            range(n),
            [rng.randrange(4) for _ in range(n)],
            [rng.randrange(4) for _ in range(n)],
        )
        worst = max(worst, abs(ari(lab) - pair_oracle(lab)))

    sym_ok = True
    for _ in range(100):
        n = rng.randrange(2, 25)
        lab = Labeling.from_sequences(
            range(n),
            [rng.randrange(4) for _ in range(n)],
            [rng.randrange(4) for _ in range(n)],
        )
        renamed = Labeling(
            pred={k: f"P{v}" for k, v in lab.pred.items()},
            gold={k: f"G{v}" for k, v in lab.gold.items()},
        )
        p1, r1, f1 = bcubed(lab)
        p2, r2, f2 = bcubed(lab.swapped())
        h1, c1, v1 = v_measure(lab)
        h2, c2, v2 = v_measure(lab.swapped())
        sym_ok &= abs(p1 - r2) < 1e-12 and abs(r1 - p2) < 1e-12 and abs(f1 - f2) < 1e-12
        sym_ok &= abs(h1 - c2) < 1e-12 and abs(c1 - h2) < 1e-12 and abs(v1 - v2) < 1e-12
        sym_ok &= abs(ari(lab) - ari(lab.swapped())) < 1e-12
        for a, b in zip(
            bcubed(lab) + v_measure(lab) + (ari(lab),),
            bcubed(renamed) + v_measure(renamed) + (ari(renamed),),
        ):
            sym_ok &= abs(a - b) < 1e-12

    report(
        "metric oracles",
        bc_ok and vm_ok and ari_ok and worst <= 1e-12 and sym_ok,
        f"hand cases exact, ari-vs-pair max {worst:.2e}, invariants {sym_ok}",
    )


# ---------------------------------------------------------------------------
# Loop-level criteria
# ---------------------------------------------------------------------------


def _ordering_pool(seed):
    """Imbalanced clustered novel pool: 24 common + 24 rare classes."""
    _, test = gen_synthetic(SyntheticSpec(
        n_known=2, n_novel=48, per_class=50, cluster_spread=2.2,
        novel_dispersion=1.0, seed=seed))
    novel = Dataset(tuple(i for i in test if i.gold_relation.startswith("novel")))
    discard = {f"novel_{i}": 0.85 for i in range(24, 48)}
    novel = make_imbalanced_variant(
        novel, VariantSpec(kind="imbalanced", discard_table=discard, seed=seed))
    return split_novel(novel, 0.6, seed)


def _ordering_run(seed, strategy):
    xt, xe = _ordering_pool(seed)
    feats_t = dataset_matrix(xt)
    feats_e = dataset_matrix(xe)
    gold = {i.id: i.gold_relation for i in xe}

    def eval_fn(session):
        if session.classifier is None:
            return {}
        pred = dict(zip(xe.ids(), act.predict_labels(session, xe, feats_e)))
        return MetricReport.from_labeling(Labeling(pred=pred, gold=gold)).as_dict()

    cfg = ActiveConfig(seed=1000 + seed, strategy=strategy)
    _, history = run_loop(xt, cfg, OracleAnnotator(), features=feats_t, eval_fn=eval_fn)
    return (history[-1].metrics or {})["b3_f1"]


def test_sampling_strategy_ordering():
    t0 = time.monotonic()
    finals = {s: [] for s in ("highest", "random", "lowest")}
    for seed in range(5):
        for s in finals:
            finals[s].append(_ordering_run(seed, s))
    hi = np.array(finals["highest"])
    rnd = np.array(finals["random"])
    lo = np.array(finals["lowest"])
    elapsed = time.monotonic() - t0
    ok = (
        hi.mean() > rnd.mean() > lo.mean()
        and int((hi > rnd).sum()) >= 4
        and int((rnd > lo).sum()) >= 4
        and elapsed < 600.0
    )
    report(
        "sampling-strategy ordering",
        ok,
        f"highest {hi.mean():.3f} > random {rnd.mean():.3f} > lowest {lo.mean():.3f}; "
        f"signs {int((hi > rnd).sum())}/5 and {int((rnd > lo).sum())}/5, {elapsed:.0f}s",
    )


LOF_ABLATION_CFG = dict(
    synthetic=SyntheticSpec(n_known=64, n_novel=16, per_class=60, novel_dispersion=12.0),
    variant=VariantSpec(kind="noisy", noise_fraction=0.40),
    seeds=(0, 1, 2, 3, 4),
)


def test_lof_removal_ablation(tmp_path):
    cfg = ExperimentConfig(paths=PathsConfig(out_dir=str(tmp_path)), **LOF_ABLATION_CFG)
    finals = ablate_lof(cfg)
    w = np.array(finals["with_lof"])
    wo = np.array(finals["without_lof"])
    report(
        "LOF-removal ablation",
        w.mean() > wo.mean(),
        f"with-LOF mean F1 {w.mean():.3f} vs without {wo.mean():.3f} "
        f"({int((w > wo).sum())}/5 seeds)",
    )


BUDGET_CFG = dict(
    synthetic=SyntheticSpec(n_known=8, n_novel=16, per_class=60, novel_dispersion=10.0),
)


def test_budget_accounting(tmp_path):
    cfg = ExperimentConfig(paths=PathsConfig(out_dir=str(tmp_path)), seeds=(0,), **BUDGET_CFG)
    run_single(cfg, 0, tmp_path / "seed_0")
    events = [json.loads(l) for l in (tmp_path / "seed_0" / "session_log.jsonl").read_text().splitlines()]
    labeled = [e for e in events if e["event"] == "labeled"]
    # Alg. 1 consistency: equal oracle gold <-> equal assigned index.
    name_of_index = {}
    consistent = True
    for e in labeled:
        idx, name = e["label_index"], e["label_name"]
        if idx in name_of_index:
            consistent &= name_of_index[idx] == name
        name_of_index[idx] = name
    unique_names = len(set(name_of_index.values())) == len(name_of_index)
    report(
        "budget accounting",
        len(labeled) == 288 and consistent and unique_names,
        f"{len(labeled)} labeled events, index<->name consistent {consistent and unique_names}",
    )


def test_determinism_byte_identical(tmp_path):
    cfg = ExperimentConfig(paths=PathsConfig(out_dir=str(tmp_path)), seeds=(0,), **BUDGET_CFG)
    run_single(cfg, 0, tmp_path / "a")
    run_single(cfg, 0, tmp_path / "b")
    a = (tmp_path / "a" / "metric_report.json").read_bytes()
    b = (tmp_path / "b" / "metric_report.json").read_bytes()
    report("determinism", a == b, f"metric JSON identical over two runs ({len(a)} bytes)")


def test_confidence_trend(tmp_path):
    closer = 0
    details = []
    for seed in range(5):
        cfg = ExperimentConfig(
            paths=PathsConfig(out_dir=str(tmp_path / f"s{seed}")), seeds=(seed,), **BUDGET_CFG
        )
        run_single(cfg, seed, tmp_path / f"s{seed}" / f"seed_{seed}")
        hist = json.loads((tmp_path / f"s{seed}" / f"seed_{seed}" / "history.json").read_text())
        confs = [h["disc_confidence_mean"] for h in hist]
        r1, last = confs[1], confs[-1]
        closer += abs(last - 0.5) < abs(r1 - 0.5)
        details.append(f"{r1:.2f}->{last:.2f}")
    report(
        "discriminator confidence trend",
        closer >= 4,
        f"{closer}/5 seeds closer to 0.5 at the end ({', '.join(details)})",
    )
