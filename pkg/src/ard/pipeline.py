"""End-to-end experiment orchestration.

One run: ingest or synthesize data, apply the configured variant, pretrain
the representation head, LOF-split the mixed pool, split the novel side
40/60, run the active-labeling loop on the train share, then score the
merged known + novel-test set. Repeated per seed and aggregated.

Every stage draws its seed from a named substream of the run's root seed,
so ablation arms that share a root seed see identical data and models.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from . import active, represent
from .active import ActiveConfig, EventLog, OracleAnnotator, run_loop
from .config import ExperimentConfig, substream_seed, write_config_snapshot
from .data import (
    DataError,
    Dataset,
    gen_synthetic,
    load_jsonl,
    make_imbalanced_variant,
    make_noisy_variant,
    split_novel,
    write_jsonl,
)
from .lof import LofConfig, split_known_novel, write_lof_csv
from .metrics import Labeling, MetricReport


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _content_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stage(name):
    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        return wrapped
    return deco


@_stage("data")
def stage_data(cfg: ExperimentConfig, root_seed: int) -> tuple[Dataset, Dataset]:
    if cfg.paths.train and cfg.paths.test:
        return load_jsonl(cfg.paths.train), load_jsonl(cfg.paths.test)
    if cfg.paths.train or cfg.paths.test:
        raise DataError("paths.train and paths.test must be given together")
    spec = dataclasses.replace(cfg.synthetic, seed=substream_seed(root_seed, "synthetic"))
    return gen_synthetic(spec)


@_stage("variant")
def stage_variant(cfg: ExperimentConfig, root_seed: int,
                  train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    kind = cfg.variant.kind
    if kind == "original":
        return train, test
    # Variants are built from an original-setting pair: the test side holds
    # novel relations only, and the variant moves known-relation train
    # instances into it (synthetic mixed tests are filtered down first).
    known = train.label_space
    novel_only = Dataset(tuple(i for i in test if i.gold_relation not in known))
    seed = substream_seed(root_seed, "variant")
    noisy_spec = dataclasses.replace(cfg.variant, kind="noisy", seed=seed)
    train2, test2 = make_noisy_variant(train, novel_only, noisy_spec)
    if kind == "noisy":
        return train2, test2
    imb_spec = dataclasses.replace(cfg.variant, kind="imbalanced", seed=seed)
    return train2, make_imbalanced_variant(test2, imb_spec)


@_stage("pretrain")
def stage_pretrain(cfg: ExperimentConfig, root_seed: int, train: Dataset,
                   out_dir: Path) -> represent.ReprModel:
    rcfg = dataclasses.replace(cfg.repr, seed=substream_seed(root_seed, "init"))
    model = represent.pretrain(train, rcfg)
    represent.save_model(model, out_dir / "model")
    represent.write_curve_csv(model, out_dir / "pretrain_curves.csv")
    return model


@_stage("detect")
def stage_detect(cfg: ExperimentConfig, model, pool: Dataset, known_relations,
                 out_dir: Path) -> tuple[Dataset, Dataset]:
    if not cfg.use_lof:
        return Dataset(()), pool
    x_k, x_n, report = split_known_novel(pool, model, cfg.lof)
    write_lof_csv(out_dir / "lof_report.csv", pool, report, known_relations)
    return x_k, x_n


@_stage("split")
def stage_split(cfg: ExperimentConfig, root_seed: int, x_n: Dataset) -> tuple[Dataset, Dataset]:
    return split_novel(
        x_n, cfg.split.train_frac, substream_seed(root_seed, "split"),
        stratified=cfg.split.stratified,
    )


def build_eval_fn(model, x_k: Dataset, x_n_test: Dataset):
    """Per-round metric snapshot on the merged known + novel-test set."""
    known_preds = active.label_known(x_k, model) if len(x_k) else {}
    test_features = represent.embed_all(model, x_n_test) if len(x_n_test) else None
    gold = {i.id: i.gold_relation for i in list(x_k) + list(x_n_test)}
    if any(g is None for g in gold.values()):
        raise DataError("evaluation requires gold relations on the held-out pool")

    def eval_fn(session) -> dict:
        pred = dict(known_preds)
        if test_features is not None and session.classifier is not None:
            names = active.predict_labels(session, x_n_test, test_features)
            pred.update(zip(x_n_test.ids(), names))
        if not pred:
            return {}
        labeling = Labeling(pred={i: pred[i] for i in gold}, gold=gold)
        return MetricReport.from_labeling(labeling).as_dict()

    return eval_fn


@_stage("loop")
def stage_loop(cfg: ExperimentConfig, root_seed: int, model, x_n_train: Dataset,
               eval_fn, out_dir: Path, annotator=None, round_hook=None):
    acfg = dataclasses.replace(cfg.active, seed=substream_seed(root_seed, "loop"))
    annotator = annotator or OracleAnnotator()
    log = EventLog(out_dir / "session_log.jsonl")
    try:
        session, history = run_loop(
            x_n_train, acfg, annotator, model=model,
            eval_fn=eval_fn, log=log, round_hook=round_hook,
        )
    finally:
        log.close()
    (out_dir / "history.json").write_text(
        json.dumps([r.as_dict() for r in history], sort_keys=True, indent=1)
    )
    return session, history


def run_single(cfg: ExperimentConfig, root_seed: int, out_dir,
               annotator=None, round_hook=None) -> dict:
    """One seeded end-to-end run; returns the final metric dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train, test = stage_data(cfg, root_seed)
    inputs = {}
    for label, p in (("train", cfg.paths.train), ("test", cfg.paths.test)):
        if p:
            inputs[label] = {"path": p, "sha256": _content_hash(Path(p))}
    from .config import config_to_kv

    cfg_text = "\n".join(f"{k} = {v}" for k, v in sorted(config_to_kv(cfg).items()))
    (out_dir / "inputs.json").write_text(
        json.dumps(
            {
                "root_seed": root_seed,
                "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
                "files": inputs,
            },
            sort_keys=True, indent=1,
        )
    )

    train, pool = stage_variant(cfg, root_seed, train, test)
    model = stage_pretrain(cfg, root_seed, train, out_dir)
    x_k, x_n = stage_detect(cfg, model, pool, sorted(train.label_space), out_dir)
    x_n_train, x_n_test = stage_split(cfg, root_seed, x_n)
    for name, ds in (("x_k", x_k), ("x_n_train", x_n_train), ("x_n_test", x_n_test)):
        if len(ds):
            write_jsonl(ds, out_dir / f"{name}.jsonl", sidecar=f"{name}.arde")

    eval_fn = build_eval_fn(model, x_k, x_n_test)
    session, history = stage_loop(
        cfg, root_seed, model, x_n_train, eval_fn, out_dir,
        annotator=annotator, round_hook=round_hook,
    )
    final = history[-1].metrics or {}
    (out_dir / "metric_report.json").write_text(
        json.dumps(final, sort_keys=True) + "\n"
    )
    return final


def aggregate_metrics(per_seed: dict[int, dict]) -> dict:
    """Mean and standard deviation per metric column over seeds."""
    agg = {}
    for col in MetricReport.COLUMNS:
        vals = [m[col] for m in per_seed.values() if col in m]
        if vals:
            agg[col] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals)),
            }
    return agg


def write_aggregate_csv(agg: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std"])
        for col in MetricReport.COLUMNS:
            if col in agg:
                writer.writerow([col, repr(agg[col]["mean"]), repr(agg[col]["std"])])


def run_pipeline(cfg: ExperimentConfig, annotator_factory=None) -> dict:
    """All configured seeds plus the mean-and-spread aggregate."""
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(cfg, out_dir / "config.txt")
    per_seed: dict[int, dict] = {}
    for root_seed in cfg.seeds:
        annotator = annotator_factory(root_seed) if annotator_factory else None
        per_seed[root_seed] = run_single(
            cfg, root_seed, out_dir / f"seed_{root_seed}", annotator=annotator
        )
    agg = aggregate_metrics(per_seed)
    (out_dir / "aggregate.json").write_text(json.dumps(agg, sort_keys=True, indent=1))
    write_aggregate_csv(agg, out_dir / "aggregate.csv")
    return agg


# ---------------------------------------------------------------------------
# Ablation drivers
# ---------------------------------------------------------------------------


def _per_round_f1(history) -> list[tuple[int, float]]:
    return [
        (r.round, r.metrics.get("b3_f1", float("nan")) if r.metrics else float("nan"))
        for r in history
    ]


def ablate_sampling(cfg: ExperimentConfig) -> dict:
    """Highest / random / lowest confidence arms over the configured seeds."""
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    finals: dict[str, list[float]] = {}
    for strategy in ("highest", "random", "lowest"):
        arm_cfg = dataclasses.replace(
            cfg, active=dataclasses.replace(cfg.active, strategy=strategy)
        )
        for seed in cfg.seeds:
            arm_dir = out_dir / f"sampling_{strategy}" / f"seed_{seed}"
            run_single(arm_cfg, seed, arm_dir)
            history = json.loads((arm_dir / "history.json").read_text())
            for rec in history:
                f1 = (rec["metrics"] or {}).get("b3_f1")
                rows.append((strategy, seed, rec["round"], f1))
            finals.setdefault(strategy, []).append(
                (history[-1]["metrics"] or {}).get("b3_f1")
            )
    with open(out_dir / "sampling_f1.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "seed", "round", "b3_f1"])
        for row in rows:
            writer.writerow(row)
    return {s: finals[s] for s in finals}


def ablate_lof(cfg: ExperimentConfig) -> dict:
    """Pipeline with the LOF split versus treating the whole pool as novel."""
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    finals: dict[str, list[float]] = {"with_lof": [], "without_lof": []}
    rows = []
    for arm, use_lof in (("with_lof", True), ("without_lof", False)):
        arm_cfg = dataclasses.replace(cfg, use_lof=use_lof)
        for seed in cfg.seeds:
            arm_dir = out_dir / arm / f"seed_{seed}"
            run_single(arm_cfg, seed, arm_dir)
            history = json.loads((arm_dir / "history.json").read_text())
            for rec in history:
                rows.append((arm, seed, rec["round"], (rec["metrics"] or {}).get("b3_f1")))
            finals[arm].append((history[-1]["metrics"] or {}).get("b3_f1"))
    with open(out_dir / "lof_ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "seed", "round", "b3_f1"])
        for row in rows:
            writer.writerow(row)
    return finals


def ablate_query_range(cfg: ExperimentConfig, fractions=(0.1, 0.2, 0.3, 0.4)) -> dict:
    """Sweep the novel-pool train fraction; records, never asserts, the curve."""
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    finals: dict[float, list[float]] = {}
    for frac in fractions:
        arm_cfg = dataclasses.replace(cfg, split=dataclasses.replace(cfg.split, train_frac=frac))
        for seed in cfg.seeds:
            arm_dir = out_dir / f"query_{frac}" / f"seed_{seed}"
            run_single(arm_cfg, seed, arm_dir)
            history = json.loads((arm_dir / "history.json").read_text())
            finals.setdefault(frac, []).append((history[-1]["metrics"] or {}).get("b3_f1"))
    with open(out_dir / "query_range.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_frac", "seed", "final_b3_f1"])
        for frac, vals in sorted(finals.items()):
            for seed, v in zip(cfg.seeds, vals):
                writer.writerow([frac, seed, v])
    return finals


# ---------------------------------------------------------------------------
# Run-directory reporting
# ---------------------------------------------------------------------------


def cmd_report(run_dir) -> str:
    """Emit per-round CSVs and a markdown summary for a completed run."""
    run_dir = Path(run_dir)
    seed_dirs = sorted(run_dir.glob("seed_*"))
    missing = []
    if not (run_dir / "config.txt").exists():
        missing.append("config.txt")
    if not seed_dirs:
        missing.append("seed_*/")
    histories = {}
    for sd in seed_dirs:
        hp = sd / "history.json"
        if hp.exists():
            histories[sd.name] = json.loads(hp.read_text())
        else:
            missing.append(str(hp.relative_to(run_dir)))
    if missing:
        raise DataError(f"run directory {run_dir} is missing artifacts: {missing}")

    names = sorted(histories)
    n_rounds = max(len(h) for h in histories.values())
    with open(run_dir / "confidence_per_round.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round"] + names)
        for r in range(n_rounds):
            row = [r]
            for n in names:
                h = histories[n]
                row.append(repr(h[r]["disc_confidence_mean"]) if r < len(h) else "")
            writer.writerow(row)
    with open(run_dir / "f1_per_round.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round"] + names)
        for r in range(n_rounds):
            row = [r]
            for n in names:
                h = histories[n]
                v = (h[r]["metrics"] or {}).get("b3_f1") if r < len(h) else None
                row.append(repr(v) if v is not None else "")
            writer.writerow(row)

    lines = [f"# Run report: {run_dir.name}", ""]
    agg_path = run_dir / "aggregate.json"
    if agg_path.exists():
        agg = json.loads(agg_path.read_text())
        lines += ["| metric | mean | std |", "|---|---|---|"]
        for col in MetricReport.COLUMNS:
            if col in agg:
                lines.append(f"| {col} | {agg[col]['mean']:.4f} | {agg[col]['std']:.4f} |")
        lines.append("")
    for n in names:
        h = histories[n]
        last = h[-1]
        lines.append(
            f"- {n}: {len(h)} round records, final mean discriminator confidence "
            f"{last['disc_confidence_mean']:.4f}, labeled {last['labeled_total']}"
        )
    text = "\n".join(lines) + "\n"
    (run_dir / "summary.md").write_text(text)
    return text
