"""Command-line front end.

Verbs: ingest, make-variant, pretrain, detect, split, loop, serve, eval,
ablate, report. Stage verbs re-derive their upstream stages deterministically
from the config and write only their own artifacts; `eval` runs the full
multi-seed pipeline. Exit codes: 0 success, 1 usage, 2 data error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .data import DataError, load_jsonl, write_embeddings_bin, write_jsonl

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file with dotted section keys")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key (repeatable)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ard", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", help="validate a JSONL dataset, write its embedding sidecar")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("make-variant", help="construct the noisy or imbalanced variant")
    _add_config_args(p)
    p.add_argument("--out-dir")

    for verb, help_text in (
        ("pretrain", "train the representation head, write checkpoints and curves"),
        ("detect", "LOF-split the mixed pool into known/novel"),
        ("split", "split the novel pool into train/test shares"),
        ("loop", "run the oracle-annotated active labeling loop"),
        ("eval", "run the full multi-seed pipeline and aggregate metrics"),
    ):
        p = sub.add_parser(verb, help=help_text)
        _add_config_args(p)

    p = sub.add_parser("serve", help="run the loop behind the HTTP annotation service")
    _add_config_args(p)
    p.add_argument("--bind", help="bind address (overrides ARD_BIND)")
    p.add_argument("--port", type=int, help="port (overrides ARD_PORT)")
    p.add_argument("--ui-dir", help="static files for the annotation client")

    p = sub.add_parser("ablate", help="run an ablation arm comparison")
    _add_config_args(p)
    p.add_argument("--which", required=True, choices=["sampling", "lof", "query-range"])

    p = sub.add_parser("report", help="summarize a completed run directory")
    p.add_argument("--run-dir", required=True)
    return parser


def _load_cfg(args):
    from .config import load_config

    return load_config(getattr(args, "config", None), getattr(args, "overrides", []))


def _single_seed_prefix(cfg, verb: str, out_root: Path):
    """Run the pipeline stages a stage verb depends on, for the first seed."""
    from . import pipeline
    from .config import write_config_snapshot

    seed = cfg.seeds[0]
    out_dir = out_root / f"seed_{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(cfg, out_root / "config.txt")
    train, test = pipeline.stage_data(cfg, seed)
    train, pool = pipeline.stage_variant(cfg, seed, train, test)
    if verb == "make-variant":
        return {"train": train, "pool": pool, "out_dir": out_dir, "seed": seed}
    model = pipeline.stage_pretrain(cfg, seed, train, out_dir)
    if verb == "pretrain":
        return {"model": model, "out_dir": out_dir, "seed": seed}
    x_k, x_n = pipeline.stage_detect(cfg, model, pool, sorted(train.label_space), out_dir)
    if verb == "detect":
        for name, ds in (("x_k", x_k), ("x_n", x_n)):
            if len(ds):
                write_jsonl(ds, out_dir / f"{name}.jsonl", sidecar=f"{name}.arde")
        return {"x_k": x_k, "x_n": x_n, "out_dir": out_dir, "seed": seed}
    x_n_train, x_n_test = pipeline.stage_split(cfg, seed, x_n)
    for name, ds in (("x_n_train", x_n_train), ("x_n_test", x_n_test)):
        if len(ds):
            write_jsonl(ds, out_dir / f"{name}.jsonl", sidecar=f"{name}.arde")
    if verb == "split":
        return {"x_n_train": x_n_train, "x_n_test": x_n_test, "out_dir": out_dir, "seed": seed}
    eval_fn = pipeline.build_eval_fn(model, x_k, x_n_test)
    return {
        "model": model, "x_k": x_k, "x_n_train": x_n_train, "x_n_test": x_n_test,
        "eval_fn": eval_fn, "out_dir": out_dir, "seed": seed,
    }


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        from .pipeline import StageError

        if isinstance(exc, StageError) and isinstance(exc.cause, DataError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _dispatch(args) -> int:
    from . import pipeline

    if args.verb == "ingest":
        ds = load_jsonl(args.input)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_embeddings_bin(ds, out / "embeddings.arde")
        summary = {
            "instances": len(ds),
            "dim": ds.dim,
            "relations": sorted(ds.label_space),
        }
        (out / "ingest.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK

    if args.verb == "report":
        print(pipeline.cmd_report(args.run_dir), end="")
        return EXIT_OK

    cfg = _load_cfg(args)
    out_root = Path(cfg.paths.out_dir)

    if args.verb == "eval":
        agg = pipeline.run_pipeline(cfg)
        print(json.dumps(agg, sort_keys=True, indent=1))
        return EXIT_OK

    if args.verb == "ablate":
        if args.which == "sampling":
            finals = pipeline.ablate_sampling(cfg)
        elif args.which == "lof":
            finals = pipeline.ablate_lof(cfg)
        else:
            finals = {str(k): v for k, v in pipeline.ablate_query_range(cfg).items()}
        print(json.dumps(finals, sort_keys=True, indent=1))
        return EXIT_OK

    if args.verb == "serve":
        from .service import serve_pipeline

        bind = args.bind or os.environ.get("ARD_BIND") or cfg.serve.bind
        port = args.port if args.port is not None else int(
            os.environ.get("ARD_PORT") or cfg.serve.port
        )
        ui_dir = args.ui_dir or cfg.serve.ui_dir or None
        cfg = dataclasses.replace(
            cfg, mode="serve",
            serve=dataclasses.replace(cfg.serve, bind=bind, port=port, ui_dir=ui_dir or ""),
        )
        serve_pipeline(cfg)
        return EXIT_OK

    out_root.mkdir(parents=True, exist_ok=True)
    if args.verb == "make-variant":
        got = _single_seed_prefix(cfg, "make-variant", out_root)
        write_jsonl(got["train"], got["out_dir"] / "variant_train.jsonl", sidecar="variant_train.arde")
        write_jsonl(got["pool"], got["out_dir"] / "variant_test.jsonl", sidecar="variant_test.arde")
        print(f"variant written under {got['out_dir']}")
        return EXIT_OK

    if args.verb in ("pretrain", "detect", "split"):
        got = _single_seed_prefix(cfg, args.verb, out_root)
        print(f"{args.verb} artifacts written under {got['out_dir']}")
        return EXIT_OK

    if args.verb == "loop":
        got = _single_seed_prefix(cfg, "loop", out_root)
        session, history = pipeline.stage_loop(
            cfg, got["seed"], got["model"], got["x_n_train"], got["eval_fn"], got["out_dir"]
        )
        final = history[-1].metrics or {}
        (got["out_dir"] / "metric_report.json").write_text(json.dumps(final, sort_keys=True) + "\n")
        print(json.dumps(final, sort_keys=True))
        return EXIT_OK

    raise AssertionError(f"unhandled verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())
