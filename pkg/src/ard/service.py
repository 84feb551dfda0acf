"""HTTP boundary for human annotation of the active-labeling loop.

One session per server process. The loop runs in a background thread and
blocks inside its annotator whenever a batch needs labels; the handlers
publish that pending batch, accept exactly one complete submission for it,
and hand the decisions back to the loop. The event log written by the loop
is replayed on restart, and the server refuses to start if the log does not
reproduce under deterministic re-execution.
"""

from __future__ import annotations

import dataclasses
import json
import threading
import time
from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import pipeline
from .active import ActiveConfig, AnnotationAborted, EventLog, ReplayError, read_event_log, replay_log, run_loop
from .config import ExperimentConfig, substream_seed

APPLY_TIMEOUT = 60.0


class ServiceShutdown(Exception):
    pass


class SessionController:
    """Shared state between the loop thread and the HTTP handlers."""

    def __init__(self, exemplars: int = 3):
        self.lock = threading.Condition()
        self.session = None
        self.pending: dict | None = None
        self.submission: list | None = None
        self.applied_batches: set[str] = set()
        self.exemplars = exemplars
        self.done = False
        self.error: str | None = None
        self._seq = 0
        self._stop = False

    # -- loop side ----------------------------------------------------

    def attach(self, session):
        with self.lock:
            self.session = session

    def publish_batch(self, session, ids) -> list:
        """Block the loop until a complete submission arrives; returns decisions."""
        conf = session.disc_confidence(ids)
        order = sorted(range(len(ids)), key=lambda i: (-conf[i], ids[i]))
        items = [
            {
                "instance_id": ids[i],
                "tokens": list(session.pool.by_id(ids[i]).tokens),
                "head_span": list(session.pool.by_id(ids[i]).head_span),
                "tail_span": list(session.pool.by_id(ids[i]).tail_span),
                "disc_confidence": float(conf[i]),
            }
            for i in order
        ]
        with self.lock:
            self.session = session
            self._seq += 1
            self.pending = {
                "batch_id": f"r{session.round}-b{self._seq:04d}",
                "items": items,
                "existing_labels": {str(i): n for i, n in enumerate(session.label_names)},
                "exemplars": self._exemplars(session),
            }
            self.submission = None
            self.lock.notify_all()
            while self.submission is None:
                if self._stop:
                    self.pending = None
                    raise AnnotationAborted([])
                self.lock.wait(timeout=0.2)
            decisions_by_id = {d["instance_id"]: d for d in self.submission}
            self.pending = None
            self.submission = None
        out = []
        for iid in ids:
            d = decisions_by_id[iid]
            if d["action"] == "assign":
                out.append(("assign", int(d["label_index"])))
            else:
                out.append(("create", d["surface_name"]))
        return out

    def _exemplars(self, session) -> dict:
        by_index: dict[str, list] = {}
        for iid, idx in session.labeled:
            bucket = by_index.setdefault(str(idx), [])
            if len(bucket) < self.exemplars:
                inst = session.pool.by_id(iid)
                bucket.append(
                    {
                        "instance_id": inst.id,
                        "tokens": list(inst.tokens),
                        "head_span": list(inst.head_span),
                        "tail_span": list(inst.tail_span),
                    }
                )
        return by_index

    def finish(self, error: str | None = None):
        with self.lock:
            self.done = True
            self.error = error
            self.lock.notify_all()

    def stop(self):
        with self.lock:
            self._stop = True
            self.lock.notify_all()

    # -- HTTP side ----------------------------------------------------

    def summary(self) -> dict | None:
        with self.lock:
            s = self.session
            if s is None:
                return None
            conf = s.history[-1].disc_confidence_mean if s.history else None
            return {
                "round": s.round,
                "labeled": len(s.labeled),
                "unlabeled": len(s.unlabeled),
                "label_names": {str(i): n for i, n in enumerate(s.label_names)},
                "mean_confidence": conf,
                "done": self.done,
            }

    def batch_snapshot(self) -> dict | None:
        with self.lock:
            return json.loads(json.dumps(self.pending)) if self.pending else None

    def submit(self, batch_id: str, decisions: list) -> tuple[int, dict]:
        """Validate and deliver a submission; returns (status, body)."""
        with self.lock:
            if self.session is None:
                return 404, {"detail": "no active session"}
            if batch_id in self.applied_batches:
                return 409, {"detail": f"batch {batch_id} was already applied"}
            if self.pending is None or self.pending["batch_id"] != batch_id:
                return 409, {"detail": f"batch {batch_id} is not pending"}
            expected = {it["instance_id"] for it in self.pending["items"]}
            seen = [d.get("instance_id") for d in decisions]
            if len(seen) != len(set(seen)):
                return 422, {"detail": "duplicate decisions in submission"}
            if set(seen) != expected:
                missing = sorted(expected - set(seen))
                extra = sorted(set(seen) - expected)
                return 422, {"detail": f"incomplete submission: missing={missing} extra={extra}"}
            n_labels = len(self.session.label_names)
            for d in decisions:
                action = d.get("action")
                if action == "assign":
                    idx = d.get("label_index")
                    if not isinstance(idx, int) or not 0 <= idx < n_labels:
                        return 422, {"detail": f"assign to unknown label index {idx!r}"}
                elif action == "create":
                    name = (d.get("surface_name") or "").strip()
                    if not name:
                        return 422, {"detail": "created surface name must be nonempty"}
                else:
                    return 422, {"detail": f"unknown action {action!r}"}
            target = len(self.session.labeled) + len(decisions)
            self.applied_batches.add(batch_id)
            self.submission = decisions
            self.lock.notify_all()
        deadline = time.monotonic() + APPLY_TIMEOUT
        while time.monotonic() < deadline:
            with self.lock:
                if len(self.session.labeled) >= target or self.done:
                    break
            time.sleep(0.01)
        return 200, {"applied": len(decisions), "session": self.summary()}

    def progress(self) -> list:
        with self.lock:
            if self.session is None:
                return []
            return [r.as_dict() for r in self.session.history]


class HumanAnnotator:
    """Annotator backed by the HTTP service's pending-batch hand-off."""

    def __init__(self, controller: SessionController):
        self.controller = controller

    def decide(self, session, ids):
        return self.controller.publish_batch(session, list(ids))


def build_app(controller: SessionController, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="annotation service", version="1")

    @app.get("/v1/session")
    def get_session():
        summary = controller.summary()
        if summary is None:
            return JSONResponse({"detail": "no active session"}, status_code=404)
        return summary

    @app.get("/v1/batch")
    def get_batch():
        batch = controller.batch_snapshot()
        if batch is None:
            return Response(status_code=204)
        return batch

    @app.post("/v1/labels")
    def post_labels(payload: dict):
        batch_id = payload.get("batch_id")
        decisions = payload.get("decisions")
        if not isinstance(batch_id, str) or not isinstance(decisions, list):
            return JSONResponse(
                {"detail": "expected {batch_id, decisions:[...]}"}, status_code=422
            )
        status, body = controller.submit(batch_id, decisions)
        return JSONResponse(body, status_code=status)

    @app.get("/v1/progress")
    def get_progress():
        return controller.progress()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def start_loop_thread(cfg: ExperimentConfig, controller: SessionController,
                      out_dir: Path) -> threading.Thread:
    """Prepare the pipeline stages, then run (or resume) the loop in a thread."""
    root_seed = cfg.seeds[0]
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = pipeline.stage_data(cfg, root_seed)
    train, pool = pipeline.stage_variant(cfg, root_seed, train, test)
    model = pipeline.stage_pretrain(cfg, root_seed, train, out_dir)
    x_k, x_n = pipeline.stage_detect(cfg, model, pool, sorted(train.label_space), out_dir)
    x_n_train, x_n_test = pipeline.stage_split(cfg, root_seed, x_n)
    from .data import write_jsonl

    for name, ds in (("x_k", x_k), ("x_n_train", x_n_train), ("x_n_test", x_n_test)):
        if len(ds):
            write_jsonl(ds, out_dir / f"{name}.jsonl", sidecar=f"{name}.arde")
    eval_fn = pipeline.build_eval_fn(model, x_k, x_n_test)
    acfg: ActiveConfig = dataclasses.replace(cfg.active, seed=substream_seed(root_seed, "loop"))
    annotator = HumanAnnotator(controller)
    log_path = out_dir / "session_log.jsonl"
    prior_events = read_event_log(log_path) if log_path.exists() else []

    def hook(session, record):
        controller.attach(session)

    def runner():
        log = EventLog(log_path)
        try:
            if prior_events:
                session, history = replay_log(
                    x_n_train, acfg, prior_events, model=model,
                    live_annotator=annotator, eval_fn=eval_fn, log=_Muted(log, len(prior_events)),
                )
            else:
                session, history = run_loop(
                    x_n_train, acfg, annotator, model=model,
                    eval_fn=eval_fn, log=log, round_hook=hook,
                )
            controller.attach(session)
            (out_dir / "history.json").write_text(
                json.dumps([r.as_dict() for r in history], sort_keys=True, indent=1)
            )
            final = history[-1].metrics or {}
            (out_dir / "metric_report.json").write_text(json.dumps(final, sort_keys=True) + "\n")
            controller.finish()
        except AnnotationAborted:
            controller.finish("aborted")
        except Exception as exc:  # noqa: BLE001 - thread boundary
            controller.finish(f"{type(exc).__name__}: {exc}")
        finally:
            log.close()

    # Validate a prior log by dry replay before serving.
    if prior_events:
        try:
            replay_log(x_n_train, acfg, prior_events, model=model,
                       live_annotator=None, eval_fn=None)
        except ReplayError:
            raise
    thread = threading.Thread(target=runner, name="ard-loop", daemon=True)
    thread.start()

    # Expose the session as soon as the loop publishes or finishes.
    for _ in range(600):
        if controller.summary() is not None or controller.batch_snapshot() is not None:
            break
        if controller.done:
            break
        time.sleep(0.05)
    return thread


class _Muted:
    """Event sink that skips re-appending the first n already-logged events."""

    def __init__(self, inner: EventLog, skip: int):
        self.inner = inner
        self.skip = skip
        self.events = inner.events

    def append(self, *args, **kwargs):
        if self.skip > 0:
            self.skip -= 1
            obj = {"skipped": True}
            return obj
        return self.inner.append(*args, **kwargs)

    def close(self):
        self.inner.close()


def serve_pipeline(cfg: ExperimentConfig):  # pragma: no cover - manual entry point
    import uvicorn

    controller = SessionController(exemplars=cfg.serve.exemplars)
    out_dir = Path(cfg.paths.out_dir) / f"seed_{cfg.seeds[0]}"
    start_loop_thread(cfg, controller, out_dir)
    app = build_app(controller, ui_dir=cfg.serve.ui_dir or None)
    uvicorn.run(app, host=cfg.serve.bind, port=cfg.serve.port, log_level="warning")
