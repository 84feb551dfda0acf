import json
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ard.active import ActiveConfig, ReplayError, run_loop
from ard.data import Dataset, Instance
from ard.service import HumanAnnotator, SessionController, build_app, start_loop_thread


def inst(id, vec, rel):
    v = np.asarray(vec, dtype=np.float32)
    d = len(v) // 2
    return Instance(id=id, tokens=("w0", "w1", "w2", "w3"), head_span=(0, 2),
                    tail_span=(2, 4), head_vec=v[:d], tail_vec=v[d:], gold_relation=rel)


def small_pool(n_classes=3, per_class=12, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, 6)) * 4
    insts = []
    for c in range(n_classes):
        for i in range(per_class):
            insts.append(inst(f"c{c}_{i:02d}", centers[c] + 0.3 * rng.normal(size=6), f"rel_{c}"))
    return Dataset(tuple(insts))


CFG = ActiveConfig(seminal_size=4, k_per_round=3, rounds=2, inner_epochs=1,
                   cls_epochs=40, seed=5)


def start_session(pool=None, cfg=CFG):
    controller = SessionController(exemplars=2)
    pool = pool or small_pool()
    done = threading.Event()
    result = {}

    def runner():
        try:
            result["out"] = run_loop(pool, cfg, HumanAnnotator(controller))
        except Exception as exc:  # noqa: BLE001
            result["error"] = exc
        finally:
            controller.finish(str(result.get("error")) if "error" in result else None)
            done.set()

    thread = threading.Thread(target=runner, daemon=True)
    thread.start()
    client = TestClient(build_app(controller))
    deadline = time.monotonic() + 10
    while controller.batch_snapshot() is None and time.monotonic() < deadline:
        time.sleep(0.01)
    return controller, client, done, result


def oracle_submission(batch, pool):
    decisions = []
    for item in batch["items"]:
        gold = pool.by_id(item["instance_id"]).gold_relation
        matching = [int(i) for i, n in batch["existing_labels"].items() if n == gold]
        if matching:
            decisions.append({"instance_id": item["instance_id"],
                              "action": "assign", "label_index": matching[0]})
        else:
            decisions.append({"instance_id": item["instance_id"],
                              "action": "create", "surface_name": gold})
    return {"batch_id": batch["batch_id"], "decisions": decisions}


def drive_to_completion(controller, client, pool, done, max_batches=20):
    for _ in range(max_batches):
        if done.is_set():
            return
        resp = client.get("/v1/batch")
        if resp.status_code == 204:
            time.sleep(0.02)
            continue
        batch = resp.json()
        out = client.post("/v1/labels", json=oracle_submission(batch, pool))
        assert out.status_code == 200, out.text
    done.wait(timeout=10)


class TestSessionEndpoint:
    def test_404_without_session(self):
        client = TestClient(build_app(SessionController()))
        assert client.get("/v1/session").status_code == 404

    def test_fresh_session_counts(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        assert len(batch["items"]) == CFG.seminal_size
        summary = client.get("/v1/session").json()
        assert summary["round"] == 0
        assert summary["labeled"] == 0
        drive_to_completion(controller, client, pool, done)

    def test_labeled_grows_by_batch(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        resp = client.post("/v1/labels", json=oracle_submission(batch, pool))
        assert resp.status_code == 200
        assert resp.json()["session"]["labeled"] == CFG.seminal_size
        drive_to_completion(controller, client, pool, done)


class TestBatchEndpoint:
    def test_204_when_none_pending(self):
        controller = SessionController()
        client = TestClient(build_app(controller))
        assert client.get("/v1/batch").status_code == 204

    def test_idempotent_and_sorted(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        b1 = client.get("/v1/batch").json()
        b2 = client.get("/v1/batch").json()
        assert b1["batch_id"] == b2["batch_id"]
        confs = [it["disc_confidence"] for it in b1["items"]]
        ids = [it["instance_id"] for it in b1["items"]]
        ranked = sorted(zip(confs, ids), key=lambda t: (-t[0], t[1]))
        assert [i for _, i in ranked] == ids
        assert all(0 < c < 1 for c in confs)
        drive_to_completion(controller, client, pool, done)

    def test_items_carry_spans(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        item = client.get("/v1/batch").json()["items"][0]
        assert item["head_span"] == [0, 2] and item["tail_span"] == [2, 4]
        assert item["tokens"] == ["w0", "w1", "w2", "w3"]
        drive_to_completion(controller, client, pool, done)


class TestLabelSubmission:
    def test_incomplete_submission_422_atomic(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        sub = oracle_submission(batch, pool)
        sub["decisions"] = sub["decisions"][:-1]
        resp = client.post("/v1/labels", json=sub)
        assert resp.status_code == 422
        assert client.get("/v1/session").json()["labeled"] == 0
        assert client.get("/v1/batch").json()["batch_id"] == batch["batch_id"]
        drive_to_completion(controller, client, pool, done)

    def test_duplicate_decisions_422(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        sub = oracle_submission(batch, pool)
        sub["decisions"][1] = sub["decisions"][0]
        assert client.post("/v1/labels", json=sub).status_code == 422
        drive_to_completion(controller, client, pool, done)

    def test_empty_surface_name_422(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        sub = oracle_submission(batch, pool)
        sub["decisions"][0] = {"instance_id": sub["decisions"][0]["instance_id"],
                               "action": "create", "surface_name": "   "}
        assert client.post("/v1/labels", json=sub).status_code == 422
        drive_to_completion(controller, client, pool, done)

    def test_stale_batch_409(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        sub = oracle_submission(batch, pool)
        assert client.post("/v1/labels", json=sub).status_code == 200
        # Re-POST the applied batch: 409 and no state change.
        labeled = client.get("/v1/session").json()["labeled"]
        again = client.post("/v1/labels", json=sub)
        assert again.status_code == 409
        assert client.get("/v1/session").json()["labeled"] == labeled
        assert client.post("/v1/labels",
                           json={"batch_id": "bogus", "decisions": []}).status_code == 409
        drive_to_completion(controller, client, pool, done)

    def test_same_created_name_shares_index(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        decisions = [{"instance_id": it["instance_id"], "action": "create",
                      "surface_name": "all one relation"} for it in batch["items"]]
        resp = client.post("/v1/labels",
                           json={"batch_id": batch["batch_id"], "decisions": decisions})
        assert resp.status_code == 200
        names = resp.json()["session"]["label_names"]
        assert names == {"0": "all one relation"}
        drive_to_completion(controller, client, pool, done)


class TestProgress:
    def test_entries_accumulate(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        drive_to_completion(controller, client, pool, done)
        entries = client.get("/v1/progress").json()
        assert len(entries) == CFG.rounds + 1
        assert [e["round"] for e in entries] == list(range(CFG.rounds + 1))
        assert all("disc_confidence_mean" in e for e in entries)

    def test_exemplars_capped(self):
        pool = small_pool()
        controller, client, done, _ = start_session(pool)
        batch = client.get("/v1/batch").json()
        client.post("/v1/labels", json=oracle_submission(batch, pool))
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            resp = client.get("/v1/batch")
            if resp.status_code == 200:
                batch2 = resp.json()
                break
            time.sleep(0.02)
        for bucket in batch2["exemplars"].values():
            assert len(bucket) <= 2
        drive_to_completion(controller, client, pool, done)


class ScriptedAnnotator:
    """Oracle-mode annotator used only to produce a prior log for restart."""

    def decide(self, session, ids):
        return [("create", session.pool.by_id(i).gold_relation) for i in ids]


class TestRestartRecovery:
    def _serve_cfg(self, tmp_path):
        from ard.config import ExperimentConfig, PathsConfig
        from ard.data import SyntheticSpec

        return ExperimentConfig(
            paths=PathsConfig(out_dir=str(tmp_path / "run")),
            seeds=(0,),
            synthetic=SyntheticSpec(n_known=4, n_novel=3, per_class=24),
            repr=__import__("ard.represent", fromlist=["ReprConfig"]).ReprConfig(epochs=8, seed=0),
            lof=__import__("ard.lof", fromlist=["LofConfig"]).LofConfig(k=10),
            active=ActiveConfig(seminal_size=4, k_per_round=3, rounds=2,
                                inner_epochs=1, cls_epochs=40, seed=0),
        )

    def test_restart_resumes_from_log(self, tmp_path):
        cfg = self._serve_cfg(tmp_path)
        out_dir = tmp_path / "run" / "seed_0"

        # First server: answer only the seminal batch, then stop.
        controller = SessionController()
        start_loop_thread(cfg, controller, out_dir)
        client = TestClient(build_app(controller))
        deadline = time.monotonic() + 15
        while controller.batch_snapshot() is None and time.monotonic() < deadline:
            time.sleep(0.02)
        batch = client.get("/v1/batch").json()
        pool_file = out_dir / "x_n_train.jsonl"
        assert pool_file.exists()
        from ard.data import load_jsonl

        pool = load_jsonl(pool_file)
        assert client.post("/v1/labels",
                           json=oracle_submission(batch, pool)).status_code == 200
        deadline = time.monotonic() + 15
        while controller.batch_snapshot() is None and time.monotonic() < deadline:
            time.sleep(0.02)
        controller.stop()
        time.sleep(0.2)
        events_before = [json.loads(l) for l in (out_dir / "session_log.jsonl").read_text().splitlines()]
        n_labeled_before = sum(1 for e in events_before if e["event"] == "labeled")
        assert n_labeled_before == 4

        # Second server: replays the log, then serves the next batch live.
        controller2 = SessionController()
        start_loop_thread(cfg, controller2, out_dir)
        client2 = TestClient(build_app(controller2))
        deadline = time.monotonic() + 20
        batch2 = None
        while time.monotonic() < deadline:
            resp = client2.get("/v1/batch")
            if resp.status_code == 200:
                batch2 = resp.json()
                break
            time.sleep(0.02)
        assert batch2 is not None
        summary = client2.get("/v1/session").json()
        assert summary["labeled"] == 4
        # finish the session
        for _ in range(10):
            if controller2.done:
                break
            resp = client2.get("/v1/batch")
            if resp.status_code == 200:
                client2.post("/v1/labels", json=oracle_submission(resp.json(), pool))
            else:
                time.sleep(0.05)
        events_after = [json.loads(l) for l in (out_dir / "session_log.jsonl").read_text().splitlines()]
        labeled_after = [e for e in events_after if e["event"] == "labeled"]
        assert len(labeled_after) == len(set(tuple(e["ids"]) for e in labeled_after))

    def test_corrupt_log_refused(self, tmp_path):
        cfg = self._serve_cfg(tmp_path)
        out_dir = tmp_path / "run" / "seed_0"
        out_dir.mkdir(parents=True)
        (out_dir / "session_log.jsonl").write_text(
            json.dumps({"round": 0, "event": "seeded", "ids": ["bogus1", "bogus2"],
                        "label_index": None, "label_name": None,
                        "disc_confidence_mean": None, "timestamp": 0}) + "\n"
        )
        with pytest.raises(ReplayError):
            start_loop_thread(cfg, SessionController(), out_dir)
