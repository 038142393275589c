from __future__ import annotations

import base64
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from rrcplat.evalservice import run_worker
from rrcplat.geometry import Quad, rectification_homography
from rrcplat.portal import create_app
from rrcplat.users import UserStore

from helpers import png_bytes, sample_tree
from platform_fixture import E2E_TASK, LOC_TASK, FixturePlatform


@dataclass
class World:
    plat: FixturePlatform
    client: TestClient
    tokens: dict[str, str]
    ids: dict[str, str]

    def auth(self, who: str) -> dict:
        return {"Authorization": f"Bearer {self.tokens[who]}"}


@pytest.fixture
def world(tmp_path) -> World:
    plat = FixturePlatform.build(tmp_path / "store", n_images=4, seed=31)
    users = UserStore(plat.store.root)
    org = users.register("org@example.com", "Olive Organizer", "pw-org", role="organizer")
    alice = users.register("alice@example.com", "Alice", "pw-alice")
    bob = users.register("bob@example.com", "Bob", "pw-bob")
    coll = plat.store.collection("scenes")
    coll.add_member(org.id, "owner", actor="boss")
    coll.add_member(alice.id, "contributor", actor="boss")
    app = create_app(plat.store.root, max_upload=512 * 1024)
    client = TestClient(app, raise_server_exceptions=False)
    tokens = {}
    for who, email, pw in (
        ("org", "org@example.com", "pw-org"),
        ("alice", "alice@example.com", "pw-alice"),
        ("bob", "bob@example.com", "pw-bob"),
    ):
        res = client.post("/api/sessions", json={"email": email, "password": pw})
        tokens[who] = res.json()["token"]
    return World(plat=plat, client=client, tokens=tokens,
                 ids={"org": org.id, "alice": alice.id, "bob": bob.id})


def upload_ok(world: World, who: str = "alice", tid: str = LOC_TASK,
              quality: float = 0.8, seed: int = 5) -> str:
    archive = world.plat.make_submission_zip(tid, quality=quality, seed=seed)
    res = world.client.post(
        f"/api/tasks/{tid}/submissions",
        files={"archive": ("res.zip", archive, "application/zip")},
        data={"method_name": f"Method-{seed}", "description": "test"},
        headers=world.auth(who),
    )
    assert res.status_code == 202, res.text
    return res.json()["id"]


def drain_queue(world: World) -> None:
    run_worker(world.plat.store.root, "test-worker", max_jobs=100, poll=0.01, idle_exit=0.05)


class TestAccounts:
    def test_register_login(self, world):
        res = world.client.post(
            "/api/users",
            json={"email": "carol@example.com", "display_name": "Carol", "password": "pw"},
        )
        assert res.status_code == 201
        assert "password" not in json.dumps(res.json())
        login = world.client.post(
            "/api/sessions", json={"email": "carol@example.com", "password": "pw"}
        )
        assert login.status_code == 200
        assert login.json()["user"]["display_name"] == "Carol"

    def test_duplicate_email(self, world):
        res = world.client.post(
            "/api/users", json={"email": "alice@example.com", "password": "x"}
        )
        assert res.status_code == 409

    def test_bad_credentials(self, world):
        res = world.client.post(
            "/api/sessions", json={"email": "alice@example.com", "password": "nope"}
        )
        assert res.status_code == 401


class TestSubmissions:
    def test_upload_returns_pending_protocols(self, world):
        sid = upload_ok(world)
        res = world.client.get(f"/api/submissions/{sid}", headers=world.auth("alice"))
        assert res.status_code == 200
        assert set(res.json()["protocols"]) == {"iou", "deteval"}

    def test_upload_requires_auth(self, world):
        res = world.client.post(
            f"/api/tasks/{LOC_TASK}/submissions",
            files={"archive": ("res.zip", b"x", "application/zip")},
            data={"method_name": "m"},
        )
        assert res.status_code == 401

    def test_invalid_archive_early_rejected_with_line_errors(self, world):
        buf = io.BytesIO()
        gt_ids = world.plat.gt_data(LOC_TASK).image_ids
        with zipfile.ZipFile(buf, "w") as zf:
            zf.writestr(f"res_{gt_ids[0]}.txt", "0,0,10,0,10,5,0,5\nnot,numbers,at,all\n")
        res = world.client.post(
            f"/api/tasks/{LOC_TASK}/submissions",
            files={"archive": ("res.zip", buf.getvalue(), "application/zip")},
            data={"method_name": "broken"},
            headers=world.auth("alice"),
        )
        assert res.status_code == 422
        report = res.json()["detail"]
        assert not report["ok"]
        err = report["errors"][0]
        assert err["file"] == f"res_{gt_ids[0]}.txt"
        assert err["line"] == 2
        assert err["code"] == "WrongFieldCount"

    def test_oversize_rejected(self, world):
        res = world.client.post(
            f"/api/tasks/{LOC_TASK}/submissions",
            files={"archive": ("res.zip", b"0" * (600 * 1024), "application/zip")},
            data={"method_name": "big"},
            headers=world.auth("alice"),
        )
        assert res.status_code == 413

    def test_unknown_task_404(self, world):
        res = world.client.post(
            f"/api/tasks/none__none/submissions",
            files={"archive": ("res.zip", b"x", "application/zip")},
            data={"method_name": "m"},
            headers=world.auth("alice"),
        )
        assert res.status_code == 404

    def test_owner_sees_private_others_do_not(self, world):
        sid = upload_ok(world, who="alice")
        assert world.client.get(
            f"/api/submissions/{sid}", headers=world.auth("alice")
        ).status_code == 200
        assert world.client.get(
            f"/api/submissions/{sid}", headers=world.auth("bob")
        ).status_code == 403
        assert world.client.get(f"/api/submissions/{sid}").status_code == 403

    def test_visibility_owner_only(self, world):
        sid = upload_ok(world, who="alice")
        res = world.client.put(
            f"/api/submissions/{sid}/visibility",
            json={"visibility": "public"},
            headers=world.auth("bob"),
        )
        assert res.status_code == 403
        res = world.client.put(
            f"/api/submissions/{sid}/visibility",
            json={"visibility": "public"},
            headers=world.auth("alice"),
        )
        assert res.status_code == 200

    def test_portal_serves_worker_bytes_exactly(self, world):
        sid = upload_ok(world)
        drain_queue(world)
        api = world.client.get(
            f"/api/submissions/{sid}/results/iou/overall.json", headers=world.auth("alice")
        )
        from rrcplat.submissions import SubmissionStore

        stored = SubmissionStore(world.plat.store.root).overall_bytes(sid, "iou")
        assert api.content == stored


class TestRankings:
    def test_order_and_tie_break(self, world):
        good = upload_ok(world, seed=1, quality=0.95)
        weak = upload_ok(world, seed=2, quality=0.4)
        drain_queue(world)
        for sid in (good, weak):
            world.client.put(
                f"/api/submissions/{sid}/visibility",
                json={"visibility": "public"},
                headers=world.auth("alice"),
            )
        res = world.client.get(f"/api/tasks/{LOC_TASK}/rankings?protocol=iou")
        rows = res.json()["rows"]
        assert [r["submission"] for r in rows] == [good, weak]
        assert rows[0]["hmean"] >= rows[1]["hmean"]
        assert rows[0]["owner"] == "Alice"

    def test_private_hidden_from_strangers_visible_to_owner(self, world):
        sid = upload_ok(world, who="alice")
        drain_queue(world)
        anon = world.client.get(f"/api/tasks/{LOC_TASK}/rankings?protocol=iou")
        assert anon.json()["rows"] == []
        mine = world.client.get(
            f"/api/tasks/{LOC_TASK}/rankings?protocol=iou", headers=world.auth("alice")
        )
        rows = mine.json()["rows"]
        assert len(rows) == 1 and rows[0]["private"] is True

    def test_unknown_protocol_404(self, world):
        res = world.client.get(f"/api/tasks/{LOC_TASK}/rankings?protocol=nope")
        assert res.status_code == 404

    def test_sota_running_max(self, world):
        sids = [
            upload_ok(world, seed=1, quality=0.55),
            upload_ok(world, seed=2, quality=0.35),
            upload_ok(world, seed=3, quality=0.95),
        ]
        drain_queue(world)
        for sid in sids:
            world.client.put(
                f"/api/submissions/{sid}/visibility",
                json={"visibility": "public"},
                headers=world.auth("alice"),
            )
        series = world.client.get(f"/api/tasks/{LOC_TASK}/sota?protocol=iou").json()["series"]
        hmeans = [p["hmean"] for p in series]
        assert hmeans == sorted(hmeans)
        # same-day uploads collapse to the day's best
        assert len(series) == 1

    def test_sota_empty_without_public(self, world):
        upload_ok(world)
        drain_queue(world)
        series = world.client.get(f"/api/tasks/{LOC_TASK}/sota?protocol=iou").json()["series"]
        assert series == []


class TestPerSample:
    def test_record_includes_pair_values_and_overlays(self, world):
        sid = upload_ok(world, quality=1.0)
        drain_queue(world)
        image = world.plat.gt_data(LOC_TASK).image_ids[0]
        res = world.client.get(
            f"/api/submissions/{sid}/samples/{image}?protocol=iou",
            headers=world.auth("alice"),
        )
        assert res.status_code == 200
        body = res.json()
        assert body["gt"] is not None
        assert all("care" in g and "points" in g for g in body["gt"])
        sample = body["sample"]
        for match in sample["matches"]:
            assert 0.5 <= match["iou"] <= 1.0
        assert isinstance(body["detections"], list)

    def test_foreign_private_403(self, world):
        sid = upload_ok(world, who="alice")
        drain_queue(world)
        image = world.plat.gt_data(LOC_TASK).image_ids[0]
        res = world.client.get(
            f"/api/submissions/{sid}/samples/{image}?protocol=iou",
            headers=world.auth("bob"),
        )
        assert res.status_code == 403

    def test_compare_aligned_records(self, world):
        s1 = upload_ok(world, seed=1)
        s2 = upload_ok(world, seed=2)
        drain_queue(world)
        image = world.plat.gt_data(LOC_TASK).image_ids[1]
        res = world.client.get(
            f"/api/tasks/{LOC_TASK}/compare?ids={s1},{s2}&image={image}&protocol=iou",
            headers=world.auth("alice"),
        )
        methods = res.json()["methods"]
        assert len(methods) == 2
        assert methods[0]["image"] == methods[1]["image"] == image

    def test_compare_empty_ids(self, world):
        res = world.client.get(f"/api/tasks/{LOC_TASK}/compare?ids=&image=x")
        assert res.json()["methods"] == []

    def test_compare_mixed_visibility_403(self, world):
        s1 = upload_ok(world, who="alice", seed=1)
        s2 = upload_ok(world, who="bob", seed=2, tid=LOC_TASK)
        drain_queue(world)
        image = world.plat.gt_data(LOC_TASK).image_ids[0]
        res = world.client.get(
            f"/api/tasks/{LOC_TASK}/compare?ids={s1},{s2}&image={image}",
            headers=world.auth("alice"),
        )
        assert res.status_code == 403


class TestAnnotationFlow:
    def test_reserve_save_submit_review_cycle(self, world):
        iid = world.plat.image_ids[0]
        auth = world.auth("alice")
        res = world.client.post(
            f"/api/collections/scenes/images/{iid}/reserve",
            json={"duration_hours": 2}, headers=auth,
        )
        assert res.status_code == 200
        head = world.client.get(
            f"/api/collections/scenes/images/{iid}/annotation", headers=auth
        ).json()
        res = world.client.put(
            f"/api/collections/scenes/images/{iid}/annotation",
            json={"tree": head["tree"], "expected_head": head["revision"]},
            headers=auth,
        )
        assert res.status_code == 200
        assert res.json()["revision"] == head["revision"] + 1
        res = world.client.post(
            f"/api/collections/scenes/images/{iid}/submit", headers=auth
        )
        assert res.status_code == 200
        res = world.client.post(
            f"/api/collections/scenes/images/{iid}/review",
            json={"action": "approve", "rating": 5},
            headers=world.auth("org"),
        )
        assert res.status_code == 200
        assert res.json()["state"] == "approved"

    def test_save_requires_reservation(self, world):
        iid = world.plat.image_ids[1]
        auth = world.auth("alice")
        head = world.client.get(
            f"/api/collections/scenes/images/{iid}/annotation", headers=auth
        ).json()
        res = world.client.put(
            f"/api/collections/scenes/images/{iid}/annotation",
            json={"tree": head["tree"], "expected_head": head["revision"]},
            headers=auth,
        )
        assert res.status_code == 409
        assert res.json()["error"] == "StaleReservation"

    def test_stale_head_conflict(self, world):
        iid = world.plat.image_ids[2]
        auth = world.auth("alice")
        world.client.post(
            f"/api/collections/scenes/images/{iid}/reserve", json={}, headers=auth
        )
        head = world.client.get(
            f"/api/collections/scenes/images/{iid}/annotation", headers=auth
        ).json()
        res = world.client.put(
            f"/api/collections/scenes/images/{iid}/annotation",
            json={"tree": head["tree"], "expected_head": head["revision"] + 5},
            headers=auth,
        )
        assert res.status_code == 409
        assert res.json()["error"] == "StaleHead"

    def test_dashboard_filtering(self, world):
        iid = world.plat.image_ids[0]
        world.client.post(
            f"/api/collections/scenes/images/{iid}/reserve", json={}, headers=world.auth("alice")
        )
        res = world.client.get(
            "/api/collections/scenes/dashboard?state=reserved", headers=world.auth("org")
        )
        rows = res.json()["rows"]
        assert [r["image"] for r in rows] == [iid]
        assert rows[0]["assignee"] == world.ids["alice"]

    def test_membership_required(self, world):
        res = world.client.get(
            "/api/collections/scenes/dashboard", headers=world.auth("bob")
        )
        assert res.status_code == 403


class TestVerificationEndpoints:
    def _approve(self, world, iid):
        auth = world.auth("alice")
        world.client.post(
            f"/api/collections/scenes/images/{iid}/reserve", json={}, headers=auth
        )
        head = world.client.get(
            f"/api/collections/scenes/images/{iid}/annotation", headers=auth
        ).json()
        world.client.put(
            f"/api/collections/scenes/images/{iid}/annotation",
            json={"tree": head["tree"], "expected_head": head["revision"]},
            headers=auth,
        )
        world.client.post(f"/api/collections/scenes/images/{iid}/submit", headers=auth)
        world.client.post(
            f"/api/collections/scenes/images/{iid}/review",
            json={"action": "approve"}, headers=world.auth("org"),
        )

    def test_board_and_verdict_flow(self, world):
        iid = world.plat.image_ids[0]
        self._approve(world, iid)
        board = world.client.get(
            f"/api/collections/scenes/images/{iid}/verification/in-context",
            headers=world.auth("org"),
        ).json()
        node = board["care"][0]["node_id"]
        res = world.client.post(
            "/api/verification/verdicts",
            json={"collection": "scenes", "image": iid, "node_id": node,
                  "stage": "in_context", "verdict": "dont_care"},
            headers=world.auth("org"),
        )
        assert res.status_code == 200
        assert res.json()["care"] is False
        board2 = world.client.get(
            f"/api/collections/scenes/images/{iid}/verification/in-context",
            headers=world.auth("org"),
        ).json()
        assert node in [c["node_id"] for c in board2["dont_care"]]

    def test_out_of_context_stage_gating_and_determinism(self, world):
        iid = world.plat.image_ids[0]
        self._approve(world, iid)
        res = world.client.post(
            "/api/verification/verdicts",
            json={"collection": "scenes", "image": iid, "node_id": "b1_l1_w1",
                  "stage": "out_of_context", "verdict": "dont_care"},
            headers=world.auth("org"),
        )
        assert res.status_code == 409
        world.client.post(
            f"/api/collections/scenes/images/{iid}/verification/in-context/complete",
            headers=world.auth("org"),
        )
        q1 = world.client.get(
            "/api/collections/scenes/verification/out-of-context?seed=9",
            headers=world.auth("org"),
        ).json()["queue"]
        q2 = world.client.get(
            "/api/collections/scenes/verification/out-of-context?seed=9",
            headers=world.auth("org"),
        ).json()["queue"]
        assert [e["node_id"] for e in q1] == [e["node_id"] for e in q2]


class TestPreviewRectify:
    def test_homography_matches_geometry_module(self, world):
        iid = world.plat.image_ids[0]
        points = [[10, 20], [74, 20], [74, 84], [10, 84]]
        res = world.client.post(
            "/api/preview/rectify",
            json={"collection": "scenes", "image": iid, "points": points},
            headers=world.auth("alice"),
        )
        assert res.status_code == 200
        body = res.json()
        quad = Quad(tuple(tuple(map(float, p)) for p in points))
        expected = rectification_homography(quad, body["width"], body["height"])
        got = np.array(body["homography"])
        assert np.allclose(got, np.array(expected.m), atol=1e-9)

    def test_rectangle_crop_equals_axis_crop(self, world):
        iid = world.plat.image_ids[0]
        coll = world.plat.store.collection("scenes")
        res = world.client.post(
            "/api/preview/rectify",
            json={"collection": "scenes", "image": iid,
                  "points": [[10, 20], [74, 20], [74, 84], [10, 84]]},
            headers=world.auth("alice"),
        )
        crop = np.asarray(
            Image.open(io.BytesIO(base64.b64decode(res.json()["crop_png_base64"])))
        )
        src = np.asarray(Image.open(coll.image_path(iid)).convert("RGB"))
        assert crop.shape == (64, 64, 3)
        assert (crop == src[20:84, 10:74]).all()

    def test_invalid_quad_400(self, world):
        iid = world.plat.image_ids[0]
        res = world.client.post(
            "/api/preview/rectify",
            json={"collection": "scenes", "image": iid,
                  "points": [[0, 0], [10, 5], [10, 0], [0, 5]]},
            headers=world.auth("alice"),
        )
        assert res.status_code == 400

    def test_requires_membership(self, world):
        iid = world.plat.image_ids[0]
        res = world.client.post(
            "/api/preview/rectify",
            json={"collection": "scenes", "image": iid,
                  "points": [[0, 0], [10, 0], [10, 5], [0, 5]]},
            headers=world.auth("bob"),
        )
        assert res.status_code == 403


class TestSequesteredProtection:
    SECRET = "XYZZYSECRETWORD"

    def _sequestered_world(self, world) -> tuple[str, str]:
        store = world.plat.store
        coll = store.collection("scenes")
        data = png_bytes(96, 64, (250, 1, 2))
        rec = coll.import_image(data, "hidden.png", actor="boss").record
        from helpers import word
        from rrcplat.annotations import AnnotationNode
        from rrcplat.geometry import Quad as Q

        tree = (
            AnnotationNode(
                id="b1", granularity="block", region=Q.from_rect(0, 0, 96, 64),
                children=(word("b1_w1", (5, 5, 60, 25), self.SECRET),),
            ),
        )
        coll.save_annotation(rec.id, tree, "boss", expected_head=0)
        coll.assign_subset([rec.id], "sequestered-test", actor="boss")
        world.plat.tasks.define_task(
            "demo", "hidden", "Sequestered Task",
            {"internal": {"collection": "scenes", "subset": "sequestered-test"}},
            "quad+transcription",
            evaluations=[{"id": "e2e", "kind": "end_to_end"}],
        )
        world.plat.tasks.freeze_gt("demo__hidden")
        return "demo__hidden", rec.id

    def _probe_archive(self, world, tid: str) -> bytes:
        # an outsider's submission cannot contain GT text; boxes are a guess
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            for image_id in world.plat.gt_data(tid).image_ids:
                zf.writestr(f"res_{image_id}.txt", "4,4,61,4,61,26,4,26,guess\n")
        return buf.getvalue()

    def test_no_sequestered_gt_bytes_reachable(self, world):
        tid, iid = self._sequestered_world(world)
        archive = self._probe_archive(world, tid)
        res = world.client.post(
            f"/api/tasks/{tid}/submissions",
            files={"archive": ("res.zip", archive, "application/zip")},
            data={"method_name": "probe"},
            headers=world.auth("bob"),
        )
        sid = res.json()["id"]
        drain_queue(world)
        world.client.put(
            f"/api/submissions/{sid}/visibility", json={"visibility": "public"},
            headers=world.auth("bob"),
        )
        paths = [
            "/api/tasks",
            f"/api/tasks/{tid}",
            f"/api/tasks/{tid}/rankings?protocol=e2e",
            f"/api/tasks/{tid}/sota?protocol=e2e",
            f"/api/tasks/{tid}/bundle",
            f"/api/submissions/{sid}",
            f"/api/submissions/{sid}/results/e2e/overall.json",
            f"/api/submissions/{sid}/samples/{iid}?protocol=e2e",
            f"/api/tasks/{tid}/compare?ids={sid}&image={iid}&protocol=e2e",
            f"/api/collections/scenes/images/{iid}",
            f"/api/collections/scenes/images/{iid}/annotation",
        ]
        for headers in ({}, world.auth("bob")):
            for path in paths:
                res = world.client.get(path, headers=headers)
                assert self.SECRET.encode() not in res.content, path

    def test_sequestered_sample_metrics_still_served(self, world):
        tid, iid = self._sequestered_world(world)
        archive = world.plat.make_submission_zip(tid, quality=1.0, seed=1)
        sid = world.client.post(
            f"/api/tasks/{tid}/submissions",
            files={"archive": ("res.zip", archive, "application/zip")},
            data={"method_name": "probe"},
            headers=world.auth("bob"),
        ).json()["id"]
        drain_queue(world)
        res = world.client.get(
            f"/api/submissions/{sid}/samples/{iid}?protocol=e2e", headers=world.auth("bob")
        )
        assert res.status_code == 200
        body = res.json()
        assert body["gt"] is None
        assert body["sample"]["sample_recall"] >= 0.0
        assert world.client.get(f"/api/tasks/{tid}/bundle").status_code == 403


class TestAuthorizationMatrix:
    """Walks endpoints x {anonymous, stranger, member, owner} and checks
    allow/deny; 401/403 mean denied, anything else means authorization
    passed (state errors like 409 still prove the auth gate opened)."""

    def test_matrix(self, world):
        iid = world.plat.image_ids[3]
        sid = upload_ok(world, who="alice")
        drain_queue(world)
        gt_ids = world.plat.gt_data(LOC_TASK).image_ids
        points = [[10, 20], [74, 20], [74, 84], [10, 84]]
        archive = world.plat.make_submission_zip(LOC_TASK, seed=77)

        def submission_upload(headers):
            return world.client.post(
                f"/api/tasks/{LOC_TASK}/submissions",
                files={"archive": ("r.zip", archive, "application/zip")},
                data={"method_name": "mx"}, headers=headers,
            )

        def image_upload(headers):
            return world.client.post(
                "/api/collections/scenes/images",
                files={"image": ("i.png", png_bytes(33, 33, (7, 8, 9)), "image/png")},
                headers=headers,
            )

        # (name, request fn, allowed personas)
        everyone = {"anon", "bob", "alice", "org"}
        authenticated = {"bob", "alice", "org"}
        members = {"alice", "org"}
        cases = [
            ("list tasks", lambda h: world.client.get("/api/tasks", headers=h), everyone),
            ("rankings", lambda h: world.client.get(
                f"/api/tasks/{LOC_TASK}/rankings?protocol=iou", headers=h), everyone),
            ("sota", lambda h: world.client.get(
                f"/api/tasks/{LOC_TASK}/sota?protocol=iou", headers=h), everyone),
            ("bundle", lambda h: world.client.get(
                f"/api/tasks/{LOC_TASK}/bundle", headers=h), everyone),
            ("upload submission", submission_upload, authenticated),
            ("private submission meta", lambda h: world.client.get(
                f"/api/submissions/{sid}", headers=h), {"alice"}),
            ("private per-sample", lambda h: world.client.get(
                f"/api/submissions/{sid}/samples/{gt_ids[0]}?protocol=iou",
                headers=h), {"alice"}),
            ("visibility", lambda h: world.client.put(
                f"/api/submissions/{sid}/visibility",
                json={"visibility": "private"}, headers=h), {"alice"}),
            ("create collection", lambda h: world.client.post(
                "/api/collections", json={"id": f"cx-{len(h)}", "title": "x"},
                headers=h), {"org"}),
            ("add member", lambda h: world.client.post(
                "/api/collections/scenes/members",
                json={"user": world.ids["bob"], "role": "contributor"}, headers=h),
                set()),  # only the store admin "boss" may; nobody here is boss
            ("import image", image_upload, members),
            ("dashboard", lambda h: world.client.get(
                "/api/collections/scenes/dashboard", headers=h), members),
            ("annotation read", lambda h: world.client.get(
                f"/api/collections/scenes/images/{iid}/annotation", headers=h), members),
            ("reserve", lambda h: world.client.post(
                f"/api/collections/scenes/images/{iid}/reserve", json={}, headers=h),
                members),
            ("review", lambda h: world.client.post(
                f"/api/collections/scenes/images/{iid}/review",
                json={"action": "approve"}, headers=h), {"org"}),
            ("subset assignment", lambda h: world.client.post(
                "/api/collections/scenes/subset-assignments",
                json={"image_ids": [iid], "subset": "training"}, headers=h), {"org"}),
            ("board", lambda h: world.client.get(
                f"/api/collections/scenes/images/{iid}/verification/in-context",
                headers=h), members),
            ("out-of-context queue", lambda h: world.client.get(
                "/api/collections/scenes/verification/out-of-context?seed=1",
                headers=h), members),
            ("preview rectify", lambda h: world.client.post(
                "/api/preview/rectify",
                json={"collection": "scenes", "image": iid, "points": points},
                headers=h), members),
        ]
        personas = {
            "anon": {},
            "bob": world.auth("bob"),      # authenticated, not a member
            "alice": world.auth("alice"),  # collection contributor
            "org": world.auth("org"),      # organizer + collection owner
        }
        failures = []
        for name, call, allowed in cases:
            for persona, headers in personas.items():
                res = call(headers)
                denied = res.status_code in (401, 403)
                if persona in allowed and denied:
                    failures.append(f"{name}: {persona} unexpectedly denied ({res.status_code})")
                if persona not in allowed and not denied:
                    failures.append(f"{name}: {persona} unexpectedly allowed ({res.status_code})")
        assert not failures, "\n".join(failures)


class TestBatchedVerdicts:
    def test_board_apply_batch(self, world):
        iid = world.plat.image_ids[0]
        TestVerificationEndpoints._approve(TestVerificationEndpoints(), world, iid)
        board = world.client.get(
            f"/api/collections/scenes/images/{iid}/verification/in-context",
            headers=world.auth("org"),
        ).json()
        moves = [c["node_id"] for c in board["care"][:2]]
        assert moves
        res = world.client.post(
            "/api/verification/verdicts",
            json={"verdicts": [
                {"collection": "scenes", "image": iid, "node_id": node,
                 "stage": "in_context", "verdict": "dont_care"}
                for node in moves
            ]},
            headers=world.auth("org"),
        )
        assert res.status_code == 200
        results = res.json()["results"]
        assert [r["care"] for r in results] == [False] * len(moves)
        board2 = world.client.get(
            f"/api/collections/scenes/images/{iid}/verification/in-context",
            headers=world.auth("org"),
        ).json()
        assert set(moves) <= {c["node_id"] for c in board2["dont_care"]}
