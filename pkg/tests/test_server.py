import json
import threading
import urllib.error
import urllib.request

import pytest

from taperkit.server import BackgroundServer


@pytest.fixture
def server(tmp_path):
    with BackgroundServer(tmp_path / "sessions") as bg:
        yield bg


def request(server, method, path, body=None, secret=None, raise_on_error=False):
    url = server.base_url + path
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method)
    req.add_header("Content-Type", "application/json")
    if secret:
        req.add_header("X-Session-Secret", secret)
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        if raise_on_error:
            raise
        return e.code, json.loads(e.read())


def create(server, **overrides):
    body = {"k_plus": 0.5, "k_minus": 2.0, "y_min": -1.0, "u_init": 1.0}
    body.update(overrides)
    status, doc = request(server, "POST", "/sessions", body)
    assert status == 201
    return doc


class TestCreate:
    def test_explicit_gains(self, server):
        doc = create(server)
        assert doc["id"]
        assert doc["secret"]
        assert doc["config"]["k_plus"] == 0.5

    def test_rule_of_thumb(self, server):
        status, doc = request(server, "POST", "/sessions", {
            "rule_of_thumb": {"dose_step": 5, "dy_lo": 1, "dy_hi": 2},
            "y_min": -1.0, "u_init": 1.0,
        })
        assert status == 201
        assert doc["config"]["k_plus"] == pytest.approx(2.5)
        assert doc["config"]["k_minus"] == pytest.approx(5.0)

    def test_inverted_gains_problem_document(self, server):
        status, doc = request(server, "POST", "/sessions",
                              {"k_plus": 3.0, "k_minus": 1.0, "y_min": 0.0})
        assert status == 400
        assert doc["code"] == "invalid_gains"
        assert doc["status"] == 400

    def test_malformed_json(self, server):
        req = urllib.request.Request(
            server.base_url + "/sessions", data=b"{oops", method="POST")
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(req, timeout=5)
        assert exc.value.code == 400
        assert json.loads(exc.value.read())["code"] == "malformed_json"


class TestMeasurements:
    def test_commit_returns_dose(self, server):
        doc = create(server)
        status, out = request(
            server, "POST", f"/sessions/{doc['id']}/measurements",
            {"y": 0.0, "token": "t1"}, secret=doc["secret"],
        )
        assert status == 200
        assert out["dose"] == pytest.approx(0.5)

    def test_retry_same_token_single_commit(self, server):
        doc = create(server)
        path = f"/sessions/{doc['id']}/measurements"
        _, first = request(server, "POST", path, {"y": 0.0, "token": "tok"}, doc["secret"])
        _, second = request(server, "POST", path, {"y": 9.9, "token": "tok"}, doc["secret"])
        assert second["dose"] == first["dose"]
        _, view = request(server, "GET", f"/sessions/{doc['id']}", secret=doc["secret"])
        assert len(view["measurements"]) == 1

    def test_missing_token_rejected(self, server):
        doc = create(server)
        status, out = request(
            server, "POST", f"/sessions/{doc['id']}/measurements",
            {"y": 0.0}, secret=doc["secret"],
        )
        assert status == 400
        assert out["code"] == "invalid_token"

    def test_wrong_secret_forbidden(self, server):
        doc = create(server)
        status, out = request(
            server, "POST", f"/sessions/{doc['id']}/measurements",
            {"y": 0.0, "token": "t"}, secret="wrong",
        )
        assert status == 403
        assert out["code"] == "forbidden"

    def test_unknown_session_404(self, server):
        status, out = request(
            server, "POST", "/sessions/deadbeef/measurements",
            {"y": 0.0, "token": "t"}, secret="s",
        )
        assert status == 404
        assert out["code"] == "unknown_session"


class TestWhatIfAndConstraint:
    def test_what_if_does_not_mutate(self, server):
        doc = create(server)
        sid, secret = doc["id"], doc["secret"]
        request(server, "POST", f"/sessions/{sid}/measurements",
                {"y": 0.2, "token": "t1"}, secret)
        for delta in (-0.5, 0.0, 0.5):
            status, out = request(server, "POST", f"/sessions/{sid}/what-if",
                                  {"delta": delta}, secret)
            assert status == 200
            assert out["hypothetical"] is True
        _, view = request(server, "GET", f"/sessions/{sid}", secret=secret)
        assert len(view["measurements"]) == 1
        assert len(view["recommendations"]) == 1

    def test_constraint_patch(self, server):
        doc = create(server)
        sid, secret = doc["id"], doc["secret"]
        status, out = request(server, "PATCH", f"/sessions/{sid}/constraint",
                              {"y_min": -0.5}, secret)
        assert status == 200
        assert out["y_min"] == -0.5
        _, view = request(server, "GET", f"/sessions/{sid}", secret=secret)
        assert view["y_min"] == -0.5

    def test_complete_endpoint(self, server):
        doc = create(server, u_init=0.0)
        sid, secret = doc["id"], doc["secret"]
        request(server, "POST", f"/sessions/{sid}/measurements",
                {"y": 5.0, "token": "t"}, secret)
        status, out = request(server, "POST", f"/sessions/{sid}/complete", {}, secret)
        assert status == 200
        assert out["status"] == "completed"
        status, out = request(server, "PATCH", f"/sessions/{sid}/constraint",
                              {"y_min": 0.0}, secret)
        assert status == 409

    def test_history_view_fields(self, server):
        doc = create(server)
        sid, secret = doc["id"], doc["secret"]
        for i, y in enumerate((0.0, -0.4, 0.3)):
            request(server, "POST", f"/sessions/{sid}/measurements",
                    {"y": y, "token": f"t{i}"}, secret)
        _, view = request(server, "GET", f"/sessions/{sid}", secret=secret)
        assert set(view) >= {
            "id", "status", "config", "y_min", "delta", "u_prev",
            "measurements", "recommendations", "constraint_changes", "long_term_margin",
        }
        assert len(view["long_term_margin"]) == 2


class TestConcurrency:
    def test_parallel_commits_serialize(self, server):
        doc = create(server)
        sid, secret = doc["id"], doc["secret"]
        errors = []

        def submit(i):
            try:
                request(server, "POST", f"/sessions/{sid}/measurements",
                        {"y": 0.1 * i, "token": f"tok{i}"}, secret, raise_on_error=True)
            except Exception as e:  # pragma: no cover
                errors.append(e)

        threads = [threading.Thread(target=submit, args=(i,)) for i in range(12)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        _, view = request(server, "GET", f"/sessions/{sid}", secret=secret)
        assert len(view["measurements"]) == 12
        assert [m["step"] for m in view["measurements"]] == list(range(12))

    def test_sessions_isolated(self, server):
        a = create(server)
        b = create(server)
        request(server, "POST", f"/sessions/{a['id']}/measurements",
                {"y": 0.0, "token": "t"}, a["secret"])
        _, view_b = request(server, "GET", f"/sessions/{b['id']}", secret=b["secret"])
        assert view_b["measurements"] == []


class TestUiServing:
    def test_built_client_served(self, tmp_path):
        from pathlib import Path

        frontend = Path(__file__).resolve().parent.parent / "frontend"
        if not (frontend / "dist" / "main.js").exists():
            pytest.skip("web client not built (run npm run build in frontend/)")
        with BackgroundServer(tmp_path / "sessions", ui_dir=frontend) as bg:
            html = urllib.request.urlopen(bg.base_url + "/", timeout=5).read()
            assert b"taperkit" in html
            js = urllib.request.urlopen(bg.base_url + "/dist/main.js", timeout=5).read()
            assert len(js) > 0
            with pytest.raises(urllib.error.HTTPError) as exc:
                urllib.request.urlopen(bg.base_url + "/../etc/passwd", timeout=5)
            assert exc.value.code == 404

    def test_api_still_routed_with_ui(self, tmp_path):
        from pathlib import Path

        frontend = Path(__file__).resolve().parent.parent / "frontend"
        with BackgroundServer(tmp_path / "sessions", ui_dir=frontend) as bg:
            doc = create(bg)
            assert doc["id"]


class TestRestart:
    def test_server_restart_resumes(self, tmp_path):
        storage = tmp_path / "sessions"
        with BackgroundServer(storage) as bg:
            doc = create(bg)
            sid, secret = doc["id"], doc["secret"]
            request(bg, "POST", f"/sessions/{sid}/measurements",
                    {"y": 0.0, "token": "t0"}, secret)
            _, before = request(bg, "GET", f"/sessions/{sid}", secret=secret)
        with BackgroundServer(storage) as bg2:
            _, after = request(bg2, "GET", f"/sessions/{sid}", secret=secret)
            assert after == before
            status, out = request(bg2, "POST", f"/sessions/{sid}/measurements",
                                  {"y": 0.1, "token": "t1"}, secret)
            assert status == 200
