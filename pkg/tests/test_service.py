"""HTTP service: endpoint contracts, session isolation and determinism,
context-state replay, idle eviction, and concurrency."""

import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import randomize_params, tiny_model

from hredchat.corpus import EOU, RESERVED, build_vocab
from hredchat.evaldecode import rescore
from hredchat.service import DecodeSettings, create_app, replay_context_state
from hredchat.models import ModelDims, build_model
from hredchat.tensor import Rng


def _fixture(variant="hred"):
    vocab = build_vocab([["hello", "there", "tea", "yes", "no", "like", "?", "."] * 3])
    model = build_model(variant, len(vocab), vocab.eou_id, ModelDims(6, 6, 4), Rng(3))
    randomize_params(model, 9, scale=0.3)
    return model, vocab


@pytest.fixture
def served():
    model, vocab = _fixture()
    app = create_app(model, vocab)
    with TestClient(app) as client:
        yield client, model, vocab, app


class TestEndpoints:
    def test_healthz(self, served):
        client, *_ = served
        r = client.get("/healthz")
        assert r.status_code == 200 and r.json() == {"status": "ok"}

    def test_model_info(self, served):
        client, model, vocab, _ = served
        info = client.get("/model").json()
        assert info["variant"] == "hred"
        assert info["dims"] == {"d_h": 6, "d_ctx": 6, "d_e": 4}
        assert info["vocab_hash"] == vocab.content_hash()
        assert info["vocab_size"] == len(vocab)

    def test_session_lifecycle(self, served):
        client, *_ = served
        r = client.post("/sessions", json={})
        assert r.status_code == 201
        sid = r.json()["session_id"]
        assert client.delete(f"/sessions/{sid}").status_code == 204
        assert client.delete(f"/sessions/{sid}").status_code == 404

    def test_unknown_session_404(self, served):
        client, *_ = served
        assert client.post("/sessions/nope/turns", json={"text": "hi"}).status_code == 404

    def test_empty_utterance_400(self, served):
        client, *_ = served
        sid = client.post("/sessions", json={}).json()["session_id"]
        assert client.post(f"/sessions/{sid}/turns", json={"text": "  "}).status_code == 400

    def test_invalid_settings_rejected(self, served):
        client, *_ = served
        assert client.post("/sessions", json={"beam_width": 0}).status_code == 422
        sid = client.post("/sessions", json={}).json()["session_id"]
        r = client.post(f"/sessions/{sid}/turns", json={"text": "hi", "temperature": -1})
        assert r.status_code == 422

    def test_cors_for_the_browser_client(self, served):
        client, *_ = served
        r = client.get("/healthz", headers={"Origin": "http://localhost:8080"})
        assert r.headers.get("access-control-allow-origin") == "*"
        r = client.options(
            "/sessions",
            headers={"Origin": "http://localhost:8080",
                     "Access-Control-Request-Method": "POST"},
        )
        assert r.status_code == 200

    def test_turn_response_schema(self, served):
        client, _, vocab, _ = served
        sid = client.post("/sessions", json={"mode": "map", "beam_width": 2}).json()["session_id"]
        body = client.post(f"/sessions/{sid}/turns", json={"text": "hello there ?"}).json()
        assert sorted(body) == ["log_prob", "text", "token_ids", "turn_index"]
        assert body["turn_index"] == 1
        assert body["token_ids"][-1] == vocab.eou_id


class TestDeterminismAndIsolation:
    def test_two_sessions_same_input_same_response(self, served):
        client, *_ = served
        responses = []
        for _ in range(2):
            sid = client.post("/sessions", json={"mode": "sample", "seed": 11}).json()["session_id"]
            r = client.post(f"/sessions/{sid}/turns", json={"text": "do you like tea ?"})
            responses.append(r.json())
        assert responses[0] == responses[1]

    def test_sessions_do_not_observe_each_other(self, served):
        client, *_ = served
        sid_a = client.post("/sessions", json={"mode": "sample", "seed": 1}).json()["session_id"]
        sid_b = client.post("/sessions", json={"mode": "sample", "seed": 1}).json()["session_id"]
        client.post(f"/sessions/{sid_a}/turns", json={"text": "hello"})
        client.post(f"/sessions/{sid_a}/turns", json={"text": "tea ?"})
        # session b's first turn must match a fresh session's first turn
        fresh = client.post("/sessions", json={"mode": "sample", "seed": 1}).json()["session_id"]
        rb = client.post(f"/sessions/{sid_b}/turns", json={"text": "yes ."}).json()
        rf = client.post(f"/sessions/{fresh}/turns", json={"text": "yes ."}).json()
        assert rb == rf

    def test_context_state_equals_history_replay(self, served):
        client, model, _, app = served
        sid = client.post("/sessions", json={"mode": "map", "beam_width": 2}).json()["session_id"]
        client.post(f"/sessions/{sid}/turns", json={"text": "hello there"})
        client.post(f"/sessions/{sid}/turns", json={"text": "tea ? yes ."})
        session = app.state.sessions[sid]
        expected = replay_context_state(model, session.history)
        np.testing.assert_array_equal(session.context_state.data, expected)

    def test_response_rescores_to_reported_log_prob(self, served):
        client, model, _, app = served
        sid = client.post("/sessions", json={"mode": "map", "beam_width": 3}).json()["session_id"]
        body = client.post(f"/sessions/{sid}/turns", json={"text": "hello there ?"}).json()
        session = app.state.sessions[sid]
        context = session.history[:-1]  # everything before the model's reply
        got = rescore(model, context, body["token_ids"])
        assert abs(got - body["log_prob"]) < 1e-9

    def test_text_detokenizes_token_ids_exactly(self, served):
        client, _, vocab, _ = served
        from hredchat.corpus import detokenize

        sid = client.post("/sessions", json={"mode": "sample", "seed": 5}).json()["session_id"]
        body = client.post(f"/sessions/{sid}/turns", json={"text": "do you like tea ?"}).json()
        assert body["text"] == detokenize(vocab.decode(body["token_ids"]))

    def test_settings_override_per_turn(self, served):
        client, *_ = served
        sid = client.post("/sessions", json={"mode": "map", "beam_width": 1}).json()["session_id"]
        r = client.post(
            f"/sessions/{sid}/turns",
            json={"text": "hello", "mode": "sample", "seed": 4},
        )
        assert r.status_code == 200


class TestEviction:
    def test_idle_sessions_evicted(self):
        model, vocab = _fixture()
        now = [0.0]
        app = create_app(model, vocab, session_ttl_s=10.0, clock=lambda: now[0])
        with TestClient(app) as client:
            sid = client.post("/sessions", json={}).json()["session_id"]
            now[0] = 5.0
            assert client.post(f"/sessions/{sid}/turns", json={"text": "hello"}).status_code == 200
            now[0] = 16.0  # last use at t=5, ttl 10 -> expired at t>15
            assert client.post(f"/sessions/{sid}/turns", json={"text": "hello"}).status_code == 404

    def test_active_sessions_survive(self):
        model, vocab = _fixture()
        now = [0.0]
        app = create_app(model, vocab, session_ttl_s=10.0, clock=lambda: now[0])
        with TestClient(app) as client:
            sid = client.post("/sessions", json={}).json()["session_id"]
            for t in (4.0, 8.0, 12.0):
                now[0] = t
                assert client.post(f"/sessions/{sid}/turns", json={"text": "hi"}).status_code == 200


class TestConcurrency:
    def test_parallel_sessions_consistent_with_serial(self):
        model, vocab = _fixture()
        app = create_app(model, vocab)
        with TestClient(app) as client:
            sids = [
                client.post("/sessions", json={"mode": "sample", "seed": 21}).json()["session_id"]
                for _ in range(6)
            ]
            results = {}

            def run(sid):
                r = client.post(f"/sessions/{sid}/turns", json={"text": "do you like tea ?"})
                results[sid] = r.json()

            threads = [threading.Thread(target=run, args=(sid,)) for sid in sids]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            unique = {tuple(v["token_ids"]) for v in results.values()}
            assert len(unique) == 1  # same seed, same history -> same reply


class TestServedEqualsInProcess:
    def test_served_decode_token_identical(self, tmp_path):
        """Checkpoint save -> load -> serve reproduces in-process decoding."""
        from hredchat.checkpoint import load_model, save_model
        from hredchat.corpus import tokenize
        from hredchat.evaldecode import beam_search

        model, vocab = _fixture()
        path = tmp_path / "m.ckpt"
        save_model(path, model, vocab.content_hash())
        loaded, _ = load_model(path)
        app = create_app(loaded, vocab, default_settings=DecodeSettings(mode="map", beam_width=4))
        with TestClient(app) as client:
            sid = client.post("/sessions", json={}).json()["session_id"]
            body = client.post(f"/sessions/{sid}/turns", json={"text": "hello there ?"}).json()
        utt = vocab.encode(tokenize("hello there ?")) + [vocab.eou_id]
        hyp = beam_search(model, [utt], width=4)
        assert list(hyp.tokens) == body["token_ids"]
        assert abs(hyp.log_prob - body["log_prob"]) < 1e-12
