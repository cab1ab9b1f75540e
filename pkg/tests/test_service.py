"""Service contract: pure handlers first, then the same behavior over a
live socket (threading server on an ephemeral port). The handlers return
(status, body) pairs directly, so most cases need no HTTP at all."""

import json
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest

from exnet.checkpoint import save_checkpoint
from exnet.data import gen_synthetic_task
from exnet.model import ModelConfig, init_model
from exnet.service import MAX_SUPPORTS, InferenceService, load_service, make_server
from exnet.text import build_vocab, render_template

SUPPORTS = ["silver coin on the table", "old silver spoon", "silver ring lost"]
QUERY = "a silver necklace"


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    """Loaded through the real checkpoint+vocab path so model_id is honest."""
    root = tmp_path_factory.mktemp("svc")
    ds = gen_synthetic_task(
        n_labels=3, vocab_per_label=4, shared_vocab=6,
        texts_per_label=6, text_len=4, noise_rate=0.0, seed=2,
    )
    vocab = build_vocab(
        [render_template(lb, tx) for tx, lb in ds.records]
        + [render_template("silver", " ".join(SUPPORTS + [QUERY]))]
    )
    cfg = ModelConfig(
        vocab_size=vocab.size, d_model=8, n_layers=1, n_heads=1,
        max_len=16, dropout=0.0, proj_dropout=0.0,
    )
    model = init_model(cfg, seed=4)
    vocab.save(root / "vocab.txt")
    save_checkpoint(root / "model.exnet", model, vocab.content_hash())
    return load_service(root / "model.exnet", root / "vocab.txt")


def predict_body(**over):
    body = {"label": "silver", "support": list(SUPPORTS), "text": QUERY}
    body.update(over)
    return body


# ----------------------------------------------------------- pure handlers


def test_predict_contract_fields(service):
    status, body = service.handle_predict(predict_body())
    assert status == 200
    assert set(body) == {"probability", "answer", "k", "truncated", "model_id"}
    assert 0.0 < body["probability"] < 1.0
    assert body["answer"] == (body["probability"] >= 0.5)
    assert body["k"] == 3
    assert body["model_id"] == service.model_id


def test_predict_identical_requests_identical_bodies(service):
    a = service.handle_predict(predict_body())
    b = service.handle_predict(predict_body())
    assert a == b  # floats bitwise equal, not approx


def test_predict_support_permutation_under_1e6(service):
    _, a = service.handle_predict(predict_body())
    _, b = service.handle_predict(predict_body(support=list(reversed(SUPPORTS))))
    assert abs(a["probability"] - b["probability"]) < 1e-6


@pytest.mark.parametrize(
    "over,field",
    [
        ({"support": []}, "support"),
        ({"support": "not a list"}, "support"),
        ({"support": ["ok", 7]}, "support"),
        ({"label": ""}, "label"),
        ({"label": "   "}, "label"),
        ({"label": None}, "label"),
        ({"text": None}, "text"),
        ({"text": 3}, "text"),
    ],
)
def test_predict_validation_names_field(service, over, field):
    status, body = service.handle_predict(predict_body(**over))
    assert status == 400
    assert body["error"]["field"] == field
    assert body["error"]["message"]


def test_predict_rejects_non_object_body(service):
    status, body = service.handle_predict(["not", "a", "dict"])
    assert status == 400
    assert body["error"]["field"] == "body"


def test_predict_support_cap_is_64(service):
    status, body = service.handle_predict(predict_body(support=["s"] * 65))
    assert status == 400
    assert body["error"]["field"] == "support"
    assert "65" in body["error"]["message"] and str(MAX_SUPPORTS) in body["error"]["message"]
    status, _ = service.handle_predict(predict_body(support=["s"] * MAX_SUPPORTS))
    assert status == 200


def test_predict_truncation_flagged(service):
    long_text = " ".join(["word"] * 200)  # far beyond max_len 16
    status, body = service.handle_predict(predict_body(text=long_text))
    assert status == 200
    assert body["truncated"] is True
    # every rendered prompt must fit for the flag to clear, supports included
    short = predict_body(support=["old silver spoon"], text="a")
    status, body = service.handle_predict(short)
    assert status == 200
    assert body["truncated"] is False


def test_unloaded_service_returns_503():
    empty = InferenceService()
    status, body = empty.handle_predict(predict_body())
    assert (status, body["error"]["field"]) == (503, "model")
    status, body = empty.handle_classify({"labels": {"a": ["x"]}, "text": "y"})
    assert status == 503
    status, body = empty.handle_health()
    assert (status, body["status"]) == (503, "loading")


def test_health_after_load(service):
    status, body = service.handle_health()
    assert status == 200
    assert body["status"] == "ready"
    assert body["model_id"] == service.model_id
    assert body["config_preset"] == "custom"
    assert body["uptime_s"] >= 0.0


def test_classify_matches_per_label_predict(service):
    labels = {
        "silver": list(SUPPORTS),
        "copper": ["copper wire", "copper kettle boiling"],
    }
    status, body = service.handle_classify({"labels": labels, "text": QUERY})
    assert status == 200
    assert set(body["scores"]) == set(labels)
    for label, support in labels.items():
        _, single = service.handle_predict(
            {"label": label, "support": support, "text": QUERY}
        )
        assert body["scores"][label] == single["probability"]  # exact
    top = body["top"]
    assert body["scores"][top] == max(body["scores"].values())


def test_classify_tie_breaks_lexicographically(service):
    labels = {"zeta": list(SUPPORTS), "alpha": list(SUPPORTS)}
    status, body = service.handle_classify({"labels": labels, "text": QUERY})
    assert status == 200
    assert body["scores"]["alpha"] == body["scores"]["zeta"]
    assert body["top"] == "alpha"


@pytest.mark.parametrize(
    "body,field",
    [
        ({"labels": {}, "text": "x"}, "labels"),
        ({"labels": ["a"], "text": "x"}, "labels"),
        ({"text": "x"}, "labels"),
        ({"labels": {"a": ["s"]}, "text": 5}, "text"),
        ({"labels": {"a": []}, "text": "x"}, "labels.a.support"),
        ({"labels": {"a": ["s", 3]}, "text": "x"}, "labels.a.support"),
    ],
)
def test_classify_validation_names_field(service, body, field):
    status, out = service.handle_classify(body)
    assert status == 400
    assert out["error"]["field"] == field


def test_classify_blank_label_name(service):
    status, out = service.handle_classify({"labels": {" ": ["s"]}, "text": "x"})
    assert status == 400
    assert out["error"]["field"] == "labels"


# ------------------------------------------------------------- live socket


@pytest.fixture(scope="module")
def base_url(service):
    server = make_server(service, host="127.0.0.1", port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    yield f"http://{host}:{port}"
    server.shutdown()
    server.server_close()
    thread.join(timeout=5)


def http(method, url, body=None, raw=None):
    data = raw if raw is not None else (
        json.dumps(body).encode("utf-8") if body is not None else None
    )
    req = urllib.request.Request(url, data=data, method=method)
    if data is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, dict(resp.headers), resp.read()
    except urllib.error.HTTPError as err:
        return err.code, dict(err.headers), err.read()


def test_wire_health(base_url):
    status, headers, payload = http("GET", base_url + "/health")
    assert status == 200
    assert headers["Content-Type"] == "application/json"
    assert json.loads(payload)["status"] == "ready"


def test_wire_predict_and_cors(base_url):
    status, headers, payload = http("POST", base_url + "/predict", predict_body())
    assert status == 200
    assert headers["Access-Control-Allow-Origin"] == "*"
    body = json.loads(payload)
    assert 0.0 < body["probability"] < 1.0


def test_wire_preflight_options(base_url):
    status, headers, _ = http("OPTIONS", base_url + "/predict")
    assert status == 204
    assert "POST" in headers["Access-Control-Allow-Methods"]
    assert headers["Access-Control-Allow-Origin"] == "*"


def test_wire_unknown_paths_are_404_with_field(base_url):
    status, _, payload = http("GET", base_url + "/nope")
    assert status == 404
    assert json.loads(payload)["error"]["field"] == "path"
    status, _, payload = http("POST", base_url + "/predictx", predict_body())
    assert status == 404
    assert json.loads(payload)["error"]["field"] == "path"


def test_wire_malformed_json_names_body(base_url):
    status, _, payload = http("POST", base_url + "/predict", raw=b"{nope")
    assert status == 400
    assert json.loads(payload)["error"]["field"] == "body"


def test_wire_permutation_under_1e6(base_url):
    _, _, a = http("POST", base_url + "/predict", predict_body())
    _, _, b = http(
        "POST", base_url + "/predict", predict_body(support=list(reversed(SUPPORTS)))
    )
    pa = json.loads(a)["probability"]
    pb = json.loads(b)["probability"]
    assert abs(pa - pb) < 1e-6


def test_wire_classify_consistent_with_predict(base_url):
    labels = {"silver": list(SUPPORTS), "gold": ["gold bar", "gold dust"]}
    _, _, payload = http("POST", base_url + "/classify", {"labels": labels, "text": QUERY})
    scores = json.loads(payload)["scores"]
    for label, support in labels.items():
        _, _, single = http(
            "POST", base_url + "/predict",
            {"label": label, "support": support, "text": QUERY},
        )
        assert scores[label] == json.loads(single)["probability"]


def test_wire_concurrent_identical_requests_identical_bodies(base_url):
    def call(_):
        _, _, payload = http("POST", base_url + "/predict", predict_body())
        return payload

    with ThreadPoolExecutor(max_workers=8) as pool:
        payloads = list(pool.map(call, range(16)))
    assert len(set(payloads)) == 1
