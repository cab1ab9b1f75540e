"""HTTP inference endpoint over a loaded checkpoint.

Exposes three routes: POST /predict answers one yes/no question about one
text given a support set, POST /classify fans a text out over several
labelled support sets and reports the winner, GET /health reports liveness.
Request handling is stateless: the model snapshot is loaded once and never
mutated, so concurrent identical requests produce identical bodies.

The handlers are plain methods returning ``(status, body)`` pairs so they
can be tested without sockets; the HTTP wiring lives in ``make_server``.
"""

from __future__ import annotations

import json
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .checkpoint import load_checkpoint
from .data import Episode
from .tensor import no_grad
from .text import Vocab, encode_prompt, render_template

MAX_SUPPORTS = 64


def _error(status, field, message):
    return status, {"error": {"field": field, "message": message}}


class InferenceService:
    """Pure request handlers bound to one immutable model snapshot."""

    def __init__(self, model=None, vocab=None, model_id=None, preset="custom"):
        self.model = model
        self.vocab = vocab
        self.model_id = model_id
        self.preset = preset
        self.started = time.monotonic()

    @property
    def ready(self):
        return self.model is not None

    def _episode(self, label, support, text):
        max_len = self.model.cfg.max_len
        query = encode_prompt(self.vocab, render_template(label, text), max_len)
        sups = tuple(
            encode_prompt(self.vocab, render_template(label, s), max_len)
            for s in support
        )
        truncated = query.truncated or any(s.truncated for s in sups)
        ep = Episode(
            query=query,
            supports=sups,
            k=len(sups),
            target=0.0,
            label=label,
            query_text=text,
            support_texts=tuple(support),
        )
        return ep, truncated

    def _check_predict_fields(self, body, prefix=""):
        """Validate one (label, support, text) triple; returns an error pair or None."""
        if not isinstance(body, dict):
            return _error(400, "body", "request body must be a JSON object")
        label = body.get("label")
        if not isinstance(label, str) or not label.strip():
            return _error(400, prefix + "label", "label must be a non-blank string")
        support = body.get("support")
        if not isinstance(support, list) or not support:
            return _error(400, prefix + "support", "support must be a non-empty list of strings")
        if len(support) > MAX_SUPPORTS:
            return _error(
                400,
                prefix + "support",
                f"support has {len(support)} entries; the limit is {MAX_SUPPORTS}",
            )
        if not all(isinstance(s, str) for s in support):
            return _error(400, prefix + "support", "support entries must be strings")
        text = body.get("text")
        if not isinstance(text, str):
            return _error(400, prefix + "text", "text must be a string")
        return None

    def handle_predict(self, body):
        if not self.ready:
            return _error(503, "model", "model is still loading")
        err = self._check_predict_fields(body)
        if err is not None:
            return err
        ep, truncated = self._episode(body["label"], body["support"], body["text"])
        with no_grad():
            prob = float(self.model.forward(ep, training=False).data.reshape(()))
        return 200, {
            "probability": prob,
            "answer": prob >= 0.5,
            "k": ep.k,
            "truncated": truncated,
            "model_id": self.model_id,
        }

    def handle_classify(self, body):
        if not self.ready:
            return _error(503, "model", "model is still loading")
        if not isinstance(body, dict):
            return _error(400, "body", "request body must be a JSON object")
        labels = body.get("labels")
        if not isinstance(labels, dict) or not labels:
            return _error(400, "labels", "labels must be a non-empty object mapping label to supports")
        text = body.get("text")
        if not isinstance(text, str):
            return _error(400, "text", "text must be a string")
        for label, support in labels.items():
            sub = {"label": label, "support": support, "text": text}
            err = self._check_predict_fields(sub, prefix=f"labels.{label}.")
            if err is not None:
                if not isinstance(label, str) or not label.strip():
                    return _error(400, "labels", "label names must be non-blank strings")
                return err
        scores = {}
        for label, support in labels.items():
            status, out = self.handle_predict({"label": label, "support": support, "text": text})
            if status != 200:
                return status, out
            scores[label] = out["probability"]
        top = min(scores, key=lambda lb: (-scores[lb], lb))
        return 200, {"scores": scores, "top": top}

    def handle_health(self):
        if not self.ready:
            return 503, {"status": "loading"}
        return 200, {
            "status": "ready",
            "model_id": self.model_id,
            "config_preset": self.preset,
            "uptime_s": round(time.monotonic() - self.started, 3),
        }


def load_service(checkpoint_path, vocab_path):
    vocab = Vocab.load(vocab_path)
    model, meta = load_checkpoint(checkpoint_path, expected_vocab_hash=vocab.content_hash())
    preset = meta["manifest"].get("extra", {}).get("preset", "custom")
    return InferenceService(model=model, vocab=vocab, model_id=meta["model_id"], preset=preset)


_READ_ERROR = object()


def make_server(service, host="0.0.0.0", port=8080):
    """Build a threading HTTP server around the pure handlers."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep stdio clean for the CLI
            pass

        def _send(self, status, body):
            payload = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self._cors()
            self.end_headers()
            self.wfile.write(payload)

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def _read_body(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            try:
                return json.loads(raw.decode("utf-8")) if raw else None
            except (ValueError, UnicodeDecodeError):
                return _READ_ERROR

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path.split("?")[0] == "/health":
                status, body = service.handle_health()
            else:
                status, body = _error(404, "path", f"no route for GET {self.path}")
            self._send(status, body)

        def do_POST(self):
            body = self._read_body()
            if body is _READ_ERROR:
                status, out = _error(400, "body", "request body is not valid JSON")
            elif self.path == "/predict":
                status, out = service.handle_predict(body)
            elif self.path == "/classify":
                status, out = service.handle_classify(body)
            else:
                status, out = _error(404, "path", f"no route for POST {self.path}")
            self._send(status, out)

    return ThreadingHTTPServer((host, port), Handler)
