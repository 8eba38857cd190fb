"""JSON prediction service over a loaded checkpoint.

The predictor holds read-only parameters; each request builds its own
batch, so concurrent handler threads share nothing mutable.
"""

from __future__ import annotations

import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .augment import AugmentConfig
from .descriptors import DescriptorConfig
from .errors import InputError, LengthError, ValidationError
from .model import forward, load_checkpoint
from .rng import PortableRng
from .seqio import PeptideSequence, validate_sequence
from .train import Encoder, tta_predict

MAX_BODY = 1 << 20


class Predictor:
    def __init__(self, params, cfg, meta, embedder, tta=False, aug_cfg=None, seed=0):
        if embedder.dim != cfg.embed_dim:
            raise InputError(f"embedder dim {embedder.dim} != checkpoint embed_dim {cfg.embed_dim}")
        self.params = params.copy()
        self.cfg = cfg
        self.class_names = list(meta.get("class_names") or [str(c) for c in range(cfg.class_count)])
        desc = DescriptorConfig(**meta["descriptor"]) if "descriptor" in meta else DescriptorConfig()
        self.encoder = Encoder(embedder, desc, cache=False)
        self.tta = tta
        self.aug_cfg = aug_cfg or AugmentConfig(**meta.get("augment", {}))
        self.seed = seed
        for arr in list(self.params.tensors.values()) + list(self.params.buffers.values()):
            arr.flags.writeable = False

    @classmethod
    def from_checkpoint(cls, path, embedder, **kw):
        params, cfg, meta = load_checkpoint(path)
        return cls(params, cfg, meta, embedder, **kw)

    def check(self, sequences):
        """Validate every entry; returns PeptideSequence records."""
        out = []
        for i, s in enumerate(sequences):
            if not isinstance(s, str):
                raise ValueError(f"sequences[{i}] is not a string")
            sid = f"seq{i}"
            out.append(PeptideSequence(sid, validate_sequence(sid, s)))
        return out

    def run(self, seq):
        """(class probabilities, forward output) for one record.

        Sequences are scored one at a time so a result never depends on what
        else shares the request.
        """
        out = forward(self.params, self.cfg, self.encoder.batch([seq]))
        probs = out.probs.data[0]
        if self.tta:
            probs = tta_predict(self.params, self.cfg, seq, self.encoder, self.aug_cfg, PortableRng(self.seed))
        return probs, out

    def predict(self, sequences):
        results = []
        for i, s in enumerate(self.check(sequences)):
            probs, out = self.run(s)
            k = int(np.argmax(probs))
            results.append({
                "index": i,
                "id": s.id,
                "probabilities": {name: float(p) for name, p in zip(self.class_names, probs)},
                "predicted_class": k,
                "label": self.class_names[k],
                "gate_lambda": float(out.lam[0]),
            })
        return results


def make_handler(predictor):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, status, doc):
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *args):
            print(f"serve: {self.address_string()} {fmt % args}", file=sys.stderr, flush=True)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"status": "ok"})
            else:
                self._send(404, {"error": f"no route {self.path}"})

        def do_POST(self):
            if self.path != "/predict":
                self._send(404, {"error": f"no route {self.path}"})
                return
            try:
                n = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                n = -1
            if n < 0 or n > MAX_BODY:
                self._send(400, {"error": "missing or oversized Content-Length"})
                return
            try:
                doc = json.loads(self.rfile.read(n).decode("utf-8"))
                seqs = doc["sequences"]
                if not isinstance(seqs, list):
                    raise TypeError("'sequences' must be a list")
            except (ValueError, KeyError, TypeError, UnicodeDecodeError, AttributeError) as exc:
                self._send(400, {"error": f"malformed request: {exc}"})
                return
            try:
                results = predictor.predict(seqs)
            except ValidationError as exc:
                self._send(422, {"error": str(exc), "sequence": exc.record, "character": exc.char})
                return
            except LengthError as exc:
                self._send(422, {"error": str(exc)})
                return
            except ValueError as exc:
                self._send(400, {"error": f"malformed request: {exc}"})
                return
            self._send(200, {"results": results})

    return Handler


def make_server(predictor, host="127.0.0.1", port=8000):
    """Bind (raises OSError if the port is taken) without starting the loop."""
    server = ThreadingHTTPServer((host, port), make_handler(predictor))
    server.daemon_threads = True
    return server
