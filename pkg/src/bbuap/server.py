"""Minimal HTTP server exposing a local oracle over the v1 scoring protocol.

Used for loopback testing of :class:`bbuap.oracle.RemoteOracle` and by the
``bbuap serve`` subcommand.
"""

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

log = logging.getLogger(__name__)


def _handler_for(oracle):
    class Handler(BaseHTTPRequestHandler):
        # keep-alive, and no Nagle stalls between header and body writes
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True

        def log_message(self, fmt, *args):
            log.debug("%s - " + fmt, self.address_string(), *args)

        def _reply(self, status, body):
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path.rstrip("/") != "/v1/scores":
                self._reply(404, {"error": "not found"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                req = json.loads(self.rfile.read(length))
                shape = tuple(int(s) for s in req["shape"])
                images = np.asarray(req["images"], dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                self._reply(400, {"error": f"bad request: {exc}"})
                return
            if shape != oracle.input_shape:
                self._reply(400, {"error": "shape mismatch"})
                return
            try:
                out = oracle.scores(images.reshape((-1,) + shape))
            except ValueError as exc:
                self._reply(400, {"error": str(exc)})
                return
            self._reply(200, {"scores": out.tolist()})

    return Handler


class OracleServer:
    """Serve ``oracle`` on ``host:port`` (port 0 picks a free port).

    Usable as a context manager; the server runs on a daemon thread.
    """

    def __init__(self, oracle, host="127.0.0.1", port=0):
        self.oracle = oracle
        self.httpd = ThreadingHTTPServer((host, port), _handler_for(oracle))
        self.httpd.daemon_threads = True
        self._thread = None

    @property
    def url(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def serve_forever(self):
        self.httpd.serve_forever()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
