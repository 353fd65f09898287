"""Black-box score oracles.

The attack only ever talks to :meth:`ScoreOracle.scores`, which takes a
batch of images and returns one probability vector per image. Every image
scored is counted.
"""

import json
import logging
import threading
import time

import numpy as np

from . import kernels
from .tensor import TensorError

log = logging.getLogger(__name__)

MODEL_MAGIC = b"UAPMODEL1\n"
MODEL_VERSION = 1
SIMPLEX_TOL = 1e-5


class OracleError(RuntimeError):
    pass


class OracleUnavailable(OracleError):
    pass


class ModelFileError(ValueError):
    pass


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def check_simplex(rows, num_classes, tol=SIMPLEX_TOL):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != num_classes:
        return False
    if not np.all(np.isfinite(rows)):
        return False
    if rows.size and (rows.min() < 0.0 or rows.max() > 1.0):
        return False
    return bool(np.all(np.abs(rows.sum(axis=1) - 1.0) <= tol))


class ScoreOracle:
    """Base class. Subclasses implement ``_score_batch`` on a flat
    ``(n, h*w*c)`` float64 array."""

    def __init__(self, input_shape, num_classes, batch_cap=None):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes) if num_classes is not None else None
        self.batch_cap = batch_cap
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self):
        return self._count

    def reset_queries(self):
        with self._lock:
            self._count = 0

    def _as_batch(self, batch):
        arr = np.asarray(batch, dtype=np.float64)
        if arr.shape == self.input_shape:
            arr = arr[None]
        if arr.shape[1:] != self.input_shape:
            raise TensorError("shape mismatch")
        return arr.reshape(arr.shape[0], -1)

    def scores(self, batch):
        """Probability matrix ``(n, num_classes)`` for a stack of images."""
        flat = self._as_batch(batch)
        n = flat.shape[0]
        if n == 0:
            return np.zeros((0, self.num_classes or 0))
        cap = self.batch_cap or n
        parts = [self._score_batch(flat[i:i + cap]) for i in range(0, n, cap)]
        out = np.concatenate(parts, axis=0)
        with self._lock:
            self._count += n
        return out

    def predict(self, batch):
        """Argmax labels; ``np.argmax`` already breaks ties toward the lowest index."""
        return np.argmax(self.scores(batch), axis=1)

    def _score_batch(self, flat):
        raise NotImplementedError


def predict_label(oracle, x):
    return int(oracle.predict(np.asarray(x)[None])[0])


def scores(oracle, batch):
    return oracle.scores(batch)


class LinearSoftmaxOracle(ScoreOracle):
    kind = "linear"

    def __init__(self, weights, bias, input_shape, batch_cap=None):
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(bias, dtype=np.float64)
        super().__init__(input_shape, self.weights.shape[0], batch_cap)
        if self.weights.shape[1] != int(np.prod(self.input_shape)):
            raise ValueError("weight width does not match input shape")

    def logits(self, flat):
        return kernels.affine_rows(flat, self.weights, self.bias)

    def _score_batch(self, flat):
        return softmax(self.logits(flat))

    def blocks(self):
        return [self.weights, self.bias]

    def header(self):
        return {"hidden": 0}


class MlpOracle(ScoreOracle):
    """input -> hidden (ReLU) -> softmax."""

    kind = "mlp"

    def __init__(self, w1, b1, w2, b2, input_shape, batch_cap=None):
        self.w1 = np.ascontiguousarray(w1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(b1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(w2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(b2, dtype=np.float64)
        super().__init__(input_shape, self.w2.shape[0], batch_cap)
        if self.w1.shape[1] != int(np.prod(self.input_shape)):
            raise ValueError("first layer width does not match input shape")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("hidden widths disagree")

    @property
    def hidden(self):
        return self.w1.shape[0]

    def _score_batch(self, flat):
        h = np.maximum(kernels.affine_rows(flat, self.w1, self.b1), 0.0)
        return softmax(kernels.affine_rows(h, self.w2, self.b2))

    def blocks(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def header(self):
        return {"hidden": self.hidden}

    @classmethod
    def random(cls, input_shape, num_classes, hidden=32, seed=0, scale=1.0):
        rng = np.random.default_rng(seed)
        d = int(np.prod(input_shape))
        w1 = rng.normal(0, scale / np.sqrt(d), (hidden, d))
        b1 = rng.normal(0, 0.1, hidden)
        w2 = rng.normal(0, scale / np.sqrt(hidden), (num_classes, hidden))
        b2 = rng.normal(0, 0.1, num_classes)
        # f32 round trip so saved models reproduce these exact weights
        cast = lambda a: a.astype(np.float32).astype(np.float64)
        return cls(cast(w1), cast(b1), cast(w2), cast(b2), input_shape)


class CountingOracle(ScoreOracle):
    """Wraps another oracle and logs every batch size it forwards."""

    def __init__(self, inner):
        super().__init__(inner.input_shape, inner.num_classes, None)
        self.inner = inner
        self.batch_sizes = []

    def scores(self, batch):
        flat = self._as_batch(batch)
        out = self.inner.scores(flat.reshape((-1,) + self.input_shape))
        with self._lock:
            self.batch_sizes.append(flat.shape[0])
            self._count += flat.shape[0]
        return out


# --------------------------------------------------------------------------
# Model files
# --------------------------------------------------------------------------

def _block_shapes(header):
    d = header["h"] * header["w"] * header["c"]
    k = header["classes"]
    if header["kind"] == "linear":
        return [(k, d), (k,)]
    if header["kind"] == "mlp":
        hid = header["hidden"]
        if hid < 1:
            raise ModelFileError("invalid model file: mlp needs hidden >= 1")
        return [(hid, d), (hid,), (k, hid), (k,)]
    raise ModelFileError(f"invalid model file: unknown kind {header['kind']!r}")


def save_oracle_weights(path, oracle):
    h, w, c = oracle.input_shape
    header = {
        "kind": oracle.kind,
        "h": h, "w": w, "c": c,
        "classes": oracle.num_classes,
        "version": MODEL_VERSION,
    }
    header.update(oracle.header())
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for block in oracle.blocks():
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_oracle_weights(path, kind=None, batch_cap=None):
    """Read a ``UAPMODEL1`` file into a LinearSoftmaxOracle or MlpOracle."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] == MODEL_MAGIC[:8] and blob[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFileError("unsupported model version")
    if blob[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFileError("invalid model file: bad magic at byte 0")
    start = len(MODEL_MAGIC)
    end = blob.find(b"\n", start)
    if end < 0:
        raise ModelFileError(f"invalid model file: unterminated header at byte {start}")
    try:
        header = json.loads(blob[start:end].decode("utf-8"))
        for key in ("kind", "h", "w", "c", "classes"):
            header[key]
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFileError(f"invalid model file: bad header at byte {start} ({exc})") from None
    if header.get("version", MODEL_VERSION) != MODEL_VERSION:
        raise ModelFileError("unsupported model version")
    if kind is not None and header["kind"] != kind:
        raise ModelFileError(
            f"invalid model file: expected kind {kind!r}, found {header['kind']!r}"
        )
    header.setdefault("hidden", 0)
    offset = end + 1
    blocks = []
    for shape in _block_shapes(header):
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(blob):
            raise ModelFileError(
                f"invalid model file: truncated at byte {len(blob)}, "
                f"block needs bytes {offset}..{offset + nbytes}"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        blocks.append(arr.reshape(shape).astype(np.float64))
        offset += nbytes
    if offset != len(blob):
        raise ModelFileError(f"invalid model file: {len(blob) - offset} trailing bytes at byte {offset}")
    shape = (header["h"], header["w"], header["c"])
    if header["kind"] == "linear":
        return LinearSoftmaxOracle(*blocks, shape, batch_cap=batch_cap)
    return MlpOracle(*blocks, shape, batch_cap=batch_cap)


# --------------------------------------------------------------------------
# Remote oracle (POST {endpoint}/v1/scores)
# --------------------------------------------------------------------------

class RemoteOracle(ScoreOracle):
    """Client for the v1 JSON scoring protocol.

    Transport failures are retried ``retries`` times; after that an
    :class:`OracleUnavailable` is raised. Responses whose rows are not
    probability vectors count as transport failures.
    """

    def __init__(self, endpoint, input_shape, num_classes=None, timeout=30.0,
                 retries=3, batch_cap=64, backoff=0.2, session=None):
        super().__init__(input_shape, num_classes, batch_cap)
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        if session is None:
            import requests
            session = requests.Session()
        self.session = session

    @property
    def url(self):
        return self.endpoint + "/v1/scores"

    def _post(self, payload):
        import requests

        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(self.url, json=payload, timeout=self.timeout)
                if resp.status_code != 200:
                    raise OracleError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.RequestException, OracleError, ValueError) as exc:
                last = exc
                log.warning("scoring request failed (attempt %d/%d): %s",
                            attempt + 1, self.retries + 1, exc)
                if attempt < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise OracleUnavailable(f"oracle unavailable: {last}")

    def _score_batch(self, flat):
        payload = {"shape": list(self.input_shape), "images": flat.tolist()}
        body = self._post(payload)
        rows = np.asarray(body.get("scores", []), dtype=np.float64) if isinstance(body, dict) else None
        if self.num_classes is None and rows is not None and rows.ndim == 2:
            self.num_classes = rows.shape[1]
        if rows is None or rows.shape[:1] != (flat.shape[0],) or not check_simplex(rows, self.num_classes):
            raise OracleUnavailable("oracle unavailable: response rows failed the simplex check")
        return rows
