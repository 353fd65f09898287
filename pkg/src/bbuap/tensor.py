"""Image / perturbation arrays, Lp norms and the UTF tensor file format.

Images are numpy arrays of shape ``(height, width, channels)`` with values in
``[0, 1]``. Perturbations carry their norm type and budget alongside the data.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

MAGIC = b"UAPTENSOR\0".ljust(16, b"\0")

NORMS = (1, 2, math.inf)


class TensorError(ValueError):
    pass


def parse_norm(p):
    """Accept 1, 2, inf (or their string spellings) and return 1, 2 or math.inf."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "linf", "infinity", "max"):
            return math.inf
        try:
            p = float(key)
        except ValueError:
            raise TensorError(f"unsupported norm type {p!r}") from None
    if p == 1:
        return 1
    if p == 2:
        return 2
    if p == math.inf:
        return math.inf
    raise TensorError(f"unsupported norm type {p!r}")


def norm_name(p):
    return "inf" if parse_norm(p) == math.inf else str(parse_norm(p))


def as_image(data, height=None, width=None, channels=None):
    """Coerce ``data`` to an ``(h, w, c)`` float array, checking value range."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if height is not None:
        arr = arr.reshape(height, width, channels)
    if arr.ndim != 3:
        raise TensorError(f"expected (h, w, c) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TensorError("non-finite tensor")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise TensorError("image values outside [0, 1]")
    return arr


def lp_norm(v, p):
    v = np.asarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise TensorError("non-finite tensor")
    p = parse_norm(p)
    if v.size == 0:
        return 0.0
    if p == 1:
        return float(np.sum(np.abs(v)))
    if p == 2:
        ss = float(np.dot(v, v))
        if 1e-290 < ss < math.inf or not v.any():
            return math.sqrt(ss)
        # squares under- or overflowed: rescale by the largest magnitude
        m = float(np.max(np.abs(v)))
        u = v / m
        return m * math.sqrt(float(np.dot(u, u)))
    return float(np.max(np.abs(v)))


@dataclass
class Perturbation:
    """An additive perturbation with an Lp budget."""

    data: np.ndarray
    norm_type: object = 2
    budget_xi: float = math.inf

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.norm_type = parse_norm(self.norm_type)
        if self.budget_xi < 0:
            raise TensorError("negative budget")

    @property
    def shape(self):
        return self.data.shape

    def norm(self):
        return lp_norm(self.data, self.norm_type)

    def within_budget(self, slack=1e-9):
        return self.norm() <= self.budget_xi + slack

    @classmethod
    def zeros(cls, shape, norm_type=2, budget_xi=0.0):
        return cls(np.zeros(shape), norm_type, budget_xi)


def _delta_array(delta):
    return delta.data if isinstance(delta, Perturbation) else np.asarray(delta, dtype=np.float64)


def apply_perturbation(x, delta, clip=True):
    """Return ``x + delta``; with ``clip`` the result is clamped to [0, 1].

    ``x`` may be a single image or a stack of images with the perturbation's
    shape as trailing dimensions.
    """
    x = np.asarray(x, dtype=np.float64)
    d = _delta_array(delta)
    if x.ndim < d.ndim or x.shape[x.ndim - d.ndim:] != d.shape:
        raise TensorError("shape mismatch")
    out = x + d
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def mean_dataset_norm(images, p):
    if len(images) == 0:
        raise TensorError("empty dataset")
    total = math.fsum(lp_norm(x, p) for x in images)
    return total / len(images)


def xi_from_zeta(zeta, images, p):
    """Budget xi as a fraction ``zeta`` of the dataset's mean Lp image norm."""
    if not zeta > 0:
        raise TensorError("zeta must be positive")
    return zeta * mean_dataset_norm(images, p)


# --------------------------------------------------------------------------
# UTF: 16-byte magic, one JSON header line, little-endian f32 payload
# --------------------------------------------------------------------------

def encode_tensor(array, extra=None):
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise TensorError(f"expected (h, w, c) tensor, got shape {arr.shape}")
    h, w, c = arr.shape
    header = {"h": h, "w": w, "c": c, "dtype": "f32"}
    if extra:
        header.update(extra)
    line = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return MAGIC + line + payload


def decode_tensor(blob):
    """Parse UTF bytes into ``(array (h, w, c) float32, header dict)``."""
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise TensorError("bad magic: not a UAP tensor file")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise TensorError(f"unterminated header at byte {len(MAGIC)}")
    try:
        header = json.loads(blob[len(MAGIC):end].decode("utf-8"))
        h, w, c = int(header["h"]), int(header["w"]), int(header["c"])
    except (ValueError, KeyError, TypeError) as exc:
        raise TensorError(f"invalid header at byte {len(MAGIC)}: {exc}") from None
    if header.get("dtype") != "f32":
        raise TensorError(f"unsupported dtype {header.get('dtype')!r}")
    payload = blob[end + 1:]
    expected = h * w * c * 4
    if len(payload) != expected:
        raise TensorError(
            f"payload is {len(payload)} bytes at offset {end + 1}, expected {expected}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float32)
    return arr, header


def save_tensor(path, array, extra=None):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array, extra))


def load_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def f32_roundtrip(array):
    """The values ``array`` will have after a save/load cycle."""
    return np.asarray(array, dtype=np.float32).astype(np.float64)


__all__ = [
    "NORMS",
    "Perturbation",
    "TensorError",
    "apply_perturbation",
    "as_image",
    "decode_tensor",
    "encode_tensor",
    "f32_roundtrip",
    "load_tensor",
    "lp_norm",
    "mean_dataset_norm",
    "norm_name",
    "parse_norm",
    "save_tensor",
    "xi_from_zeta",
]
