"""Datasets (CSV manifest of PNG files) and UAP artifact persistence."""

import csv
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from PIL import Image

from .tensor import Perturbation, TensorError, decode_tensor, encode_tensor, parse_norm

UAP_KEYS = ("p", "xi", "mode", "target", "seed", "queries")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, h, w, c) float64 in [0, 1]
    labels: np.ndarray  # (n,) int
    classes: List[str]
    paths: List[str] = field(default_factory=list)

    @property
    def shape(self):
        return tuple(self.images.shape[1:])

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.classes,
                       [self.paths[i] for i in idx] if self.paths else [])


def read_png(path):
    """Decode a PNG to an ``(h, w, c)`` array scaled to [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("1", "L"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("RGB", "P"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        else:
            raise DatasetError(f"unsupported PNG mode {im.mode}: {path}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_png(path, image):
    """Write an ``(h, w, 1)`` or ``(h, w, 3)`` [0, 1] array as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[:, :, 0]
    Image.fromarray(q).save(path, format="PNG")


def read_manifest(manifest_path):
    """Return ``[(path, label_string), ...]`` with paths resolved against the
    manifest's directory."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
                raise DatasetError(f"manifest needs a 'path,label' header: {manifest_path}")
            rows = []
            for rec in reader:
                path = rec["path"].strip()
                rows.append((path if os.path.isabs(path) else os.path.join(base, path),
                             rec["label"].strip()))
    except FileNotFoundError:
        raise DatasetError(f"missing file: {manifest_path}") from None
    if not rows:
        raise DatasetError("empty dataset")
    return rows


def load_dataset(manifest_path, shape=None, classes=None):
    """Load every image listed in a ``path,label`` CSV manifest.

    Class indices follow first appearance of each label unless ``classes``
    fixes the table (then unseen labels are an error). ``shape`` defaults to
    the first image's shape; every image must match it.
    """
    rows = read_manifest(manifest_path)
    table = list(classes) if classes is not None else []
    index = {name: i for i, name in enumerate(table)}
    images, labels, paths = [], [], []
    for path, label in rows:
        if label not in index:
            if classes is not None:
                raise DatasetError(f"unknown label {label!r}: {path}")
            index[label] = len(table)
            table.append(label)
        if not os.path.exists(path):
            raise DatasetError(f"missing file: {path}")
        img = read_png(path)
        if shape is None:
            shape = img.shape
        if img.shape != tuple(shape):
            raise DatasetError(f"shape mismatch: {path}")
        images.append(img)
        labels.append(index[label])
        paths.append(path)
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64), table, paths)


def write_dataset(directory, images, labels, classes, manifest_name="manifest.csv"):
    """Write images as PNGs plus a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    manifest = os.path.join(directory, manifest_name)
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label"])
        for i, (img, lab) in enumerate(zip(images, labels)):
            name = f"img_{i:05d}.png"
            write_png(os.path.join(directory, name), img)
            w.writerow([name, classes[int(lab)]])
    return manifest


def stratified_sample(labels, per_class=None, total=None, seed=0, classes=None):
    """Seeded split into (sample indices, remainder indices), both sorted.

    Give exactly one of ``per_class`` (that many images from every class) or
    ``total`` (a uniform draw over the whole set).
    """
    labels = np.asarray(labels)
    if (per_class is None) == (total is None):
        raise ValueError("give exactly one of per_class or total")
    rng = np.random.default_rng(seed)
    n = labels.size
    if total is not None:
        if total > n:
            raise DatasetError(f"insufficient images: requested {total}, have {n}")
        chosen = rng.choice(n, size=total, replace=False)
    else:
        k = int(labels.max()) + 1 if n else 0
        chosen = []
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size < per_class:
                name = classes[c] if classes is not None else str(c)
                raise DatasetError(f"insufficient images for class {name}")
            chosen.extend(rng.choice(members, size=per_class, replace=False))
        chosen = np.asarray(chosen, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return np.flatnonzero(mask), np.flatnonzero(~mask)


# --------------------------------------------------------------------------
# UAP files: UTF tensor with the attack metadata in its header
# --------------------------------------------------------------------------

def _json_number(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def save_uap(path, perturbation, metadata=None):
    """Write a perturbation as a UTF tensor with metadata keys
    ``p, xi, mode, target, seed, queries`` (plus any extras given)."""
    meta = {"p": "inf" if perturbation.norm_type == math.inf else perturbation.norm_type,
            "xi": perturbation.budget_xi,
            "mode": None, "target": None, "seed": None, "queries": None}
    if metadata:
        meta.update(metadata)
    meta = {k: _json_number(v) for k, v in meta.items()}
    with open(path, "wb") as fh:
        fh.write(encode_tensor(perturbation.data, meta))


def load_uap(path):
    """Return ``(Perturbation, metadata)``. Payload values are float32."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        data, header = decode_tensor(blob)
    except TensorError as exc:
        raise TensorError(f"invalid UAP file: {exc}") from None
    missing = [k for k in UAP_KEYS if k not in header]
    if missing:
        raise TensorError(f"invalid UAP file: header lacks {', '.join(missing)}")
    meta = {k: v for k, v in header.items() if k not in ("h", "w", "c", "dtype")}
    xi = float(header["xi"])
    return Perturbation(data.astype(np.float64), parse_norm(header["p"]), xi), meta


def dataset_from_arrays(images, labels, classes: Optional[List[str]] = None):
    labels = np.asarray(labels, dtype=np.int64)
    if classes is None:
        classes = [str(i) for i in range(int(labels.max()) + 1)]
    return Dataset(np.asarray(images, dtype=np.float64), labels, list(classes))
