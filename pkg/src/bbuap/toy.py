"""Seeded desk-scale problems standing in for a trained image classifier.

Class 0 images are smooth backgrounds; class ``k >= 1`` images carry a
bright square blob at a class-specific location. The oracle is a linear
softmax detector: logit ``k`` is a scaled mean intensity of patch ``k``
minus a threshold, plus a weak dense random term; logit 0 is the dense
term alone.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from . import kernels
from .oracle import LinearSoftmaxOracle


@dataclass
class ToyProblem:
    oracle: LinearSoftmaxOracle
    images: np.ndarray
    labels: np.ndarray
    classes: List[str]
    patches: list


def smooth_field(rng, shape, max_freq=3):
    """Zero-mean low-frequency pattern with unit RMS per pixel."""
    h, w, c = shape
    out = np.zeros(shape)
    for u in range(max_freq):
        for v in range(max_freq):
            if u == v == 0:
                continue
            out += rng.standard_normal() * kernels.dct_plane(h, w, u, v)[:, :, None]
    return out / np.sqrt(np.mean(out ** 2))


def _patch_slices(shape, num_classes, patch):
    h, w, _ = shape
    spots = []
    rows = max(1, (h - patch) // (patch + 1))
    for k in range(1, num_classes):
        j = k - 1
        r = 1 + (j % rows) * (patch + 1)
        col = 1 + (j // rows) * (patch + 1) + (w - patch) // 3
        if r + patch > h or col + patch > w:
            raise ValueError("image too small for the requested number of patches")
        spots.append((slice(r, r + patch), slice(col, col + patch)))
    return spots


def make_images(rng, shape, labels, spots, background=0.4, texture=0.08,
                noise=0.04, blob=(0.25, 0.5)):
    n = len(labels)
    imgs = np.empty((n,) + tuple(shape))
    for i, lab in enumerate(labels):
        img = background + texture * smooth_field(rng, shape)
        img = img + noise * rng.standard_normal(shape)
        if lab > 0:
            rs, cs = spots[lab - 1]
            img[rs, cs, :] += rng.uniform(*blob)
        imgs[i] = img
    return np.clip(imgs, 0.0, 1.0)


def make_toy_problem(seed=0, shape=(16, 16, 1), num_classes=2, n=40,
                     class_probs=None, patch=3, gain=12.0, threshold=0.5,
                     dense=0.3, texture=0.05):
    """Build the oracle and ``n`` labelled images.

    ``class_probs`` sets class frequencies (uniform by default). The
    returned oracle's weights are exactly representable in float32, so it
    survives a model-file round trip unchanged.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(shape)
    spots = _patch_slices(shape, num_classes, patch)
    d = int(np.prod(shape))

    weights = np.zeros((num_classes,) + shape)
    bias = np.zeros(num_classes)
    for k, (rs, cs) in enumerate(spots, start=1):
        area = patch * patch * shape[2]
        weights[k][rs, cs, :] = gain / area
        bias[k] = -gain * threshold
    weights = weights.reshape(num_classes, d)
    weights += (dense / d) * rng.standard_normal((num_classes, d))
    weights = weights.astype(np.float32).astype(np.float64)
    bias = bias.astype(np.float32).astype(np.float64)
    oracle = LinearSoftmaxOracle(weights, bias, shape)

    probs = np.full(num_classes, 1.0 / num_classes) if class_probs is None else np.asarray(class_probs, float)
    labels = rng.choice(num_classes, size=n, p=probs / probs.sum())
    imgs = make_images(rng, shape, labels, spots, texture=texture)
    classes = [f"class{k}" for k in range(num_classes)]
    return ToyProblem(oracle, imgs, labels.astype(np.int64), classes, spots)


PRESETS = {
    # 2-class, mostly normal images: the non-targeted acceptance setup
    "binary": dict(num_classes=2, n=240, class_probs=(0.9, 0.1)),
    # 3 balanced classes: the targeted acceptance setup
    "ternary": dict(num_classes=3, n=240),
    # every image normal and foolable within budget: dataset-size sweep
    "screening": dict(num_classes=2, n=300, class_probs=(1.0, 0.0), texture=0.03),
}


def make_preset(name, seed=0, **overrides):
    try:
        kwargs = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown toy preset {name!r}; choose from {sorted(PRESETS)}") from None
    kwargs.update(overrides)
    return make_toy_problem(seed=seed, **kwargs)
