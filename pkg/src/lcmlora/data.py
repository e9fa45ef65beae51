"""Toy datasets: a labelled Gaussian ring mixture and 8x8 'images'."""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .errors import ConfigError

STYLE_TRANSFORMS = ("none", "rotate90", "scale0.5", "shear")


def ring_mixture(n, n_classes=8, radius=1.0, std=0.05, rng=None):
    """``n`` points, labels cycling through the modes, modes evenly spaced on a ring."""
    rng = np.random.default_rng(rng)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    angles = 2.0 * math.pi * labels / n_classes
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    x = centres + std * rng.standard_normal((n, 2))
    return x.astype(np.float32), labels.astype(np.int64)


def ring_centres(n_classes=8, radius=1.0):
    a = 2.0 * math.pi * np.arange(n_classes) / n_classes
    return radius * np.stack([np.cos(a), np.sin(a)], axis=1)


def image_templates(n_classes=8, side=8):
    """One smooth bump per class, bump centres placed on a ring inside the image."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    c = (side - 1) / 2.0
    out = []
    for k in range(n_classes):
        a = 2.0 * math.pi * k / n_classes
        cy, cx = c + 2.5 * math.sin(a), c + 2.5 * math.cos(a)
        out.append(np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 2.0))
    return np.stack(out)


def image_mixture(n, n_classes=8, side=8, noise=0.05, rng=None):
    rng = np.random.default_rng(rng)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    tmpl = image_templates(n_classes, side)
    amp = 1.0 + 0.1 * rng.standard_normal(n)
    imgs = amp[:, None, None] * tmpl[labels] + noise * rng.standard_normal((n, side, side))
    return imgs.reshape(n, side * side).astype(np.float32), labels.astype(np.int64)


def apply_style(x, transform):
    """Style transforms act on 2-D points, or on square images for image data."""
    if transform not in STYLE_TRANSFORMS:
        raise ConfigError(f"unknown style transform {transform!r}; expected one of {STYLE_TRANSFORMS}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] == 2:
        if transform == "none":
            m = np.eye(2)
        elif transform == "rotate90":
            m = np.array([[0.0, -1.0], [1.0, 0.0]])
        elif transform == "scale0.5":
            m = 0.5 * np.eye(2)
        else:
            m = np.array([[1.0, 0.5], [0.0, 1.0]])
        return (x @ m.T).astype(np.float32)
    side = int(round(math.sqrt(x.shape[1])))
    if side * side != x.shape[1]:
        raise ConfigError("style transforms need 2-D points or square images")
    imgs = x.reshape(-1, side, side)
    if transform == "rotate90":
        imgs = np.rot90(imgs, k=1, axes=(1, 2))
    elif transform == "scale0.5":
        imgs = 0.5 * imgs
    elif transform == "shear":
        imgs = np.stack([np.stack([np.roll(im[r], r // 2) for r in range(side)]) for im in imgs])
    return imgs.reshape(len(x), -1).astype(np.float32)


def generate(kind, n, n_classes, seed, style_transform="rotate90"):
    """Train, held-out, style-train and style-held-out splits, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=4)
    make = ring_mixture if kind == "mixture2d" else image_mixture
    if kind not in ("mixture2d", "image8x8"):
        raise ConfigError(f"unknown data kind {kind!r}")
    train = make(n, n_classes, rng=seeds[0])
    heldout = make(n, n_classes, rng=seeds[1])
    sx, sl = make(n, n_classes, rng=seeds[2])
    hx, hl = make(n, n_classes, rng=seeds[3])
    style = (apply_style(sx, style_transform), sl)
    style_heldout = (apply_style(hx, style_transform), hl)
    return {"train": train, "heldout": heldout, "style": style, "style_heldout": style_heldout}


def write_csv(path, x, labels):
    x = np.asarray(x)
    header = [f"x{i + 1}" for i in range(x.shape[1])] + ["label"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, lab in zip(x.tolist(), np.asarray(labels).tolist()):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[-1] != "label":
            raise ConfigError(f"{path}: expected a header ending in 'label'")
        rows = list(r)
    x = np.array([[float(v) for v in row[:-1]] for row in rows], dtype=np.float32).reshape(len(rows), -1)
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    return x, labels


def write_descriptor(path, desc):
    with open(path, "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")
