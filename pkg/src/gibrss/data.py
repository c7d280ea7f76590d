"""Synthetic labeled images and binary image I/O.

The generator paints 2-5 irregular blobs (random-walk-perturbed polygons,
scanline even-odd fill) in class-specific base colors over a background
class, adds Gaussian pixel noise, and emits exactly matching label maps.
Images round-trip through binary PPM (P6), labels through binary PGM
(P5), with a JSON manifest tying a dataset together.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FileFormatError
from .rng import RngStream

# class index -> base RGB; kept away from 0/1 so noise never clips the mean
PALETTE = np.array([
    [0.20, 0.20, 0.20],
    [0.80, 0.25, 0.25],
    [0.25, 0.60, 0.80],
    [0.30, 0.75, 0.35],
    [0.85, 0.70, 0.25],
    [0.65, 0.35, 0.75],
    [0.85, 0.50, 0.20],
    [0.30, 0.70, 0.65],
    [0.75, 0.45, 0.55],
    [0.55, 0.55, 0.30],
])

NOISE_SIGMA = 0.05


@dataclass
class LabeledImage:
    image: np.ndarray            # [h, w, 3] floats in [0, 1]
    labels: np.ndarray           # [h, w] int64 class indices
    id: str


def class_color(c):
    return PALETTE[c % len(PALETTE)]


def _blob_polygon(rng, size):
    """Closed polygon with random-walk radial perturbation."""
    n = int(rng.integers(8, 15))
    base = rng.uniform((), size * 0.16, size * 0.30)
    center = rng.uniform((2,), size * 0.22, size * 0.78)
    angles = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    steps = rng.normal(n) * 0.22
    walk = np.cumsum(steps)
    walk -= np.linspace(0.0, walk[-1], n)   # close the loop
    walk -= walk.mean()
    radii = base * np.clip(1.0 + walk, 0.40, 1.80)
    rows = center[0] + radii * np.sin(angles)
    cols = center[1] + radii * np.cos(angles)
    return np.stack([rows, cols], axis=1)


def fill_polygon(points, h, w):
    """Even-odd scanline rasterization onto an h x w boolean mask."""
    mask = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    for row in range(h):
        y = row + 0.5
        xs = []
        for i in range(n):
            y1, x1 = pts[i]
            y2, x2 = pts[(i + 1) % n]
            if (y1 <= y < y2) or (y2 <= y < y1):
                t = (y - y1) / (y2 - y1)
                xs.append(x1 + t * (x2 - x1))
        xs.sort()
        for j in range(0, len(xs) - 1, 2):
            lo = int(np.ceil(xs[j] - 0.5))
            hi = int(np.floor(xs[j + 1] - 0.5))
            if hi >= 0 and lo < w:
                mask[row, max(lo, 0): min(hi, w - 1) + 1] = True
    return mask


def synth_image(size, classes, rng, id_=""):
    """One irregular-blob image with an exact label map."""
    labels = np.zeros((size, size), dtype=np.int64)
    image = np.tile(class_color(0), (size, size, 1))
    for _ in range(int(rng.integers(2, 6))):
        cls = int(rng.integers(1, classes))
        poly = _blob_polygon(rng, size)
        mask = fill_polygon(poly, size, size)
        labels[mask] = cls
        image[mask] = class_color(cls)
    image = image + rng.normal((size, size, 3)) * NOISE_SIGMA
    return LabeledImage(np.clip(image, 0.0, 1.0), labels, id_)


def synth_dataset(n, size, classes, seed):
    """Deterministic list of labeled images; item i depends on (seed, i) only."""
    if n < 0:
        raise ContractError(f"n must be >= 0, got {n}")
    if n and size < 32:
        raise ContractError(f"size must be >= 32, got {size}")
    if n and classes < 2:
        raise ContractError(f"classes must be >= 2, got {classes}")
    root = RngStream(seed, stream=77)
    return [synth_image(size, classes, root.split(i), f"synth-{seed}-{i:04d}")
            for i in range(n)]


# ---------------------------------------------------------------------------
# PPM / PGM


def _read_header(data, magic):
    if not data.startswith(magic):
        raise FileFormatError(f"expected {magic.decode()} header")
    tokens = []
    pos = len(magic)
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens[0], tokens[1], tokens[2], pos + 1


def write_ppm(path, image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"PPM needs [h, w, 3] floats, got shape {img.shape}")
    h, w = img.shape[:2]
    payload = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(payload.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    w, h, maxval, off = _read_header(data, b"P6")
    if maxval != 255:
        raise FileFormatError(f"unsupported PPM maxval {maxval}")
    body = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=off)
    return body.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, labels):
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ContractError(f"PGM needs [h, w] labels, got shape {lab.shape}")
    if lab.min() < 0 or lab.max() > 255:
        raise ContractError("PGM labels must fit in [0, 255]")
    h, w = lab.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(lab.astype(np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    w, h, maxval, off = _read_header(data, b"P5")
    if maxval != 255:
        raise FileFormatError(f"unsupported PGM maxval {maxval}")
    body = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=off)
    return body.reshape(h, w).astype(np.int64)


# ---------------------------------------------------------------------------
# dataset on disk


def save_dataset(dataset, out_dir, classes):
    """Write images/labels plus the JSON manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    items = []
    for item in dataset:
        img_name = f"{item.id}.ppm"
        lab_name = f"{item.id}.pgm"
        write_ppm(os.path.join(out_dir, img_name), item.image)
        write_pgm(os.path.join(out_dir, lab_name), item.labels)
        items.append({"id": item.id, "image": img_name, "labels": lab_name})
    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w") as f:
        json.dump({"classes": int(classes), "items": items}, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_dataset(manifest_path):
    """Read a dataset back; returns (list of LabeledImage, classes)."""
    with open(manifest_path) as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise FileFormatError(f"manifest {manifest_path} is not valid JSON: {e}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for item in meta["items"]:
        image = read_ppm(os.path.join(base, item["image"]))
        labels = read_pgm(os.path.join(base, item["labels"]))
        out.append(LabeledImage(image, labels, item["id"]))
    return out, int(meta["classes"])
