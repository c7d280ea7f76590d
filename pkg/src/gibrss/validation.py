"""Input validation helpers for the estimator and CLI surfaces."""

import numpy as np

from .errors import ContractError


def check_image(image, name="image"):
    """Coerce to [h, w, 3] float64 in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"{name} must be [h, w, 3], got shape {arr.shape}")
    if np.isnan(arr).any():
        raise ContractError(f"{name} contains NaN")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ContractError(f"{name} values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def check_labels(labels, shape, classes=None, name="labels"):
    arr = np.asarray(labels)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.rint(arr)):
            raise ContractError(f"{name} must be integer class indices")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64)
    if arr.shape != tuple(shape):
        raise ContractError(f"{name} shape {arr.shape} != image shape {tuple(shape)}")
    if arr.min() < 0:
        raise ContractError(f"{name} contains negative class indices")
    if classes is not None and arr.max() >= classes:
        raise ContractError(f"{name} has class {arr.max()} but only {classes} classes")
    return arr


def check_image_batch(X, name="X"):
    """A batch is a list/array of images; returns a list of checked images."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = list(X)
    if not isinstance(X, (list, tuple)):
        raise ContractError(f"{name} must be a sequence of images")
    if len(X) == 0:
        raise ContractError(f"{name} is empty")
    return [check_image(img, f"{name}[{i}]") for i, img in enumerate(X)]


def check_label_batch(y, images, classes=None, name="y"):
    if isinstance(y, np.ndarray) and y.ndim == 3:
        y = list(y)
    if not isinstance(y, (list, tuple)) or len(y) != len(images):
        raise ContractError(f"{name} must supply one label map per image")
    return [check_labels(lab, img.shape[:2], classes, f"{name}[{i}]")
            for i, (lab, img) in enumerate(zip(y, images))]
