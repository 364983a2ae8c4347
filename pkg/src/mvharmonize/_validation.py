"""Input validation helpers shared by the estimators and module entry points."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_image(image, name: str = "image", allow_unbounded: bool = False) -> np.ndarray:
    """Return ``image`` as a float64 ``H x W x 3`` array.

    Grayscale ``H x W`` input is replicated to three channels.  Values must be
    finite; unless ``allow_unbounded`` they must also lie in ``[0, 1]``.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} has a zero dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if not allow_unbounded and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} and {names[1]} differ in shape: {a.shape} vs {b.shape}")


def check_sequence(images: Sequence, name: str = "sequence", min_len: int = 1) -> list[np.ndarray]:
    """Validate a list of equally sized images."""
    if len(images) < min_len:
        raise ValueError(f"{name} needs at least {min_len} images, got {len(images)}")
    out = [check_image(im, f"{name}[{i}]") for i, im in enumerate(images)]
    for i, im in enumerate(out[1:], start=1):
        check_same_shape(out[0], im, (f"{name}[0]", f"{name}[{i}]"))
    return out


def check_grid_dims(h_s: int, w_s: int, d: int) -> tuple[int, int, int]:
    dims = tuple(int(v) for v in (h_s, w_s, d))
    if dims[0] < 1 or dims[1] < 1 or dims[2] < 2:
        raise ValueError(f"grid dims need h_s, w_s >= 1 and d >= 2, got {dims}")
    return dims


def parse_dims(text: str) -> tuple[int, ...]:
    """Parse ``"8x8x8"`` style dimension strings."""
    try:
        return tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"cannot parse dimensions {text!r}; expected e.g. 8x8x8") from None
