"""PNG images, sequence manifests and the ``BGRD`` bilateral grid container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ._validation import check_image

GRID_MAGIC = b"BGRD"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4s5I")  # magic, version, H_s, W_s, D, P


def _png_bit_depth(path: Path) -> int:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError(f"{path} is not a PNG file")
    return head[24]


def load_image(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG as a float64 ``H x W x 3`` array in ``[0, 1]``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    depth = _png_bit_depth(path)
    if depth not in (1, 2, 4, 8, 16):
        raise ValueError(f"unsupported PNG bit depth {depth} in {path}")

    with Image.open(path) as im:
        mode = im.mode
        if depth == 16 and mode not in ("I;16", "I;16B", "I"):
            # Pillow reduces 16-bit colour PNGs to 8 bits on load.
            import cv2

            raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
            if raw is None:
                raise ValueError(f"could not decode {path}")
            if raw.ndim == 3:
                raw = raw[..., 2::-1] if raw.shape[-1] >= 3 else raw[..., :1]
            arr = raw.astype(np.float64) / 65535.0
        elif mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            if mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0

    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.size == 0:
        raise ValueError(f"{path} has a zero dimension")
    return check_image(arr, name=str(path))


def save_image(image, path) -> None:
    """Clamp to ``[0, 1]``, quantize with ``round(v * 255)`` and write an 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot save an image with non-finite values")
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 3 and q.shape[-1] == 1:
        q = q[..., 0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Fixed encoder settings keep repeated writes byte-identical.
    Image.fromarray(q).save(path, format="PNG", optimize=False, compress_level=6)


@dataclass
class SequenceManifest:
    scene_id: str
    reference_index: int
    frame_paths: list[str]
    ground_truth_paths: Optional[list[str]] = field(default=None)

    def __post_init__(self):
        if not self.frame_paths:
            raise ValueError("manifest needs at least one frame")
        if not 0 <= self.reference_index < len(self.frame_paths):
            raise ValueError(
                f"reference index {self.reference_index} out of range for {len(self.frame_paths)} frames"
            )
        if self.ground_truth_paths is not None and len(self.ground_truth_paths) != len(self.frame_paths):
            raise ValueError("ground_truth list must be parallel to frames")

    def to_dict(self) -> dict:
        out = {"scene": self.scene_id, "reference": self.reference_index, "frames": list(self.frame_paths)}
        if self.ground_truth_paths is not None:
            out["ground_truth"] = list(self.ground_truth_paths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SequenceManifest":
        try:
            return cls(
                scene_id=str(data["scene"]),
                reference_index=int(data["reference"]),
                frame_paths=[str(p) for p in data["frames"]],
                ground_truth_paths=None if data.get("ground_truth") is None else [str(p) for p in data["ground_truth"]],
            )
        except KeyError as exc:
            raise ValueError(f"manifest is missing key {exc}") from None

    def resolve(self, base) -> "SequenceManifest":
        """Return a copy with relative paths anchored at ``base``."""
        base = Path(base)
        fix = lambda ps: [str(p if Path(p).is_absolute() else base / p) for p in ps]  # noqa: E731
        gt = None if self.ground_truth_paths is None else fix(self.ground_truth_paths)
        return SequenceManifest(self.scene_id, self.reference_index, fix(self.frame_paths), gt)


def dumps_manifest(manifest: SequenceManifest) -> str:
    return json.dumps(manifest.to_dict(), indent=2)


def loads_manifest(text: str) -> SequenceManifest:
    return SequenceManifest.from_dict(json.loads(text))


def read_manifest(path) -> SequenceManifest:
    """Read a manifest; relative frame paths resolve against the manifest's directory."""
    path = Path(path)
    return loads_manifest(path.read_text()).resolve(path.parent)


def write_manifest(manifest: SequenceManifest, path) -> None:
    Path(path).write_text(dumps_manifest(manifest) + "\n")


def write_grid(grid, path) -> None:
    """Write a ``(H_s, W_s, D, P)`` grid as ``BGRD`` little-endian float32."""
    arr = np.asarray(grid)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ValueError(f"grid must be 4-d with positive dims, got {arr.shape}")
    header = _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _GRID_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, h, w, d, p = _GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}")
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    n = h * w * d * p
    body = data[_GRID_HEADER.size:]
    if len(body) != 4 * n:
        raise ValueError(f"{path}: truncated payload ({len(body)} bytes, expected {4 * n})")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, d, p).astype(np.float32)
