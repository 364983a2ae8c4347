"""Synthetic camera-ISP variation for building paired training sequences.

Images are decoded from sRGB to linear light, perturbed with white-balance
gains, exposure, a colour correction matrix and a spatially varying
shadow/highlight gain, then re-encoded with a gamma perturbation.  All
randomness flows from explicit integer seeds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_image, check_sequence

WB_RANGE = (0.5, 2.0)
EV_RANGE = (-2.5, 2.5)
GAMMA_RANGE = (0.7, 1.4)
SHADOW_MAX = 0.3
HIGHLIGHT_MAX = 0.5
CCM_OFFDIAG_MAX = 0.2
TONE_KNOTS = 4
REFERENCE_SEVERITY_SCALE = 0.5


@dataclass
class IspParams:
    wb_gain_r: float = 1.0
    wb_gain_b: float = 1.0
    exposure_ev: float = 0.0
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    gamma: float = 1.0
    shadow_lift: float = 0.0
    highlight_compress: float = 0.0
    tone_field_seed: int = 0
    tone_field_strength: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ccm"] = np.asarray(self.ccm).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IspParams":
        d = dict(d)
        d["ccm"] = np.asarray(d["ccm"], dtype=np.float64)
        return cls(**d)


@dataclass
class TrainingPair:
    inputs: list  # reference first, then corrupted sources
    targets: list  # ground-truth appearance for each source
    params: list  # IspParams per input frame (reference transform first)

    def __post_init__(self):
        if len(self.inputs) != len(self.targets) + 1:
            raise ValueError("a training pair needs exactly one more input than targets")


def srgb_to_linear(image) -> np.ndarray:
    v = np.maximum(np.asarray(image, dtype=np.float64), 0.0)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(image) -> np.ndarray:
    v = np.maximum(np.asarray(image, dtype=np.float64), 0.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


def _seed_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def sample_isp_params(seed: int, severity: float) -> IspParams:
    """Draw a corruption; each range shrinks linearly toward neutral with ``severity``."""
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    rng = _seed_rng(seed)
    s = float(severity)
    # Gains and gamma are drawn in log space so the ranges are symmetric about 1.
    wb_r = 2.0 ** (s * rng.uniform(np.log2(WB_RANGE[0]), np.log2(WB_RANGE[1])))
    wb_b = 2.0 ** (s * rng.uniform(np.log2(WB_RANGE[0]), np.log2(WB_RANGE[1])))
    ev = s * rng.uniform(*EV_RANGE)
    off = s * rng.uniform(-CCM_OFFDIAG_MAX, CCM_OFFDIAG_MAX, size=(3, 3))
    np.fill_diagonal(off, 0.0)
    ccm = off.copy()
    ccm[np.diag_indices(3)] = 1.0 - off.sum(axis=1)
    gamma = float(np.exp(s * rng.uniform(np.log(GAMMA_RANGE[0]), np.log(GAMMA_RANGE[1]))))
    return IspParams(
        wb_gain_r=float(wb_r),
        wb_gain_b=float(wb_b),
        exposure_ev=float(ev),
        ccm=ccm,
        gamma=gamma,
        shadow_lift=float(s * rng.uniform(0.0, SHADOW_MAX)),
        highlight_compress=float(s * rng.uniform(0.0, HIGHLIGHT_MAX)),
        tone_field_seed=int(rng.integers(0, 2**31 - 1)),
        tone_field_strength=float(s * rng.uniform(0.0, 1.0)),
    )


def upsample_knots(knots: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear upsampling of a knot lattice whose corners sit on the image corners."""
    kh, kw = knots.shape
    ys = np.linspace(0.0, kh - 1, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, kw - 1, w) if w > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(int), kh - 1)
    x0 = np.minimum(np.floor(xs).astype(int), kw - 1)
    y1 = np.minimum(y0 + 1, kh - 1)
    x1 = np.minimum(x0 + 1, kw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = knots[y0][:, x0] * (1 - fx) + knots[y0][:, x1] * fx
    bot = knots[y1][:, x0] * (1 - fx) + knots[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def spatial_tone_field(seed: int, h: int, w: int) -> np.ndarray:
    if h < 1 or w < 1:
        raise ValueError("tone field dims must be positive")
    knots = _seed_rng(seed).uniform(-1.0, 1.0, size=(TONE_KNOTS, TONE_KNOTS))
    return upsample_knots(knots, h, w)


def apply_isp_variation(image, params: IspParams) -> np.ndarray:
    img = check_image(image)
    lin = srgb_to_linear(img)
    gain = 2.0 ** params.exposure_ev
    lin = lin * np.array([params.wb_gain_r, 1.0, params.wb_gain_b]) * gain
    lin = lin @ np.asarray(params.ccm).T
    if params.tone_field_strength != 0.0:
        field_ = spatial_tone_field(params.tone_field_seed, *img.shape[:2])
        # Luma is clamped so over-exposed pixels cannot flip the sign of the gain.
        y = np.clip(lin @ np.array([0.2126, 0.7152, 0.0722]), 0.0, 1.0)
        g = 1.0 + params.tone_field_strength * field_ * (
            params.shadow_lift * (1.0 - y) - params.highlight_compress * y
        )
        lin = lin * g[..., None]
    out = linear_to_srgb(lin) ** params.gamma
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("ISP variation produced non-finite values")
    return np.clip(out, 0.0, 1.0)


def generate_training_pair(sequence, seed: int, severity: float) -> TrainingPair:
    """Corrupt a consistent sequence into (inputs, targets).

    One shared transform (at half severity) defines the target appearance for
    every frame; each source frame then receives its own independent
    corruption on top of that.
    """
    frames = check_sequence(sequence, "sequence", min_len=2)
    root = np.random.SeedSequence(int(seed))
    ref_seed, *frame_seeds = (int(c.generate_state(1)[0]) for c in root.spawn(len(frames)))
    t_ref = sample_isp_params(ref_seed, REFERENCE_SEVERITY_SCALE * severity)
    shared = [apply_isp_variation(f, t_ref) for f in frames]
    inputs = [shared[0]]
    params = [t_ref]
    for f, fs in zip(shared[1:], frame_seeds):
        t_i = sample_isp_params(fs, severity)
        inputs.append(apply_isp_variation(f, t_i))
        params.append(t_i)
    return TrainingPair(inputs=inputs, targets=shared[1:], params=params)


def _scene_layout(seed: int, n: int, h: int, w: int, jitter: bool):
    rng = _seed_rng(seed, 1)
    ch, cw = 2 * h, 2 * w
    corners = rng.uniform(0.1, 0.8, size=(2, 2, 3))
    yy = np.linspace(0.0, 1.0, ch)[:, None, None]
    xx = np.linspace(0.0, 1.0, cw)[None, :, None]
    canvas = (
        corners[0, 0] * (1 - yy) * (1 - xx)
        + corners[0, 1] * (1 - yy) * xx
        + corners[1, 0] * yy * (1 - xx)
        + corners[1, 1] * yy * xx
    )
    rows = np.arange(ch)[:, None]
    cols = np.arange(cw)[None, :]
    for _ in range(int(rng.integers(5, 16))):
        color = rng.uniform(0.03, 0.97, size=3)
        cy, cx = rng.uniform(0, ch), rng.uniform(0, cw)
        ry, rx = rng.uniform(0.05, 0.3) * ch, rng.uniform(0.05, 0.3) * cw
        if rng.random() < 0.5:
            mask = (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
        else:
            mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        canvas[mask] = color

    oy, ox = h // 2, w // 2
    offsets = [(oy, ox)]
    for _ in range(1, n):
        if jitter:
            oy = int(np.clip(oy + rng.integers(-(h // 4), h // 4 + 1), 0, ch - h))
            ox = int(np.clip(ox + rng.integers(-(w // 4), w // 4 + 1), 0, cw - w))
        offsets.append((oy, ox))
    return np.clip(canvas, 0.0, 1.0), offsets


def crop_offsets(seed: int, n: int, h: int, w: int, jitter: bool = True) -> list[tuple[int, int]]:
    """Top-left crop offsets that :func:`synth_scene` uses for the same arguments."""
    return _scene_layout(seed, n, h, w, jitter)[1]


def synth_scene(seed: int, n: int, h: int, w: int, jitter: bool = True) -> list[np.ndarray]:
    """Procedural multi-view proxy: overlapping crops of one random canvas.

    The canvas is ``2h x 2w``: a smooth colour gradient plus 5-15 random
    rectangles and ellipses.  Consecutive crop offsets move by at most a
    quarter of the crop size along each axis, so neighbouring views overlap
    by at least 56%.  ``jitter=False`` returns ``n`` identical aligned views.
    """
    if n < 1 or h < 1 or w < 1:
        raise ValueError("scene dims must be positive")
    canvas, offsets = _scene_layout(seed, n, h, w, jitter)
    return [canvas[oy:oy + h, ox:ox + w].copy() for oy, ox in offsets]
