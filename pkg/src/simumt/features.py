"""Acoustic feature matrices and training-time augmentations.

A feature matrix is T frames by D coefficients at a fixed frame shift.
Two augmentations operate on it: masking/warping (time warp around the
center frame, then frequency masks, then time masks, all drawn from one
seeded generator) and speed perturbation (linear resampling of the time
axis).  Both return new matrices and leave the input untouched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureMatrix:
    """frames: (T, D) float64; frame_shift_ms: positive frame step."""

    frames: np.ndarray
    frame_shift_ms: float

    def __post_init__(self) -> None:
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ValueError(f"frames must be (T>=1, D>=1), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite feature values")
        if not self.frame_shift_ms > 0:
            raise ValueError("frame_shift_ms must be positive")
        object.__setattr__(self, "frames", f)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.n_frames * self.frame_shift_ms

    def save(self, path) -> None:
        header = {
            "T": self.n_frames,
            "D": self.n_coeffs,
            "frame_shift_ms": self.frame_shift_ms,
        }
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(header) + "\n")
            for row in self.frames:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        try:
            header = json.loads(lines[0])
            t, d = int(header["T"]), int(header["D"])
            rows = [[float(v) for v in ln.split()] for ln in lines[1 : 1 + t]]
            frames = np.array(rows, dtype=np.float64)
            if frames.shape != (t, d) or len(lines) != 1 + t:
                raise ValueError
            return cls(frames=frames, frame_shift_ms=float(header["frame_shift_ms"]))
        except (ValueError, KeyError, IndexError, json.JSONDecodeError) as e:
            raise ValueError(f"malformed feature file {path}") from e


def _resample_time(frames: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Rows of ``frames`` linearly interpolated at fractional ``positions``."""
    lo = np.floor(positions).astype(int)
    hi = np.minimum(lo + 1, frames.shape[0] - 1)
    frac = (positions - lo)[:, None]
    return (1.0 - frac) * frames[lo] + frac * frames[hi]


def spec_augment(
    feat: FeatureMatrix,
    W: int,
    F: int,
    T_mask: int,
    n_freq_masks: int = 1,
    n_time_masks: int = 1,
    rng_seed: int = 0,
) -> FeatureMatrix:
    """Time warp then frequency masks then time masks, zero fill.

    The warp moves the center frame by an integer offset drawn uniformly
    from [-W, W] (clipped so it stays interior) and linearly resamples the
    two resulting spans; endpoints stay fixed.  Each frequency mask zeroes
    a band of width drawn from [0, F]; each time mask a span of width
    drawn from [0, T_mask].  With W = F = T_mask = 0 the output equals the
    input exactly.
    """
    T, D = feat.n_frames, feat.n_coeffs
    if W < 0 or F < 0 or T_mask < 0 or n_freq_masks < 0 or n_time_masks < 0:
        raise ValueError("augmentation parameters must be non-negative")
    if F >= D:
        raise ValueError(f"max frequency-mask width {F} must be < D={D}")
    if T_mask >= T:
        raise ValueError(f"max time-mask width {T_mask} must be < T={T}")

    rng = np.random.default_rng(rng_seed)
    frames = feat.frames.copy()

    if W > 0 and T >= 3:
        center = T // 2
        w = int(rng.integers(-W, W + 1))
        w = int(np.clip(w, 1 - center, (T - 2) - center))
        if w != 0:
            knots_out = np.array([0.0, center + w, T - 1.0])
            knots_src = np.array([0.0, float(center), T - 1.0])
            positions = np.interp(np.arange(T, dtype=np.float64), knots_out, knots_src)
            frames = _resample_time(frames, positions)

    for _ in range(n_freq_masks):
        f = int(rng.integers(0, F + 1))
        f0 = int(rng.integers(0, D - f + 1))
        frames[:, f0 : f0 + f] = 0.0

    for _ in range(n_time_masks):
        t = int(rng.integers(0, T_mask + 1))
        t0 = int(rng.integers(0, T - t + 1))
        frames[t0 : t0 + t, :] = 0.0

    return FeatureMatrix(frames=frames, frame_shift_ms=feat.frame_shift_ms)


def speed_perturb(feat: FeatureMatrix, factor: float) -> FeatureMatrix:
    """Resample the time axis so duration scales by 1/factor.

    The output has round(T / factor) frames (Python banker's rounding);
    row j samples the input at position j * (T-1) / (T'-1) with linear
    interpolation, so both endpoints are preserved.  factor == 1.0 is an
    exact identity.
    """
    if not factor > 0:
        raise ValueError("factor must be positive")
    if factor == 1.0:
        return FeatureMatrix(frames=feat.frames.copy(), frame_shift_ms=feat.frame_shift_ms)
    T = feat.n_frames
    T2 = round(T / factor)
    if T2 < 1:
        raise ValueError(f"factor {factor} leaves no frames (T={T})")
    positions = np.linspace(0.0, T - 1.0, T2)
    return FeatureMatrix(
        frames=_resample_time(feat.frames, positions),
        frame_shift_ms=feat.frame_shift_ms,
    )
