"""Facial motion data model: sequences of expression/pose coefficients, the
upper/lower region partition, Savitzky-Golay smoothing, and on-disk format.

A sequence carries a static per-speaker shape vector plus per-frame expression
and pose coefficient vectors. All operations here are pure functions.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "MotionFrame",
    "MotionSequence",
    "RegionPartition",
    "SmoothingSkippedWarning",
    "savgol_smooth",
    "split_regions",
    "merge_regions",
    "save_sequence",
    "load_sequence",
]


class SmoothingSkippedWarning(UserWarning):
    """Raised as a warning when the smoothing window exceeds the sequence length."""


@dataclass(frozen=True)
class MotionFrame:
    """A single frame of facial motion coefficients."""

    expression: np.ndarray  # (E,)
    pose: np.ndarray  # (P,)

    def __post_init__(self):
        expr = np.asarray(self.expression, dtype=np.float64)
        pose = np.asarray(self.pose, dtype=np.float64)
        if expr.ndim != 1 or pose.ndim != 1:
            raise ValueError("expression and pose must be 1-D vectors")
        if not (np.isfinite(expr).all() and np.isfinite(pose).all()):
            raise ValueError("motion frame contains non-finite entries")
        object.__setattr__(self, "expression", expr)
        object.__setattr__(self, "pose", pose)


@dataclass(frozen=True)
class MotionSequence:
    """A motion clip: static shape plus T frames of expression/pose.

    Internally frames are stored as (T, E) and (T, P) arrays; ``frame(t)``
    gives a per-frame view.
    """

    shape: np.ndarray  # (S,)
    expression: np.ndarray  # (T, E)
    pose: np.ndarray  # (T, P)
    fps: int = 25

    def __post_init__(self):
        shape = np.atleast_1d(np.asarray(self.shape, dtype=np.float64))
        expr = np.asarray(self.expression, dtype=np.float64)
        pose = np.asarray(self.pose, dtype=np.float64)
        if expr.ndim != 2 or pose.ndim != 2:
            raise ValueError("expression and pose must be (T, dim) matrices")
        if expr.shape[0] != pose.shape[0]:
            raise ValueError(
                f"frame count mismatch: expression T={expr.shape[0]}, pose T={pose.shape[0]}"
            )
        if expr.shape[0] < 1:
            raise ValueError("a motion sequence needs at least one frame")
        if int(self.fps) <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        for name, arr in (("shape", shape), ("expression", expr), ("pose", pose)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "expression", expr)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "fps", int(self.fps))

    @property
    def num_frames(self) -> int:
        return self.expression.shape[0]

    @property
    def expression_dim(self) -> int:
        return self.expression.shape[1]

    @property
    def pose_dim(self) -> int:
        return self.pose.shape[1]

    def frame(self, t: int) -> MotionFrame:
        return MotionFrame(self.expression[t], self.pose[t])

    def motion_matrix(self) -> np.ndarray:
        """Concatenated (T, E+P) view of expression and pose channels."""
        return np.concatenate([self.expression, self.pose], axis=1)


@dataclass(frozen=True)
class RegionPartition:
    """Partition of expression dims into an upper-face and a lower-face group."""

    upper_indices: tuple[int, ...]
    lower_indices: tuple[int, ...]

    def __post_init__(self):
        upper = tuple(int(i) for i in self.upper_indices)
        lower = tuple(int(i) for i in self.lower_indices)
        if not upper or not lower:
            raise ValueError("both regions must be nonempty")
        if set(upper) & set(lower):
            raise ValueError("upper and lower regions must be disjoint")
        object.__setattr__(self, "upper_indices", upper)
        object.__setattr__(self, "lower_indices", lower)

    def validate(self, n_dims: int) -> None:
        """Check that the partition covers exactly {0..n_dims-1}."""
        all_idx = set(self.upper_indices) | set(self.lower_indices)
        if all_idx != set(range(n_dims)):
            raise ValueError(
                f"partition must cover exactly 0..{n_dims - 1}, got {sorted(all_idx)}"
            )


def _fit_window(x: np.ndarray, y: np.ndarray, polyorder: int, x_eval: float) -> np.ndarray:
    # Least-squares polynomial fit per channel; y is (n, C).
    deg = min(polyorder, len(x) - 1)
    coeffs = np.polyfit(x, y, deg)  # (deg+1, C)
    return np.polyval(coeffs, x_eval)


def _savgol_matrix(data: np.ndarray, window: int, polyorder: int) -> np.ndarray:
    """Savitzky-Golay smoothing of each column of a (T, C) matrix.

    Boundary frames are fitted on the one-sided window truncated at the
    sequence edge rather than mirrored or extrapolated data.
    """
    T = data.shape[0]
    half = window // 2
    out = np.empty_like(data, dtype=np.float64)
    # Interior frames share one set of convolution weights.
    interior = np.arange(half, T - half)
    if interior.size:
        x = np.arange(-half, half + 1, dtype=np.float64)
        V = np.vander(x, polyorder + 1, increasing=True)
        # Row of the projection that evaluates the fit at the window center.
        w = np.linalg.lstsq(V.T @ V, V.T, rcond=None)[0][0]
        for t in interior:
            out[t] = w @ data[t - half : t + half + 1]
    for t in range(T):
        if half <= t < T - half:
            continue
        lo, hi = max(0, t - half), min(T, t + half + 1)
        x = np.arange(lo, hi, dtype=np.float64)
        out[t] = _fit_window(x, data[lo:hi], polyorder, float(t))
    return out


def savgol_smooth(seq: MotionSequence, window: int = 9, polyorder: int = 2) -> MotionSequence:
    """Smooth expression and pose channels with a Savitzky-Golay filter.

    The static shape vector and fps are untouched. If the window is longer
    than the sequence, the sequence is returned unchanged and a
    ``SmoothingSkippedWarning`` is emitted.
    """
    window = int(window)
    polyorder = int(polyorder)
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    if polyorder >= window:
        raise ValueError(f"polyorder ({polyorder}) must be < window ({window})")
    if polyorder < 0:
        raise ValueError("polyorder must be nonnegative")
    if window > seq.num_frames:
        warnings.warn(
            f"window {window} exceeds sequence length {seq.num_frames}; returning unsmoothed",
            SmoothingSkippedWarning,
        )
        return seq
    return replace(
        seq,
        expression=_savgol_matrix(seq.expression, window, polyorder),
        pose=_savgol_matrix(seq.pose, window, polyorder),
    )


def split_regions(
    frame_features: np.ndarray, partition: RegionPartition
) -> tuple[np.ndarray, np.ndarray]:
    """Split a (T, E) feature matrix into its upper and lower region columns."""
    feats = np.asarray(frame_features)
    if feats.ndim != 2:
        raise ValueError("frame_features must be a (T, E) matrix")
    partition.validate(feats.shape[1])
    return feats[:, list(partition.upper_indices)], feats[:, list(partition.lower_indices)]


def merge_regions(
    upper: np.ndarray, lower: np.ndarray, partition: RegionPartition
) -> np.ndarray:
    """Inverse of :func:`split_regions`."""
    upper = np.asarray(upper)
    lower = np.asarray(lower)
    E = upper.shape[1] + lower.shape[1]
    partition.validate(E)
    out = np.empty((upper.shape[0], E), dtype=np.result_type(upper, lower))
    out[:, list(partition.upper_indices)] = upper
    out[:, list(partition.lower_indices)] = lower
    return out


def _write_f32(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_f32(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise ValueError(f"{path}: expected {expected} float32 values, found {arr.size}")
    return arr.reshape(shape)


def save_sequence(
    seq: MotionSequence,
    directory: str | Path,
    speaker_id: int | None = None,
    content_id: int | None = None,
) -> None:
    """Serialize a sequence as manifest.json plus raw little-endian f32 files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "num_frames": seq.num_frames,
        "expression_dim": seq.expression_dim,
        "pose_dim": seq.pose_dim,
        "shape_dim": int(seq.shape.shape[0]),
        "fps": seq.fps,
        "speaker_id": speaker_id,
        "content_id": content_id,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    _write_f32(directory / "expression.f32", seq.expression)
    _write_f32(directory / "pose.f32", seq.pose)
    _write_f32(directory / "shape.f32", seq.shape)


def load_sequence(directory: str | Path) -> MotionSequence:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {directory}")
    m = json.loads(manifest_path.read_text())
    T, E, P, S = m["num_frames"], m["expression_dim"], m["pose_dim"], m["shape_dim"]
    return MotionSequence(
        shape=_read_f32(directory / "shape.f32", (S,)),
        expression=_read_f32(directory / "expression.f32", (T, E)),
        pose=_read_f32(directory / "pose.f32", (T, P)),
        fps=m["fps"],
    )
