"""Kernel temporal segmentation of presentation videos into slide scenes.

Operates on a precomputed frame-feature matrix (visual feature extraction
happens out of process). The feature file is binary: a 12-byte header of
frame count T (uint32 LE), feature dim d (uint32 LE) and fps (float32 LE),
followed by T*d float32 values row-major. Rows are L2-normalized on load.

Segmentation minimizes total within-segment kernel scatter plus a penalty of
``penalty_coeff * m * (log(T / m) + 1)`` over candidate segment counts m.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, PreconditionError

_HEADER = struct.Struct("<IIf")


class FeatureMatrix:
    """T x d frame features with their sampling rate; rows unit-normalized."""

    def __init__(self, frames: np.ndarray, fps: float):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InputError(f"feature matrix must be 2-D with T >= 1, got {frames.shape}")
        if fps <= 0:
            raise InputError("fps must be positive")
        norms = np.linalg.norm(frames, axis=1)
        if np.any(norms == 0):
            bad = int(np.flatnonzero(norms == 0)[0])
            raise InputError(f"frame {bad} has a zero feature vector")
        self.frames = frames / norms[:, None]
        self.fps = float(fps)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    def strided(self, stride: int) -> "FeatureMatrix":
        if stride < 1:
            raise InputError("stride must be >= 1")
        # Effective rate drops with the stride; span arithmetic stays in
        # original seconds via frame-index rescaling in build_plan.
        return FeatureMatrix(self.frames[::stride], self.fps / stride)


def save_features(path: str | Path, frames: np.ndarray, fps: float) -> None:
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2:
        raise InputError("feature matrix must be 2-D")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(t, d, float(fps)))
        fh.write(frames.astype("<f4").tobytes(order="C"))


def load_features(path: str | Path) -> FeatureMatrix:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read feature file {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise InputError(f"feature file {path} is truncated")
    t, d, fps = _HEADER.unpack_from(blob)
    expected = _HEADER.size + 4 * t * d
    if len(blob) != expected:
        raise InputError(
            f"feature file {path} holds {len(blob)} bytes, expected {expected} "
            f"for T={t}, d={d}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t, d)
    return FeatureMatrix(data, fps)


def build_kernel(features: FeatureMatrix) -> np.ndarray:
    """Linear kernel over unit-normalized frames: symmetric, unit diagonal."""
    k = features.frames @ features.frames.T
    k = (k + k.T) / 2.0
    np.fill_diagonal(k, 1.0)
    return k


def _scatter_table(kernel: np.ndarray):
    """Precompute closures for within-segment scatter over [a, b) spans."""
    t = kernel.shape[0]
    # 2-D prefix sums with a zero border: block(a, b) in O(1).
    prefix = np.zeros((t + 1, t + 1))
    prefix[1:, 1:] = kernel.cumsum(axis=0).cumsum(axis=1)
    diag = np.concatenate([[0.0], np.diag(kernel).cumsum()])

    def block(a: int, b: int) -> float:
        return prefix[b, b] - prefix[a, b] - prefix[b, a] + prefix[a, a]

    def scatter(a: int, b: int) -> float:
        length = b - a
        if length <= 0:
            return 0.0
        return (diag[b] - diag[a]) - block(a, b) / length

    def scatter_row(starts: np.ndarray, b: int) -> np.ndarray:
        lengths = b - starts
        blocks = prefix[b, b] - prefix[starts, b] - prefix[b, starts] + prefix[starts, starts]
        return (diag[b] - diag[starts]) - blocks / lengths

    return scatter, scatter_row


def segment_cost_table(
    kernel: np.ndarray, max_segments: int
) -> tuple[np.ndarray, np.ndarray]:
    """DP over (segment count, prefix length).

    Returns (cost, back) where cost[m, t] is the minimal total scatter of
    splitting the first t frames into m segments and back[m, t] the start of
    the last segment on the optimal (earliest-start on ties) path.
    """
    t_total = kernel.shape[0]
    scatter, scatter_row = _scatter_table(kernel)
    cost = np.full((max_segments + 1, t_total + 1), np.inf)
    back = np.zeros((max_segments + 1, t_total + 1), dtype=np.int64)
    for t in range(1, t_total + 1):
        cost[1, t] = scatter(0, t)
    for m in range(2, max_segments + 1):
        for t in range(m, t_total + 1):
            starts = np.arange(m - 1, t)
            totals = cost[m - 1, starts] + scatter_row(starts, t)
            best = int(np.argmin(totals))
            cost[m, t] = totals[best]
            back[m, t] = starts[best]
    return cost, back


def segment(
    kernel: np.ndarray, max_segments: int, penalty_coeff: float = 1.0
) -> list[int]:
    """Choose change points minimizing scatter plus the segment-count penalty.

    Returns strictly increasing interior frame indices; an empty list means a
    single scene. Ties prefer fewer segments and earlier boundaries.
    """
    t_total = kernel.shape[0]
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise InputError(f"kernel must be square, got {kernel.shape}")
    if not np.allclose(kernel, kernel.T, atol=1e-8):
        raise PreconditionError("kernel must be symmetric")
    if not 1 <= max_segments <= t_total:
        raise PreconditionError(
            f"max_segments must lie in [1, {t_total}], got {max_segments}"
        )
    if penalty_coeff < 0:
        raise PreconditionError("penalty_coeff must be >= 0")

    cost, back = segment_cost_table(kernel, max_segments)

    best_m = 1
    best_obj = math.inf
    for m in range(1, max_segments + 1):
        obj = cost[m, t_total] + penalty_coeff * m * (math.log(t_total / m) + 1.0)
        if obj < best_obj:
            best_obj = obj
            best_m = m

    bounds: list[int] = []
    t = t_total
    for m in range(best_m, 1, -1):
        t = int(back[m, t])
        bounds.append(t)
    bounds.reverse()
    return bounds


def segment_penalty(t_total: int, m: int, penalty_coeff: float) -> float:
    return penalty_coeff * m * (math.log(t_total / m) + 1.0)


@dataclass(frozen=True)
class ScenePlan:
    """Scene spans in seconds tiling [0, duration], with one representative
    frame-sampling time per span (at 90% of the span)."""

    change_points: tuple[int, ...]
    spans_s: tuple[tuple[float, float], ...]
    sample_times_s: tuple[float, ...]
    fps: float
    n_frames: int

    def __post_init__(self):
        if len(self.spans_s) != len(self.change_points) + 1:
            raise PreconditionError("span count must be change point count + 1")
        if len(self.sample_times_s) != len(self.spans_s):
            raise PreconditionError("one sample time per span required")

    @property
    def n_scenes(self) -> int:
        return len(self.spans_s)

    def to_dict(self) -> dict:
        return {
            "change_points": list(self.change_points),
            "spans_s": [list(span) for span in self.spans_s],
            "sample_times_s": list(self.sample_times_s),
            "fps": self.fps,
            "n_frames": self.n_frames,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenePlan":
        return cls(
            change_points=tuple(int(c) for c in data["change_points"]),
            spans_s=tuple((float(a), float(b)) for a, b in data["spans_s"]),
            sample_times_s=tuple(float(x) for x in data["sample_times_s"]),
            fps=float(data["fps"]),
            n_frames=int(data["n_frames"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def sample_frame_times(spans: list[tuple[float, float]]) -> list[float]:
    """Representative timestamp per span: 90% of the way through it (the
    slide is complete by then even with build-up animations)."""
    out = []
    for a, b in spans:
        if b < a:
            raise PreconditionError(f"span ({a}, {b}) is reversed")
        out.append(a if b == a else a + 0.9 * (b - a))
    return out


def build_plan(
    features: FeatureMatrix,
    max_segments: int,
    penalty_coeff: float = 1.0,
    stride: int = 1,
) -> ScenePlan:
    """Full policy: optional frame striding, kernel build, DP segmentation,
    span derivation in original seconds, and sample-time selection."""
    strided = features.strided(stride) if stride > 1 else features
    max_segments = min(max_segments, strided.n_frames)
    kernel = build_kernel(strided)
    cuts = segment(kernel, max_segments, penalty_coeff)
    original_cuts = [c * stride for c in cuts]

    edges = [0.0] + [c / features.fps for c in original_cuts] + [features.duration_s]
    spans = tuple((edges[i], edges[i + 1]) for i in range(len(edges) - 1))
    return ScenePlan(
        change_points=tuple(original_cuts),
        spans_s=spans,
        sample_times_s=tuple(sample_frame_times(list(spans))),
        fps=features.fps,
        n_frames=features.n_frames,
    )
