"""Synthetic study protocol: calibration anchors followed by randomized fixations."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .fmcw import FrameConfig


@dataclass(frozen=True)
class ScreenGeometry:
    width_px: int = 1920
    height_px: int = 1080
    px_size_cm: float = 0.031
    eye_distance_cm: float = 60.0

    def __post_init__(self):
        if min(self.width_px, self.height_px) <= 0 or self.px_size_cm <= 0 \
                or self.eye_distance_cm <= 0:
            raise ConfigError("screen geometry values must be positive")

    @property
    def center_px(self) -> tuple[float, float]:
        return self.width_px / 2, self.height_px / 2

    def normalized(self, xy) -> np.ndarray:
        """Pixel coordinates mapped to [-1, 1] on both axes."""
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([2 * xy[..., 0] / self.width_px - 1,
                         2 * xy[..., 1] / self.height_px - 1], axis=-1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class ProtocolSpec:
    n_regions: int = 100
    dwell_min_s: float = 0.5
    dwell_max_s: float = 3.5
    dwell_mean_s: float = 2.0
    calib_duration_s: float = 15.0
    sessions: int = 12

    def __post_init__(self):
        side = math.isqrt(self.n_regions) if self.n_regions > 0 else 0
        if side * side != self.n_regions or side == 0:
            raise ConfigError("n_regions must be a positive perfect square")
        if not self.dwell_min_s < self.dwell_mean_s < self.dwell_max_s:
            raise ConfigError("need dwell_min < dwell_mean < dwell_max")
        if self.dwell_min_s <= 0 or self.calib_duration_s <= 0 or self.sessions < 1:
            raise ConfigError("durations and session count must be positive")
        if not self.dwell_min_s <= self.dwell_mode_s <= self.dwell_max_s:
            raise ConfigError("dwell mean is not reachable by a triangular law on this range")

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.n_regions)

    @property
    def dwell_mode_s(self) -> float:
        # triangular mean = (min + mode + max) / 3
        return 3 * self.dwell_mean_s - self.dwell_min_s - self.dwell_max_s

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Fixation:
    region: int          # -1 for calibration anchors
    x_px: float
    y_px: float
    start_frame: int
    end_frame: int       # exclusive
    segment: str


@dataclass
class GazeTrace:
    """Frame-indexed gaze labels; frame i covers time ``i / fps``."""

    x_px: np.ndarray
    y_px: np.ndarray
    segment: np.ndarray                  # "calib" or "main" per frame
    fixations: list = field(default_factory=list)

    def __len__(self):
        return self.x_px.size

    @property
    def frame_index(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def xy(self) -> np.ndarray:
        return np.stack([self.x_px, self.y_px], axis=1)

    def mask(self, segment: str) -> np.ndarray:
        return self.segment == segment


def sample_dwells(proto: ProtocolSpec, n: int, rng) -> np.ndarray:
    """Fixation durations from the symmetric-by-default triangular law."""
    return rng.triangular(proto.dwell_min_s, proto.dwell_mode_s, proto.dwell_max_s, size=n)


def calibration_anchors(geom: ScreenGeometry, inset: float = 0.05) -> np.ndarray:
    """Four corners (inset by a fraction of the screen) then the centre."""
    x0, x1 = inset * geom.width_px, (1 - inset) * geom.width_px
    y0, y1 = inset * geom.height_px, (1 - inset) * geom.height_px
    cx, cy = geom.center_px
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [cx, cy]])


def region_bounds(geom: ScreenGeometry, proto: ProtocolSpec, region: int):
    side = proto.grid_side
    row, col = divmod(region, side)
    w, h = geom.width_px / side, geom.height_px / side
    return col * w, row * h, (col + 1) * w, (row + 1) * h


def generate_session_trace(geom: ScreenGeometry, proto: ProtocolSpec, seed,
                           cfg: FrameConfig | None = None) -> GazeTrace:
    """Calibration segment followed by every region once in random order.

    Labels jump instantly between fixations; frames before a jump keep the
    previous label.
    """
    cfg = cfg or FrameConfig()
    rng = np.random.default_rng(seed)
    fps = cfg.frames_per_second

    fixations = []
    anchors = calibration_anchors(geom)
    n_calib = int(round(proto.calib_duration_s * fps))
    bounds = np.round(np.linspace(0, n_calib, len(anchors) + 1)).astype(int)
    for (ax, ay), s, e in zip(anchors, bounds[:-1], bounds[1:]):
        fixations.append(Fixation(-1, float(ax), float(ay), int(s), int(e), "calib"))

    order = rng.permutation(proto.n_regions)
    dwells = sample_dwells(proto, proto.n_regions, rng)
    ends = n_calib + np.round(np.cumsum(dwells) * fps).astype(int)
    start = n_calib
    for region, end in zip(order, ends):
        x0, y0, x1, y1 = region_bounds(geom, proto, int(region))
        # uniform point inside the region, strictly on screen
        x = min(rng.uniform(x0, x1), geom.width_px - 1e-6)
        y = min(rng.uniform(y0, y1), geom.height_px - 1e-6)
        fixations.append(Fixation(int(region), float(x), float(y), int(start), int(end), "main"))
        start = int(end)

    n_frames = fixations[-1].end_frame
    x = np.empty(n_frames)
    y = np.empty(n_frames)
    seg = np.empty(n_frames, dtype=object)
    for f in fixations:
        x[f.start_frame:f.end_frame] = f.x_px
        y[f.start_frame:f.end_frame] = f.y_px
        seg[f.start_frame:f.end_frame] = f.segment
    return GazeTrace(x, y, seg.astype(str), fixations)


def session_seeds(seed: int, n_sessions: int) -> list[np.random.SeedSequence]:
    """Independent per-session seed streams derived from one top-level seed."""
    return np.random.SeedSequence(seed).spawn(n_sessions)


def px_to_cm(geom: ScreenGeometry, p) -> np.ndarray:
    """On-screen position in cm from the screen centre; x grows right, y grows down."""
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    if np.any((x < 0) | (x >= geom.width_px) | (y < 0) | (y >= geom.height_px)):
        raise ContractError("point lies outside the screen")
    cx, cy = geom.center_px
    return np.stack([(x - cx) * geom.px_size_cm, (y - cy) * geom.px_size_cm], axis=-1)
