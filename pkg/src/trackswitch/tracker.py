"""Online tracking: a Kalman tracklet pool under two association engines.

The fused engine scores tracklet/detection pairs by a convex mix of squared
Mahalanobis distance and embedding cosine distance, with a chi-square gate.
The two-stage engine matches on box overlap only: confident detections first,
then leftovers against the remaining tracklets.

Association is split into predict / associate / commit so callers can score
candidate detection sets against one predicted pool state without copying it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .appearance import AppearanceState, cosine_distance, ema_update
from .geometry import BoxTLBR, iou_matrix, tlbr_to_xyah, xyah_to_tlbr
from .motion import GATE_CHI2_95_4DOF, KalmanFilter, KalmanParams, MotionState
from .world import DecodedDetection, decode, label_detections

INFEASIBLE = 1e9  # finite stand-in for +inf inside the assignment solver


class TrackStatus(Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class AssociationConfig:
    mode: str = "fused"  # "fused" | "byte"
    motion_weight: float = 0.5      # fused: weight on squared Mahalanobis
    match_threshold: float = 0.8    # fused: reject costs strictly above
    gate_chi2: float = GATE_CHI2_95_4DOF
    ema_alpha: float = 0.9
    high_score: float = 0.6         # byte: first-stage confidence floor
    low_score: float = 0.1          # byte: second-stage confidence floor
    iou_reject: float = 0.5         # byte: reject 1-IoU costs strictly above
    max_lost_age: int = 30
    kalman: KalmanParams = field(default_factory=KalmanParams)

    def __post_init__(self) -> None:
        if self.mode not in ("fused", "byte"):
            raise ValueError(f"unknown association mode {self.mode!r}")
        if not 0.0 <= self.motion_weight <= 1.0:
            raise ValueError("motion_weight must lie in [0, 1]")
        if not 0.0 <= self.low_score <= self.high_score <= 1.0:
            raise ValueError("need 0 <= low_score <= high_score <= 1")
        if self.max_lost_age < 0:
            raise ValueError("max_lost_age must be non-negative")

    @property
    def uses_features(self) -> bool:
        return self.mode == "fused"


@dataclass
class Tracklet:
    track_id: int
    motion: MotionState
    appearance: AppearanceState | None
    status: TrackStatus
    start_frame: int
    last_frame: int
    frames_since_update: int = 0
    hits: int = 1

    def predicted_box(self) -> BoxTLBR:
        return xyah_to_tlbr(self.motion.xyah())

    def age(self, frame: int) -> int:
        return frame - self.start_frame + 1

    def copy(self) -> "Tracklet":
        return Tracklet(
            track_id=self.track_id,
            motion=self.motion.copy(),
            appearance=None if self.appearance is None else self.appearance.copy(),
            status=self.status,
            start_frame=self.start_frame,
            last_frame=self.last_frame,
            frames_since_update=self.frames_since_update,
            hits=self.hits,
        )


@dataclass
class AssocReport:
    """Pure association outcome; indices refer to the pool and det lists."""

    pairs: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_dets: list[int]
    spawn_dets: list[int]


@dataclass
class Assignment:
    track_id: int
    box: BoxTLBR
    score: float
    det_index: int
    gt_agent: int | None = None


@dataclass
class FrameRecord:
    frame: int
    assignments: list[Assignment]

    def by_track(self) -> dict[int, Assignment]:
        return {a.track_id: a for a in self.assignments}


@dataclass
class TrackHistory:
    frames: list[FrameRecord] = field(default_factory=list)

    def record(self, frame: int, assignments: list[Assignment]) -> None:
        self.frames.append(FrameRecord(frame=frame, assignments=assignments))

    def track_frames(self, track_id: int) -> dict[int, Assignment]:
        out: dict[int, Assignment] = {}
        for rec in self.frames:
            for a in rec.assignments:
                if a.track_id == track_id:
                    out[rec.frame] = a
        return out

    def id_spans(self) -> dict[int, tuple[int, int]]:
        spans: dict[int, tuple[int, int]] = {}
        for rec in self.frames:
            for a in rec.assignments:
                first, _ = spans.get(a.track_id, (rec.frame, rec.frame))
                spans[a.track_id] = (first, rec.frame)
        return spans

    def mot_lines(self) -> list[str]:
        lines = []
        for rec in self.frames:
            for a in rec.assignments:
                b = a.box
                lines.append(
                    f"{rec.frame},{a.track_id},{b.x1:.2f},{b.y1:.2f},"
                    f"{b.x2 - b.x1:.2f},{b.y2 - b.y1:.2f},{a.score:.3f},-1,-1,-1"
                )
        return lines


def hungarian(cost: np.ndarray, reject_above: float) -> tuple[
    list[tuple[int, int]], list[int], list[int]
]:
    """Minimum-cost assignment with per-pair rejection.

    Entries above reject_above (or non-finite) are infeasible; solver output
    pairs that land on them are discarded.
    """
    n, m = cost.shape
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    safe = np.where(np.isfinite(cost) & (cost <= reject_above), cost, INFEASIBLE)
    rows, cols = linear_sum_assignment(safe)
    pairs = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        if safe[r, c] < INFEASIBLE:
            pairs.append((r, c))
    matched_r = {r for r, _ in pairs}
    matched_c = {c for _, c in pairs}
    return (
        pairs,
        [i for i in range(n) if i not in matched_r],
        [j for j in range(m) if j not in matched_c],
    )


class Tracker:
    """Tracklet pool state machine. Frames are 1-based; ids start at 1."""

    def __init__(self, config: AssociationConfig | None = None):
        self.config = config or AssociationConfig()
        self.kf = KalmanFilter(self.config.kalman)
        self.tracklets: list[Tracklet] = []
        self.next_id = 1
        self.frame = 0

    def copy(self) -> "Tracker":
        other = Tracker(self.config)
        other.tracklets = [t.copy() for t in self.tracklets]
        other.next_id = self.next_id
        other.frame = self.frame
        return other

    def get(self, track_id: int) -> Tracklet | None:
        for t in self.tracklets:
            if t.track_id == track_id:
                return t
        return None

    # -- stage 1: motion extrapolation --------------------------------------

    def predict(self) -> None:
        """Advance every live tracklet one frame. Call exactly once per frame."""
        for t in self.tracklets:
            t.motion = self.kf.predict(t.motion)

    # -- stage 2: pure association -------------------------------------------

    def associate(self, dets: list[DecodedDetection]) -> AssocReport:
        if self.config.mode == "fused":
            return self._associate_fused(dets)
        return self._associate_byte(dets)

    def _associate_fused(self, dets: list[DecodedDetection]) -> AssocReport:
        cfg = self.config
        n, m = len(self.tracklets), len(dets)
        if m:
            for d in dets:
                if d.feature is None:
                    raise ValueError("fused association requires detection features")
        if n == 0 or m == 0:
            return AssocReport([], list(range(n)), list(range(m)), list(range(m)))
        xyah = np.array(
            [[*_det_xyah(d)] for d in dets]
        )
        feats = np.stack([d.feature for d in dets])
        cost = np.zeros((n, m))
        for i, t in enumerate(self.tracklets):
            if t.appearance is None:
                raise ValueError(f"tracklet {t.track_id} carries no embedding")
            d2 = self.kf.mahalanobis_many(t.motion, xyah)
            d_feat = 1.0 - feats @ t.appearance.smoothed
            row = cfg.motion_weight * d2 + (1.0 - cfg.motion_weight) * d_feat
            row[d2 > cfg.gate_chi2] = np.inf
            cost[i] = row
        pairs, un_t, un_d = hungarian(cost, cfg.match_threshold)
        return AssocReport(pairs, un_t, un_d, list(un_d))

    def _associate_byte(self, dets: list[DecodedDetection]) -> AssocReport:
        cfg = self.config
        n = len(self.tracklets)
        high = [j for j, d in enumerate(dets) if d.score >= cfg.high_score]
        low = [
            j for j, d in enumerate(dets) if cfg.low_score <= d.score < cfg.high_score
        ]
        track_boxes = np.array(
            [t.predicted_box().as_array() for t in self.tracklets]
        ).reshape(n, 4)

        def stage(track_idx: list[int], det_idx: list[int]):
            if not track_idx or not det_idx:
                return [], list(track_idx), list(det_idx)
            det_boxes = np.array([dets[j].box.as_array() for j in det_idx])
            cost = 1.0 - iou_matrix(track_boxes[track_idx], det_boxes)
            pairs, un_t, un_d = hungarian(cost, cfg.iou_reject)
            return (
                [(track_idx[r], det_idx[c]) for r, c in pairs],
                [track_idx[r] for r in un_t],
                [det_idx[c] for c in un_d],
            )

        pairs1, un_t1, un_high = stage(list(range(n)), high)
        pairs2, un_t2, un_low = stage(un_t1, low)
        pairs = pairs1 + pairs2
        unmatched_dets = sorted(un_high + un_low)
        return AssocReport(pairs, un_t2, unmatched_dets, sorted(un_high))

    # -- stage 3: state commitment --------------------------------------------

    def commit(
        self,
        dets: list[DecodedDetection],
        report: AssocReport,
        frame: int,
        gt_labels: list[int | None] | None = None,
    ) -> list[Assignment]:
        cfg = self.config
        assignments: list[Assignment] = []
        for i, j in report.pairs:
            t = self.tracklets[i]
            det = dets[j]
            t.motion = self.kf.update(t.motion, tlbr_to_xyah(det.box))
            if t.appearance is not None and det.feature is not None:
                t.appearance = ema_update(t.appearance, det.feature)
            t.status = TrackStatus.ACTIVE
            t.frames_since_update = 0
            t.hits += 1
            t.last_frame = frame
            assignments.append(
                Assignment(
                    track_id=t.track_id,
                    box=det.box,
                    score=det.score,
                    det_index=j,
                    gt_agent=None if gt_labels is None else gt_labels[j],
                )
            )
        for i in report.unmatched_tracks:
            t = self.tracklets[i]
            t.frames_since_update += 1
            if t.frames_since_update > cfg.max_lost_age:
                t.status = TrackStatus.REMOVED
            else:
                t.status = TrackStatus.LOST
        for j in report.spawn_dets:
            det = dets[j]
            appearance = None
            if cfg.uses_features:
                if det.feature is None:
                    raise ValueError("fused association requires detection features")
                appearance = AppearanceState(
                    smoothed=det.feature.copy(), alpha=cfg.ema_alpha
                )
            self.tracklets.append(
                Tracklet(
                    track_id=self.next_id,
                    motion=self.kf.init(tlbr_to_xyah(det.box)),
                    appearance=appearance,
                    status=TrackStatus.ACTIVE,
                    start_frame=frame,
                    last_frame=frame,
                )
            )
            assignments.append(
                Assignment(
                    track_id=self.next_id,
                    box=det.box,
                    score=det.score,
                    det_index=j,
                    gt_agent=None if gt_labels is None else gt_labels[j],
                )
            )
            self.next_id += 1
        self.tracklets = [t for t in self.tracklets if t.status != TrackStatus.REMOVED]
        self.frame = frame
        return assignments

    def step(
        self,
        dets: list[DecodedDetection],
        frame: int | None = None,
        gt_labels: list[int | None] | None = None,
    ) -> list[Assignment]:
        frame = self.frame + 1 if frame is None else frame
        self.predict()
        report = self.associate(dets)
        return self.commit(dets, report, frame, gt_labels)


def _det_xyah(det: DecodedDetection) -> tuple[float, float, float, float]:
    x = tlbr_to_xyah(det.box)
    return (x.cx, x.cy, x.a, x.h)


def run_video(
    provider,
    config: AssociationConfig | None = None,
    det_threshold: float | None = None,
    label_truth: bool = True,
) -> TrackHistory:
    """Track a full clip from a scenario or replay provider."""
    from .world import DET_THRESHOLD

    tracker = Tracker(config)
    threshold = DET_THRESHOLD if det_threshold is None else det_threshold
    history = TrackHistory()
    for t in range(1, provider.n_frames + 1):
        maps = provider.render(t, with_features=tracker.config.uses_features)
        dets = decode(maps, threshold, with_features=tracker.config.uses_features)
        labels = None
        if label_truth:
            labels = label_detections(dets, provider.frame_truth(t))
        assignments = tracker.step(dets, frame=t, gt_labels=labels)
        history.record(t, assignments)
    return history
