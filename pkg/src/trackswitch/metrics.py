"""Attack evaluation: target eligibility, success judging, and aggregation.

A tracked identity is worth attacking only if it persists long enough to
matter and actually meets another identity; a finished attack is judged by
whether the tracker re-acquires the true object once the noise stops.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from statistics import mean

from .geometry import iou
from .tracker import TrackHistory


@dataclass
class AttackOutcome:
    scenario: str
    seed: int
    tracker_mode: str
    method: str
    track_id: int
    agent_id: int
    attacked: bool            # noise was applied on at least one frame
    success: bool
    held_to_end: bool
    attacked_frames: int
    l2_total: float
    l2_mean: float
    judge_from: int           # last frame with applied noise (0 if none)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackOutcome":
        return cls(**d)


@dataclass
class AggregateStats:
    n: int
    n_attacked: int
    n_success: int
    success_rate: float
    mean_attacked_frames: float | None  # over successful attacks
    mean_l2: float | None               # over successful attacks

    def to_dict(self) -> dict:
        return asdict(self)


def track_agent(history: TrackHistory, track_id: int) -> int | None:
    """Majority ground-truth agent behind a track id (None if unlabeled)."""
    counts: dict[int, int] = {}
    for rec in history.frames:
        for a in rec.assignments:
            if a.track_id == track_id and a.gt_agent is not None:
                counts[a.gt_agent] = counts.get(a.gt_agent, 0) + 1
    if not counts:
        return None
    best = max(counts.values())
    return min(k for k, v in counts.items() if v == best)


def persistence(history: TrackHistory) -> dict[int, int]:
    """Frames-with-assignment count per track id."""
    counts: dict[int, int] = {}
    for rec in history.frames:
        for a in rec.assignments:
            counts[a.track_id] = counts.get(a.track_id, 0) + 1
    return counts


def ever_overlapping(history: TrackHistory, thr_iou: float) -> set[int]:
    """Track ids whose box exceeds thr_iou overlap with another tracked box
    on at least one frame."""
    hits: set[int] = set()
    for rec in history.frames:
        boxes = [(a.track_id, a.box) for a in rec.assignments]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if iou(boxes[i][1], boxes[j][1]) > thr_iou:
                    hits.add(boxes[i][0])
                    hits.add(boxes[j][0])
    return hits


def attackable_ids(
    history: TrackHistory, thr_frame: int = 10, thr_iou: float = 0.2
) -> list[int]:
    """Ids tracked for more than thr_frame frames that meet someone (> thr_iou)
    and map to a known ground-truth agent."""
    persist = persistence(history)
    overlap = ever_overlapping(history, thr_iou)
    out = []
    for tid, n in persist.items():
        if n > thr_frame and tid in overlap and track_agent(history, tid) is not None:
            out.append(tid)
    return sorted(out)


def attackable_proportion(
    history: TrackHistory, thr_frame: int = 10, thr_iou: float = 0.2
) -> float:
    """Share of all tracked ids that qualify as attack targets."""
    persist = persistence(history)
    if not persist:
        return 0.0
    return len(attackable_ids(history, thr_frame, thr_iou)) / len(persist)


def attackable_proportion_curve(
    history: TrackHistory,
    thr_ious: list[float],
    thr_frame: int = 10,
) -> list[float]:
    return [attackable_proportion(history, thr_frame, t) for t in thr_ious]


def judge_success(
    adv_history: TrackHistory,
    clean_history: TrackHistory,
    track_id: int,
    agent_id: int,
    judge_from: int,
) -> tuple[bool, bool]:
    """(success, held_to_end) for a finished attack.

    Success: after the last attacked frame the victim id is never again
    assigned a detection of its true agent, on a window where the clean run
    demonstrably still tracks that agent under the same id. Frames the clean
    run itself fails to match carry no evidence, and a window with no
    evidence at all judges False: an attack that burns its budget until the
    object leaves the scene has shown nothing the clean run would not also
    have done. Held-to-end additionally requires the id to be actively
    tracking some other object on the final frame.
    """
    evidence = any(
        a.track_id == track_id and a.gt_agent == agent_id
        for rec in clean_history.frames
        if rec.frame > judge_from
        for a in rec.assignments
    )
    success = evidence
    last_frame = adv_history.frames[-1].frame if adv_history.frames else judge_from
    final_assignment = None
    for rec in adv_history.frames:
        if rec.frame <= judge_from:
            continue
        for a in rec.assignments:
            if a.track_id != track_id:
                continue
            if a.gt_agent == agent_id:
                success = False
            if rec.frame == last_frame:
                final_assignment = a
    held = (
        success
        and final_assignment is not None
        and final_assignment.gt_agent is not None
        and final_assignment.gt_agent != agent_id
    )
    return success, held


def aggregate(outcomes: list[AttackOutcome]) -> AggregateStats:
    judged = [o for o in outcomes if o.error is None]
    successes = [o for o in judged if o.success]
    return AggregateStats(
        n=len(judged),
        n_attacked=sum(1 for o in judged if o.attacked),
        n_success=len(successes),
        success_rate=(len(successes) / len(judged)) if judged else 0.0,
        mean_attacked_frames=(
            mean(o.attacked_frames for o in successes) if successes else None
        ),
        mean_l2=(mean(o.l2_total for o in successes) if successes else None),
    )


def success_rate_within(outcomes: list[AttackOutcome], fm_cap: int) -> float:
    """Success rate counting only wins that needed at most fm_cap attacked frames."""
    judged = [o for o in outcomes if o.error is None]
    if not judged:
        return 0.0
    wins = [o for o in judged if o.success and o.attacked_frames <= fm_cap]
    return len(wins) / len(judged)


@dataclass
class SuiteReport:
    """One tracker x attacker row of a results table."""

    tracker_mode: str
    method: str
    suite: str
    stats: AggregateStats
    fm_caps: dict[int, float]
    attackable_proportions: dict[str, float]

    @staticmethod
    def csv_header(caps: list[int]) -> list[str]:
        return (
            ["tracker", "attacker", "suite", "n", "succ", "mean_fm", "mean_l2"]
            + [f"succ@{c}" for c in caps]
        )

    def to_csv_row(self, caps: list[int]) -> list[str]:
        s = self.stats
        return [
            self.tracker_mode,
            self.method,
            self.suite,
            str(s.n),
            f"{s.success_rate:.4f}",
            "" if s.mean_attacked_frames is None else f"{s.mean_attacked_frames:.2f}",
            "" if s.mean_l2 is None else f"{s.mean_l2:.2f}",
        ] + [f"{self.fm_caps.get(c, 0.0):.4f}" for c in caps]

    def to_dict(self) -> dict:
        return {
            "tracker_mode": self.tracker_mode,
            "method": self.method,
            "suite": self.suite,
            "stats": self.stats.to_dict(),
            "fm_caps": {str(k): v for k, v in self.fm_caps.items()},
            "attackable_proportions": self.attackable_proportions,
        }


def build_suite_report(
    tracker_mode: str,
    method: str,
    suite: str,
    outcomes: list[AttackOutcome],
    caps: list[int],
    attackable_proportions: dict[str, float] | None = None,
) -> SuiteReport:
    return SuiteReport(
        tracker_mode=tracker_mode,
        method=method,
        suite=suite,
        stats=aggregate(outcomes),
        fm_caps={c: success_rate_within(outcomes, c) for c in caps},
        attackable_proportions=attackable_proportions or {},
    )
