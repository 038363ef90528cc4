"""Identity-switch attacks against the tracking pipeline.

The main attack perturbs detector grids so two overlapping tracklets swap
objects: feature cells around both centers are pushed toward the opposite
identity (push-pull), fake peaks are heated along a cell path leaping from
each tracklet's predicted center onto the other object (center-leap), real
peaks are cooled, and size/offset cells are regressed toward the opposing
tracklet's prediction. Gradients are derived by hand; each inner-loop step
moves the perturbation one unit of joint L2 norm against the gradient.

Baselines share the same outer gates: random grid noise (ranat), detection
suppression (detat), and a detour rail that drags the target off its path
(hijack).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoxTLBR,
    box_from_center,
    center,
    iou,
    smooth_l1,
    smooth_l1_grad,
    to_grid,
)
from .metrics import judge_success, track_agent
from .tracker import AssocReport, AssociationConfig, Assignment, Tracker, TrackHistory
from .world import (
    NINE_BLOCK,
    DecodedDetection,
    Perturbation,
    SensorMaps,
    decode,
    label_detections,
    pert_l2,
)

ATTACK_METHODS = ("trasw", "ranat", "detat", "hijack")


@dataclass
class AttackConfig:
    method: str = "trasw"
    thr_iou: float = 0.2          # minimum target/screener overlap to open fire
    thr_frame: int = 10           # minimum target age before attacking
    thr_iter: int = 60            # inner-loop step budget per frame
    max_frames: int = 20          # total frames that may carry noise
    gamma: float = 2.0            # focal exponent for heating/cooling
    eps: float = 1e-6             # log clamp for the focal terms
    schedule: tuple[int, ...] = (10, 20, 30, 35, 40, 45, 50, 55)
    use_pp: bool = True           # feature push-pull term
    use_cl: bool = True           # center-leap heating/cooling + size/offset term
    use_fn: bool = True           # keep noise from failed frames
    rand_l2_low: float = 2.0      # ranat per-frame noise norm range
    rand_l2_high: float = 8.0
    hijack_step_cells: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in ATTACK_METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if min(self.thr_iou, self.gamma) < 0 or min(self.thr_frame, self.thr_iter) < 0:
            raise ValueError("attack thresholds must be non-negative")
        if self.max_frames < 0:
            raise ValueError("max_frames must be non-negative")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValueError("leap schedule must be strictly increasing")
        if not 0 < self.rand_l2_low <= self.rand_l2_high:
            raise ValueError("random-noise norm range must be positive and ordered")


# --- loss pieces -------------------------------------------------------------


def pushpull_loss(
    a_i: np.ndarray, a_j: np.ndarray, f_i: np.ndarray, f_j: np.ndarray
) -> float:
    """Cost that falls as each detection's feature migrates to the other
    tracklet's identity. All inputs unit-norm. Equals (a_i-a_j)@(f_i-f_j)."""
    d = a_i - a_j
    return float(d @ f_i - d @ f_j)


def pushpull_grad_f(
    a_i: np.ndarray, a_j: np.ndarray, side_i: bool
) -> np.ndarray:
    """d pushpull / d f for one side (before normalization backprop)."""
    d = a_i - a_j
    return d if side_i else -d


def heating_term(m: float, gamma: float) -> float:
    return -((1.0 - m) ** gamma) * math.log(m)


def heating_term_grad(m: float, gamma: float) -> float:
    return gamma * (1.0 - m) ** (gamma - 1.0) * math.log(m) - ((1.0 - m) ** gamma) / m


def cooling_term(m: float, gamma: float) -> float:
    return -(m ** gamma) * math.log(1.0 - m)


def cooling_term_grad(m: float, gamma: float) -> float:
    return -gamma * m ** (gamma - 1.0) * math.log(1.0 - m) + (m ** gamma) / (1.0 - m)


@dataclass
class LeapState:
    """A heated fake-peak cell walking toward a target cell.

    Advances one 8-connected cell (sign step per axis) whenever the iteration
    counter hits a schedule value, and never moves past the target.
    """

    cell: tuple[int, int]
    target: tuple[int, int]

    def arrived(self) -> bool:
        return self.cell == self.target


def advance_leap(state: LeapState, iteration: int, schedule: tuple[int, ...]) -> LeapState:
    if iteration not in schedule or state.arrived():
        return state
    sx = (state.target[0] > state.cell[0]) - (state.target[0] < state.cell[0])
    sy = (state.target[1] > state.cell[1]) - (state.target[1] < state.cell[1])
    return LeapState((state.cell[0] + sx, state.cell[1] + sy), state.target)


@dataclass
class PPTerm:
    """Feature swap pressure between two cells.

    Centers may be fixed cells or references into the objective's leap list
    (leap_i/leap_j), in which case the term follows the fake peaks as they
    advance and keeps dressing the features the victims actually read.
    """

    a_i: np.ndarray
    a_j: np.ndarray
    center_i: tuple[int, int] | None = None
    center_j: tuple[int, int] | None = None
    leap_i: int | None = None
    leap_j: int | None = None


@dataclass
class RegTerm:
    """Box targets applied over the nine-block of a leap's current cell.

    pcx/pcy hold the intended continuous center in grid units; each cell's
    offset target is the residual against that center, so the decoded box
    lands at the same place no matter which cell hosts the peak.
    """

    leap_index: int
    width: float
    height: float
    pcx: float
    pcy: float

    def off_targets(self, x: int, y: int) -> tuple[float, float]:
        return self.pcx - x, self.pcy - y


@dataclass
class Objective:
    """One frame's loss structure; leap cells move during the inner loop.

    Cooling yields to heating where they collide: cells inside a live leap's
    nine-block are shielded from the cooling sum, so a daubed center survives
    while a fake peak sits on or next to it and the loss never erases the
    detection it is dressing. A cell a leap vacates joins the cooling set so
    the trail leaves no stray peaks behind.
    """

    pp: list[PPTerm] = field(default_factory=list)
    heats: list[LeapState] = field(default_factory=list)
    cools: list[tuple[int, int]] = field(default_factory=list)
    regs: list[RegTerm] = field(default_factory=list)

    def advance(self, iteration: int, schedule: tuple[int, ...]) -> None:
        moved = [advance_leap(s, iteration, schedule) for s in self.heats]
        for before, after in zip(self.heats, moved):
            if after.cell != before.cell and before.cell not in self.cools:
                self.cools.append(before.cell)
        self.heats = moved

    def cool_shield(self) -> set[tuple[int, int]]:
        out: set[tuple[int, int]] = set()
        for leap in self.heats:
            cx, cy = leap.cell
            for dx, dy in NINE_BLOCK:
                out.add((cx + dx, cy + dy))
        return out

    def pp_cells(self, term: PPTerm):
        ci = self.heats[term.leap_i].cell if term.leap_i is not None else term.center_i
        cj = self.heats[term.leap_j].cell if term.leap_j is not None else term.center_j
        return ci, cj


def _nine_cells(cell: tuple[int, int], gw: int, gh: int):
    for dx, dy in NINE_BLOCK:
        x, y = cell[0] + dx, cell[1] + dy
        if 0 <= x < gw and 0 <= y < gh:
            yield x, y


def pp_nineblock(
    a_i: np.ndarray,
    a_j: np.ndarray,
    featmap: np.ndarray,
    center_i: tuple[int, int] | None,
    center_j: tuple[int, int] | None,
) -> float:
    """Push-pull summed over the nine-blocks of both centers.

    Features are unit-normalized at read; out-of-bounds or dead (zero-norm)
    cells drop only their own side's terms. A None center drops its whole
    side, leaving a one-sided pull toward (or push away from) the anchors.
    """
    gh, gw = featmap.shape[1], featmap.shape[2]
    total = 0.0
    d = a_i - a_j
    if center_i is not None:
        for x, y in _nine_cells(center_i, gw, gh):
            v = featmap[:, y, x]
            n = float(np.linalg.norm(v))
            if n < 1e-9:
                continue
            total += float(d @ v) / n
    if center_j is not None:
        for x, y in _nine_cells(center_j, gw, gh):
            v = featmap[:, y, x]
            n = float(np.linalg.norm(v))
            if n < 1e-9:
                continue
            total -= float(d @ v) / n
    return total


def _pp_soaked(maps: SensorMaps, pert: Perturbation, obj: Objective) -> bool:
    """True once any push-pull center cell has been dressed down to the
    own-identity cosine floor. The decoder hands the matcher the peak-cell
    feature, so this is exactly the quantity the assignment sees, and pushing
    past the floor risks unmatching that victim."""
    if not obj.pp:
        return False
    featmap = maps.feat + pert.d_feat
    gh, gw = featmap.shape[1], featmap.shape[2]
    for term in obj.pp:
        ci, cj = obj.pp_cells(term)
        for cell, own in ((ci, term.a_i), (cj, term.a_j)):
            # one-sided pulls have no away-identity to protect: a missing
            # cell or a zero anchor leaves nothing the brake could measure
            if cell is None or float(np.linalg.norm(own)) < 1e-9:
                continue
            x, y = cell
            if not (0 <= x < gw and 0 <= y < gh):
                return True
            v = featmap[:, y, x]
            n = float(np.linalg.norm(v))
            if n < 1e-9:
                return True
            if float(v @ own) / n <= PP_OWN_FLOOR:
                return True
    return False


def centerleap_loss(
    heat: np.ndarray,
    targets: list[LeapState],
    cools: list[tuple[int, int]],
    gamma: float,
    eps: float = 1e-6,
    shield: set[tuple[int, int]] | None = None,
) -> float:
    """Focal heating at each leap cell plus focal cooling over the nine-block
    of each real center. Heating stays on the single cell: raising a whole
    block to the score ceiling turns every cell into a tied local maximum and
    the decoder reads the slab as nine detections. Cells named in shield are
    exempt from cooling so a heated peak is never fought in place."""
    gh, gw = heat.shape
    total = 0.0
    for leap in targets:
        x, y = leap.cell
        if 0 <= x < gw and 0 <= y < gh:
            m = float(np.clip(heat[y, x], eps, 1.0 - eps))
            total += heating_term(m, gamma)
    for cell in cools:
        for x, y in _nine_cells(cell, gw, gh):
            if shield and (x, y) in shield:
                continue
            m = float(np.clip(heat[y, x], eps, 1.0 - eps))
            total += cooling_term(m, gamma)
    return total


def reg_loss(
    sizemap: np.ndarray,
    offmap: np.ndarray,
    regs: list[RegTerm],
    heats: list[LeapState],
) -> float:
    """Smooth-L1 pull of size/offset values toward each peak's intended box,
    at the leap's current cell. Only the peak cell is read at decode time, so
    the pull stays there and leaves neighboring objects' channels alone."""
    gh, gw = sizemap.shape[1], sizemap.shape[2]
    total = 0.0
    for reg in regs:
        x, y = heats[reg.leap_index].cell
        if not (0 <= x < gw and 0 <= y < gh):
            continue
        tx, ty = reg.off_targets(x, y)
        total += float(smooth_l1(sizemap[0, y, x], reg.width))
        total += float(smooth_l1(sizemap[1, y, x], reg.height))
        total += float(smooth_l1(offmap[0, y, x], tx))
        total += float(smooth_l1(offmap[1, y, x], ty))
    return total


def total_loss(
    maps: SensorMaps, pert: Perturbation, obj: Objective, cfg: AttackConfig
) -> float:
    """Full frame loss at the current perturbation; switched-off terms are 0."""
    total = 0.0
    if cfg.use_pp and obj.pp:
        featmap = maps.feat + pert.d_feat
        for term in obj.pp:
            ci, cj = obj.pp_cells(term)
            total += pp_nineblock(term.a_i, term.a_j, featmap, ci, cj)
    if cfg.use_cl:
        if obj.heats or obj.cools:
            heat = maps.heat + pert.d_heat
            total += centerleap_loss(
                heat, obj.heats, obj.cools, cfg.gamma, cfg.eps,
                shield=obj.cool_shield(),
            )
        if obj.regs:
            total += reg_loss(
                maps.size + pert.d_size, maps.off + pert.d_off, obj.regs, obj.heats
            )
    return total


def grad_total(
    maps: SensorMaps, pert: Perturbation, obj: Objective, cfg: AttackConfig
) -> Perturbation:
    """Hand-derived gradient of total_loss with respect to every perturbation
    entry. Heat clamping is treated as pass-through; normalization of feature
    reads is differentiated exactly; cells skipped by the loss contribute 0."""
    grad = Perturbation.zeros_like(maps)
    gh, gw = maps.heat.shape
    if cfg.use_pp and obj.pp:
        for term in obj.pp:
            d = term.a_i - term.a_j
            ci, cj = obj.pp_cells(term)
            for sign, cell in ((1.0, ci), (-1.0, cj)):
                if cell is None:
                    continue
                for x, y in _nine_cells(cell, gw, gh):
                    v = maps.feat[:, y, x] + pert.d_feat[:, y, x]
                    n = float(np.linalg.norm(v))
                    if n < 1e-9:
                        continue
                    f = v / n
                    g = sign * d
                    grad.d_feat[:, y, x] += (g - float(g @ f) * f) / n
    if cfg.use_cl:
        shield = obj.cool_shield()
        # the loss reads the clipped score, so outside the open clip interval
        # the chain rule through the clip is exactly zero: a cell already at
        # the ceiling or floor stops contributing instead of feeding the
        # normalized step a dead direction forever
        for leap in obj.heats:
            x, y = leap.cell
            if 0 <= x < gw and 0 <= y < gh:
                m = float(maps.heat[y, x] + pert.d_heat[y, x])
                if cfg.eps < m < 1.0 - cfg.eps:
                    grad.d_heat[y, x] += heating_term_grad(m, cfg.gamma)
        for cell in obj.cools:
            for x, y in _nine_cells(cell, gw, gh):
                if (x, y) in shield:
                    continue
                m = float(maps.heat[y, x] + pert.d_heat[y, x])
                if cfg.eps < m < 1.0 - cfg.eps:
                    grad.d_heat[y, x] += cooling_term_grad(m, cfg.gamma)
        for reg in obj.regs:
            x, y = obj.heats[reg.leap_index].cell
            if not (0 <= x < gw and 0 <= y < gh):
                continue
            tx, ty = reg.off_targets(x, y)
            grad.d_size[0, y, x] += smooth_l1_grad(
                maps.size[0, y, x] + pert.d_size[0, y, x], reg.width
            )
            grad.d_size[1, y, x] += smooth_l1_grad(
                maps.size[1, y, x] + pert.d_size[1, y, x], reg.height
            )
            grad.d_off[0, y, x] += smooth_l1_grad(
                maps.off[0, y, x] + pert.d_off[0, y, x], tx
            )
            grad.d_off[1, y, x] += smooth_l1_grad(
                maps.off[1, y, x] + pert.d_off[1, y, x], ty
            )
    return grad


def gradient_step(pert: Perturbation, grad: Perturbation) -> Perturbation:
    """pert - grad/||grad||: one unit of joint L2 motion. Zero gradient is a
    stall; the perturbation is returned unchanged."""
    n = pert_l2(grad)
    if n == 0.0:
        return pert.copy()
    out = pert.copy()
    for mine, g in zip(out.grids(), grad.grids()):
        mine -= g / n
    return out


# --- per-frame attack machinery ----------------------------------------------


class DegenerateRail(ValueError):
    """Hijack cannot move a target whose screener shows no motion."""


@dataclass
class FrameContext:
    maps: SensorMaps
    pred: Tracker                 # pool advanced to this frame, not yet updated
    id_att: int
    id_scr: int
    cell_att: tuple[int, int]     # attack object's center cell this frame
    cell_scr: tuple[int, int]     # screener object's center cell this frame
    orig_box_att: BoxTLBR         # clean tracker's box for the target
    # walk anchors: where each victim is being pulled to, taken from the
    # clean pool so the destination stays pinned to a physical object even
    # after the adversarial pool starts drifting. (cx, cy, vx, vy, w, h)
    dest_att: tuple[float, ...] | None = None
    dest_scr: tuple[float, ...] | None = None
    # the target already rides another clean tracklet's object: the swap has
    # happened and the remaining work is easing the new pairing in place
    flipped: bool = False


def _state_center_cell(tracker: Tracker, track_id: int, stride: int) -> tuple[int, int]:
    t = tracker.get(track_id)
    cx, cy = center(t.predicted_box())
    cell = to_grid(max(cx, 0.0), max(cy, 0.0), stride)
    return (cell.gx, cell.gy)


def _state_dest(tracker: Tracker, track_id: int) -> tuple[float, ...]:
    """Walk-anchor tuple (cx, cy, vx, vy, w, h) from a tracklet's state."""
    t = tracker.get(track_id)
    x = t.motion.xyah()
    return (
        x.cx,
        x.cy,
        float(t.motion.mean[4]),
        float(t.motion.mean[5]),
        x.a * x.h,
        x.h,
    )


# Farthest a fake detection may sit from its victim's prediction and still be
# matched: the fused matcher gates on squared Mahalanobis position error, the
# overlap matcher on IoU 0.5. Targets past the gate would break the match
# mid-loop and commit an unmatched frame, so the pull is applied as a rate.
# The rate holds after the cross too: the smoothed identity is still rotating
# toward the new object then, and the leftover feature distance eats the same
# slice of the match budget that the live dressing ate on the approach.
DRAG_EMBED_PX = 1.5
DRAG_IOU_PX = 4.5

# Residuals under which a follower's state is considered to have landed on
# the object it now rides: clean detections fall inside the matcher's gate on
# their own, so the dressing can stop. Height converges at half the position
# rate and its innovation shares the gate, so it gets its own allowance.
WEAN_POS_PX = 1.0
WEAN_SIZE_PX = 2.5

# The swap-pressure gradient is constant, so left running it pushes features
# past the other identity into anti-alignment and the victim stops matching
# its own detection. Pushing stops once a dressed feature's cosine to its
# own tracklet's current identity falls to this floor: deep enough that the
# committed frames keep rotating the smoothed identity toward the other
# object, high enough that the straight match survives the walk innovation.
PP_OWN_FLOOR = 0.5


def _walk_reg(
    idx: int,
    follower: Tracklet,
    dest: tuple[float, ...],
    stride: int,
    drag_px: float,
) -> RegTerm:
    """Box target for the detection tracklet `follower` rides: the destination
    object's box, its center projected to at most drag_px from the follower's
    own prediction and its width/height stepped at half that rate. The height
    innovation sits in the same gate as position, so a one-shot jump to the
    destination's size would break the match just like a long hop. Frame over
    frame the follower's state walks onto the destination and the dressing
    shrinks to nothing. Aiming at the object itself, never ahead of it, is
    what lets the pull die out instead of parking the follower offset from
    the box it is meant to ride."""
    fx = follower.motion.xyah()
    dcx, dcy, dvx, dvy, dw, dh = dest
    dx = dcx - fx.cx
    dy = dcy - fx.cy
    gap = math.hypot(dx, dy)
    if gap > drag_px > 0.0:
        s = drag_px / gap
        dx, dy = dx * s, dy * s
    fw, fh = fx.a * fx.h, fx.h
    rate = 0.5 * drag_px
    tw = fw + math.copysign(min(abs(dw - fw), rate), dw - fw)
    th = fh + math.copysign(min(abs(dh - fh), rate), dh - fh)
    return RegTerm(
        idx, tw, th, (fx.cx + dx) / stride, (fx.cy + dy) / stride
    )


def build_objective(ctx: FrameContext, cfg: AttackConfig) -> Objective:
    """Assemble the frame's loss terms for the configured method."""
    obj = Objective()
    stride = ctx.maps.stride
    gh, gw = ctx.maps.heat.shape
    if cfg.method == "trasw":
        t_att = ctx.pred.get(ctx.id_att)
        t_scr = ctx.pred.get(ctx.id_scr)
        if (
            cfg.use_pp
            and not ctx.flipped
            and t_att.appearance is not None
            and t_scr.appearance is not None
        ):
            obj.pp = [
                PPTerm(
                    a_i=t_att.appearance.smoothed,
                    a_j=t_scr.appearance.smoothed,
                    leap_i=0,
                    leap_j=1,
                )
            ]
        # the leaps sit on the victims' own detections: a discrete hop cannot
        # land inside the matcher's gate, so position is moved through the
        # offset channel instead, each detection dressed to creep from its
        # follower's prediction toward the object the other tracklet follows.
        # the two predictions meet in the middle while the real peaks are
        # still cells apart and the feature dressing is live, which is where
        # the assignment crosses; after the cross the same pull becomes an
        # easing rein on the newly ridden object, shrinking to nothing while
        # the motion state and smoothed identity catch up.
        drag = DRAG_EMBED_PX if ctx.pred.config.uses_features else DRAG_IOU_PX
        dest_att = ctx.dest_att or _state_dest(ctx.pred, ctx.id_scr)
        obj.cools = [ctx.cell_att]
        obj.heats = [LeapState(ctx.cell_att, ctx.cell_att)]
        obj.regs = [_walk_reg(0, t_att, dest_att, stride, drag)]
        if t_scr is not None:
            dest_scr = ctx.dest_scr or _state_dest(ctx.pred, ctx.id_att)
            obj.cools.append(ctx.cell_scr)
            obj.heats.append(LeapState(ctx.cell_scr, ctx.cell_scr))
            obj.regs.append(_walk_reg(1, t_scr, dest_scr, stride, drag))
    elif cfg.method == "detat":
        obj.cools = [ctx.cell_att]
    elif cfg.method == "hijack":
        obj.cools = [ctx.cell_att]
        v = ctx.pred.get(ctx.id_scr).motion.mean[4:6]
        speed = float(np.linalg.norm(v))
        if speed < 1e-6:
            raise DegenerateRail(
                "screener prediction is stationary; rail displacement is zero"
            )
        t_att = ctx.pred.get(ctx.id_att)
        x = t_att.motion.xyah()
        rail_x = x.cx + cfg.hijack_step_cells * stride * float(v[0]) / speed
        rail_y = x.cy + cfg.hijack_step_cells * stride * float(v[1]) / speed
        rail_x = float(np.clip(rail_x, 0.0, (gw - 1) * stride))
        rail_y = float(np.clip(rail_y, 0.0, (gh - 1) * stride))
        cell = to_grid(rail_x, rail_y, stride)
        rail = (cell.gx, cell.gy)
        obj.heats = [LeapState(rail, rail)]
        obj.regs = [RegTerm(0, x.a * x.h, x.h, rail_x / stride, rail_y / stride)]
    else:
        raise ValueError(f"no objective for method {cfg.method!r}")
    return obj


def association_mistake(
    pred: Tracker,
    report: AssocReport,
    dets: list[DecodedDetection],
    id_att: int,
    orig_box_att: BoxTLBR,
) -> bool:
    """True when the pool no longer tracks the target's object: the victim id
    is unmatched, or its matched box has drifted off the clean one."""
    idx = None
    for i, t in enumerate(pred.tracklets):
        if t.track_id == id_att:
            idx = i
            break
    if idx is None:
        return True
    for i, j in report.pairs:
        if i == idx:
            return iou(dets[j].box, orig_box_att) <= 0.5
    return True


def _matched_mistake(
    pred: Tracker,
    report: AssocReport,
    dets: list[DecodedDetection],
    id_att: int,
    orig_box_att: BoxTLBR,
) -> bool:
    """The victim is matched, but to a detection off its clean box. The switch
    attack owns the victim's detection placement while it walks, so a bare
    unmatch is a fault for the dressing to repair, never an achieved mistake:
    declaring victory on one strands the victim on an unperturbed frame and a
    fresh id steals its object."""
    for i, j in report.pairs:
        if pred.tracklets[i].track_id == id_att:
            return iou(dets[j].box, orig_box_att) <= 0.5
    return False


def _matched_to_cell(
    pred: Tracker,
    report: AssocReport,
    dets: list[DecodedDetection],
    track_id: int,
    cell: tuple[int, int],
) -> bool:
    for i, j in report.pairs:
        if pred.tracklets[i].track_id == track_id:
            return dets[j].cell == cell
    return False


def _holds_pairing(
    ctx: FrameContext, report: AssocReport, dets: list[DecodedDetection]
) -> bool:
    """Goal once the identities have crossed: each victim keeps the detection
    on its carrier cell. A bare unmatch is a fault here, not an achieved
    mistake; the dressing must keep stepping until the pairing holds or the
    budget runs out."""
    if not _matched_to_cell(ctx.pred, report, dets, ctx.id_att, ctx.cell_att):
        return False
    if ctx.pred.get(ctx.id_scr) is None:
        return True
    return _matched_to_cell(ctx.pred, report, dets, ctx.id_scr, ctx.cell_scr)


@dataclass
class InnerResult:
    pert: Perturbation
    iterations: int
    erred: bool
    dets: list[DecodedDetection]
    report: AssocReport
    loss: float | None
    stalled: bool = False


def noise_generator(ctx: FrameContext, cfg: AttackConfig) -> InnerResult:
    """Per-frame inner loop: unit-norm gradient steps until the association
    first breaks, the budget runs out, or the gradient vanishes. The final
    perturbation is returned even when no break was forced."""
    pert = Perturbation.zeros_like(ctx.maps)
    with_features = ctx.pred.config.uses_features
    obj = build_objective(ctx, cfg)
    schedule = cfg.schedule
    loss = None
    stalled = False
    steps = 0
    while True:
        dets = decode(ctx.maps, with_features=with_features, pert=pert)
        report = ctx.pred.associate(dets)
        if ctx.flipped:
            achieved = _holds_pairing(ctx, report, dets)
        elif cfg.method == "trasw":
            achieved = _matched_mistake(
                ctx.pred, report, dets, ctx.id_att, ctx.orig_box_att
            )
        else:
            achieved = association_mistake(
                ctx.pred, report, dets, ctx.id_att, ctx.orig_box_att
            )
        if achieved:
            return InnerResult(pert, steps, True, dets, report, loss, stalled)
        if steps >= cfg.thr_iter or stalled:
            return InnerResult(pert, steps, False, dets, report, loss, stalled)
        if obj.pp and _pp_soaked(ctx.maps, pert, obj):
            obj.pp = []
        grad = grad_total(ctx.maps, pert, obj, cfg)
        loss = total_loss(ctx.maps, pert, obj, cfg)
        n = pert_l2(grad)
        if n == 0.0:
            stalled = True
            continue
        for mine, g in zip(pert.grids(), grad.grids()):
            mine -= g / n
        steps += 1
        obj.advance(steps, schedule)


def check_fit(orig: Tracker, adv: Tracker, id_att: int) -> bool:
    """The adversarial pool still agrees with the clean one about the target."""
    a = orig.get(id_att)
    b = adv.get(id_att)
    if a is None or b is None:
        return False
    return iou(a.predicted_box(), b.predicted_box()) > 0.5


def _wean_done(orig: Tracker, pred: Tracker, id_att: int, partner: int | None) -> bool:
    """After the cross each follower is eased onto the object it now rides;
    once both states sit within the wean residuals, clean detections match on
    their own and the dressing can stop. The clean pool locates the objects:
    the attacked id now follows the partner's object and vice versa."""
    for fid, did in ((id_att, partner), (partner, id_att)):
        f = pred.get(fid) if fid is not None else None
        if f is None or did is None or orig.get(did) is None:
            continue
        fx = f.motion.xyah()
        d = _state_dest(orig, did)
        if math.hypot(d[0] - fx.cx, d[1] - fx.cy) > WEAN_POS_PX:
            return False
        if abs(d[5] - fx.h) > WEAN_SIZE_PX:
            return False
    return True


def find_max_iou(pool: Tracker, id_att: int) -> tuple[int | None, float]:
    """The other tracked id overlapping the target most, with its IoU."""
    t = pool.get(id_att)
    if t is None:
        return None, 0.0
    box = t.predicted_box()
    best_id, best = None, 0.0
    for other in pool.tracklets:
        if other.track_id == id_att:
            continue
        v = iou(box, other.predicted_box())
        if v > best:
            best, best_id = v, other.track_id
    return best_id, best


# --- the full outer loop ------------------------------------------------------


@dataclass
class FrameTrace:
    frame: int
    gate_exist: bool
    gate_fit: bool
    gate_overlap: bool
    screener_id: int | None
    attacked: bool
    erred: bool
    iterations: int
    loss: float | None
    l2: float
    d_feat: float | None
    d_box: float | None
    flag: str | None = None


@dataclass
class AttackTrace:
    method: str
    tracker_mode: str
    id_att: int
    agent_att: int | None
    frames: list[FrameTrace]
    attacked_frames: list[int]
    switch_frame: int | None
    success: bool
    held_to_end: bool
    l2_total: float
    orig_history: TrackHistory
    adv_history: TrackHistory
    config: dict

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "tracker_mode": self.tracker_mode,
            "id_att": self.id_att,
            "agent_att": self.agent_att,
            "success": self.success,
            "held_to_end": self.held_to_end,
            "switch_frame": self.switch_frame,
            "attacked_frames": self.attacked_frames,
            "l2_total": self.l2_total,
            "config": self.config,
            "frames": [
                {
                    "frame": f.frame,
                    "gates": [f.gate_exist, f.gate_fit, f.gate_overlap],
                    "screener_id": f.screener_id,
                    "attacked": f.attacked,
                    "erred": f.erred,
                    "iterations": f.iterations,
                    "loss": f.loss,
                    "l2": f.l2,
                    "d_feat": f.d_feat,
                    "d_box": f.d_box,
                    "flag": f.flag,
                }
                for f in self.frames
            ],
            "orig_mot": self.orig_history.mot_lines(),
            "adv_mot": self.adv_history.mot_lines(),
        }
        return json.dumps(doc, indent=1)


def _exist_gate(pool: Tracker, track_id: int, frame: int, thr_frame: int) -> bool:
    t = pool.get(track_id)
    return t is not None and t.age(frame) > thr_frame


def _divergence(orig: Tracker, adv: Tracker, track_id: int):
    """(feature, box-center) distance between the two pools' target states."""
    a, b = orig.get(track_id), adv.get(track_id)
    if a is None or b is None:
        return None, None
    d_feat = None
    if a.appearance is not None and b.appearance is not None:
        d_feat = float(1.0 - a.appearance.smoothed @ b.appearance.smoothed)
    ax, ay = center(a.predicted_box())
    bx, by = center(b.predicted_box())
    return d_feat, math.hypot(ax - bx, ay - by)


def _ranat_pert(maps: SensorMaps, rng: np.random.Generator, cfg: AttackConfig) -> Perturbation:
    pert = Perturbation(
        d_heat=rng.standard_normal(maps.heat.shape),
        d_size=rng.standard_normal(maps.size.shape),
        d_off=rng.standard_normal(maps.off.shape),
        d_feat=rng.standard_normal(maps.feat.shape),
    )
    target = rng.uniform(cfg.rand_l2_low, cfg.rand_l2_high)
    scale = target / pert_l2(pert)
    for g in pert.grids():
        g *= scale
    return pert


def run_attack(
    provider,
    id_att: int,
    atk: AttackConfig,
    assoc: AssociationConfig | None = None,
) -> AttackTrace:
    """Track the clip twice in lockstep — clean and attacked — injecting
    per-frame noise whenever the gates open, then judge the outcome."""
    assoc = assoc or AssociationConfig()
    if assoc.mode == "byte" and atk.method == "trasw" and atk.use_pp:
        raise ValueError(
            "the feature push-pull term needs embeddings; disable it for the "
            "overlap-only tracker"
        )
    orig = Tracker(assoc)
    adv = Tracker(assoc)
    with_features = assoc.uses_features
    rng = np.random.default_rng([0xA77AC4, atk.seed, id_att])
    orig_hist = TrackHistory()
    adv_hist = TrackHistory()
    traces: list[FrameTrace] = []
    attacked_frames: list[int] = []
    switch_frame: int | None = None
    thr_iou_live = atk.thr_iou
    l2_total = 0.0
    flipped = False
    partner: int | None = None

    for t in range(1, provider.n_frames + 1):
        maps = provider.render(t, with_features=with_features)
        truth = provider.frame_truth(t)
        dets = decode(maps, with_features=with_features)
        labels = label_detections(dets, truth)
        orig_hist.record(t, orig.step(dets, frame=t, gt_labels=labels))

        tent = adv.copy()
        tent_assign = tent.step(dets, frame=t, gt_labels=labels)
        pred = adv.copy()
        pred.predict()

        gate_exist = _exist_gate(pred, id_att, t, atk.thr_frame)
        if flipped:
            # past the cross the target is supposed to diverge from its clean
            # twin and the overlap that opened the attack is gone, so those
            # two gates hand over to the wean: keep easing the swapped pair
            # onto their objects until clean detections match unaided.
            scr_id = partner
            gate_fit = pred.get(id_att) is not None
            gate_overlap = not _wean_done(orig, pred, id_att, partner)
        else:
            gate_fit = check_fit(orig, pred, id_att)
            scr_id, scr_iou = find_max_iou(pred, id_att)
            gate_overlap = scr_id is not None and scr_iou > thr_iou_live
        budget_open = len(attacked_frames) < atk.max_frames

        frame_trace = FrameTrace(
            frame=t,
            gate_exist=gate_exist,
            gate_fit=gate_fit,
            gate_overlap=gate_overlap,
            screener_id=scr_id,
            attacked=False,
            erred=False,
            iterations=0,
            loss=None,
            l2=0.0,
            d_feat=None,
            d_box=None,
        )

        if not (budget_open and gate_exist and gate_fit and gate_overlap):
            adv = tent
            adv_hist.record(t, tent_assign)
            frame_trace.d_feat, frame_trace.d_box = _divergence(orig, adv, id_att)
            traces.append(frame_trace)
            continue

        orig_box_att = orig.get(id_att).predicted_box()
        # carrier cells are pinned to the clean pool: it knows which detection
        # each physical object produced this frame even while the adversarial
        # states are mid-walk between objects. After the cross the rides swap.
        ride_att, ride_scr = (scr_id, id_att) if flipped else (id_att, scr_id)
        pool_att = orig if orig.get(ride_att) is not None else (
            tent if tent.get(ride_att) is not None else pred
        )
        pool_scr = orig if orig.get(ride_scr) is not None else (
            tent if tent.get(ride_scr) is not None else pred
        )
        cell_att = _det_center_cell(pool_att, ride_att, dets, maps.stride)
        cell_scr = _det_center_cell(pool_scr, ride_scr, dets, maps.stride)
        dest_pool_att = orig if orig.get(scr_id) is not None else pred
        dest_pool_scr = orig if orig.get(id_att) is not None else pred
        ctx = FrameContext(
            maps=maps,
            pred=pred,
            id_att=id_att,
            id_scr=scr_id,
            cell_att=cell_att,
            cell_scr=cell_scr,
            orig_box_att=orig_box_att,
            dest_att=_state_dest(dest_pool_att, scr_id),
            dest_scr=_state_dest(dest_pool_scr, id_att),
            flipped=flipped,
        )

        if atk.method == "ranat":
            pert = _ranat_pert(maps, rng, atk)
            dets_p = decode(maps, with_features=with_features, pert=pert)
            report = pred.associate(dets_p)
            erred = association_mistake(pred, report, dets_p, id_att, orig_box_att)
            inner = InnerResult(pert, 0, erred, dets_p, report, None)
            apply_noise = True
        else:
            try:
                inner = noise_generator(ctx, atk)
            except DegenerateRail as exc:
                frame_trace.flag = f"config error: {exc}"
                adv = tent
                adv_hist.record(t, tent_assign)
                frame_trace.d_feat, frame_trace.d_box = _divergence(orig, adv, id_att)
                traces.append(frame_trace)
                continue
            apply_noise = (inner.erred or atk.use_fn) and pert_l2(inner.pert) > 0

        if apply_noise:
            labels_p = label_detections(inner.dets, truth)
            pool_ids = [tk.track_id for tk in pred.tracklets]
            adv_assign = pred.commit(inner.dets, inner.report, t, labels_p)
            adv = pred
            # the cross is visible in the attacker's own bookkeeping the moment
            # it commits: the target just caught the detection sitting on the
            # screener's carrier cell. Waiting for the box-overlap vote instead
            # costs a frame, and one frame of stale pre-cross dressing at the
            # crossing point is enough to push the pairing straight back.
            if atk.method == "trasw":
                for pi, di in inner.report.pairs:
                    if pool_ids[pi] != id_att:
                        continue
                    if inner.dets[di].cell == ctx.cell_scr:
                        # before the cross the screener's carrier is the other
                        # object, so this match IS the cross; after it the
                        # screener's carrier is the old object, so the same
                        # match means the pairing reverted and the approach
                        # walk starts over.
                        flipped = not flipped
                        partner = ctx.id_scr if flipped else None
                    break
            attacked_frames.append(t)
            thr_iou_live = 0.0
            frame_trace.attacked = True
            frame_trace.l2 = pert_l2(inner.pert)
            l2_total += frame_trace.l2
        else:
            adv = tent
            adv_assign = tent_assign

        frame_trace.erred = inner.erred
        frame_trace.iterations = inner.iterations
        frame_trace.loss = inner.loss
        if inner.stalled:
            frame_trace.flag = "stalled"
        if inner.erred and switch_frame is None:
            switch_frame = t
        adv_hist.record(t, adv_assign)
        frame_trace.d_feat, frame_trace.d_box = _divergence(orig, adv, id_att)
        traces.append(frame_trace)

    agent_att = track_agent(orig_hist, id_att)
    if attacked_frames and agent_att is not None:
        success, held = judge_success(
            adv_hist, orig_hist, id_att, agent_att, attacked_frames[-1]
        )
    else:
        success, held = False, False

    return AttackTrace(
        method=atk.method,
        tracker_mode=assoc.mode,
        id_att=id_att,
        agent_att=agent_att,
        frames=traces,
        attacked_frames=attacked_frames,
        switch_frame=switch_frame,
        success=success,
        held_to_end=held,
        l2_total=l2_total,
        orig_history=orig_hist,
        adv_history=adv_hist,
        config={
            "method": atk.method,
            "tracker_mode": assoc.mode,
            "thr_iou": atk.thr_iou,
            "thr_frame": atk.thr_frame,
            "thr_iter": atk.thr_iter,
            "max_frames": atk.max_frames,
            "gamma": atk.gamma,
            "schedule": list(atk.schedule),
            "use_pp": atk.use_pp,
            "use_cl": atk.use_cl,
            "use_fn": atk.use_fn,
            "seed": atk.seed,
        },
    )


def _det_center_cell(
    pool: Tracker,
    track_id: int,
    dets: list[DecodedDetection],
    stride: int,
) -> tuple[int, int]:
    """Center cell of the detection a tracklet rides: best overlap with its
    predicted box, nearest center on an overlap tie. Dressing sites must sit
    on real detection peaks; raising the score anywhere else grows a spurious
    peak out of the ridge between two objects and the decoder hands the
    matcher a junk detection. The cell under the predicted center is used
    only when the frame has no detections at all."""
    t = pool.get(track_id)
    if t is None:
        return dets[0].cell if dets else (0, 0)
    box = t.predicted_box()
    cx, cy = center(box)
    best, best_key = None, None
    for d in dets:
        dcx, dcy = center(d.box)
        key = (-iou(box, d.box), math.hypot(dcx - cx, dcy - cy))
        if best_key is None or key < best_key:
            best, best_key = d, key
    if best is not None:
        return best.cell
    return _state_center_cell(pool, track_id, stride)


def run_trasw(provider, id_att, atk=None, assoc=None) -> AttackTrace:
    atk = _with_method(atk, "trasw")
    return run_attack(provider, id_att, atk, assoc)


def run_ranat(provider, id_att, atk=None, assoc=None) -> AttackTrace:
    return run_attack(provider, id_att, _with_method(atk, "ranat"), assoc)


def run_detat(provider, id_att, atk=None, assoc=None) -> AttackTrace:
    return run_attack(provider, id_att, _with_method(atk, "detat"), assoc)


def run_hijack(provider, id_att, atk=None, assoc=None) -> AttackTrace:
    return run_attack(provider, id_att, _with_method(atk, "hijack"), assoc)


def _with_method(atk: AttackConfig | None, method: str) -> AttackConfig:
    if atk is None:
        return AttackConfig(method=method)
    if atk.method != method:
        raise ValueError(f"config method {atk.method!r} does not match {method!r}")
    return atk
