"""Synthetic multi-object tracking lab with an identity-switch attack bench.

The package splits into a simulated world (scenarios rendered to detector-style
output grids), two association engines over a shared Kalman core, a family of
gradient attacks against the grids, and judging/aggregation utilities.
"""

from .geometry import (
    BoxTLBR,
    BoxXYAH,
    GridCell,
    box_from_center,
    box_size,
    center,
    iou,
    iou_matrix,
    smooth_l1,
    tlbr_to_xyah,
    to_grid,
    xyah_to_tlbr,
)
from .motion import (
    GATE_CHI2_95_4DOF,
    GatingError,
    KalmanFilter,
    KalmanParams,
    MotionState,
)
from .appearance import AppearanceState, cosine_distance, ema_update, normalize
from .world import (
    AgentSpec,
    DecodedDetection,
    Perturbation,
    ReplayRun,
    ScenarioError,
    ScenarioRun,
    ScenarioSpec,
    SensorMaps,
    TEMPLATES,
    TruthObject,
    apply_perturbation,
    decode,
    gen_scenario,
    label_detections,
    load_grids,
    load_mot_det,
    load_scenario,
    make_template,
    render_maps,
    save_grids,
    save_scenario,
)
from .tracker import (
    AssociationConfig,
    Assignment,
    AssocReport,
    FrameRecord,
    TrackHistory,
    Tracker,
    Tracklet,
    TrackStatus,
    hungarian,
    run_video,
)
from .attack import (
    ATTACK_METHODS,
    AttackConfig,
    AttackTrace,
    FrameTrace,
    advance_leap,
    gradient_step,
    grad_total,
    noise_generator,
    run_attack,
    run_detat,
    run_hijack,
    run_ranat,
    run_trasw,
    total_loss,
)
from .metrics import (
    AggregateStats,
    AttackOutcome,
    SuiteReport,
    aggregate,
    attackable_ids,
    attackable_proportion_curve,
    build_suite_report,
    judge_success,
    success_rate_within,
    track_agent,
)

__version__ = "0.1.0"
