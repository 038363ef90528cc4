"""Command-line front end: scenario generation, tracking, attacks, and sweeps.

Every command is deterministic given its flags; all randomness flows from the
--seed value, and output files embed the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .attack import ATTACK_METHODS, AttackConfig, AttackTrace, run_attack
from .geometry import iou
from .metrics import (
    AttackOutcome,
    attackable_ids,
    attackable_proportion_curve,
    build_suite_report,
    SuiteReport,
)
from .tracker import AssociationConfig, Tracker, run_video
from .world import (
    ReplayRun,
    ScenarioError,
    TEMPLATES,
    decode,
    gen_scenario,
    label_detections,
    load_mot_det,
    load_scenario,
    make_template,
    save_scenario,
)

DEFAULT_CAPS = (1, 5, 10, 15, 20)
PROPORTION_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
WORKERS_ENV = "TRACKSWITCH_WORKERS"

ABLATIONS = ("no-pp", "no-cl", "no-fn")


class ConfigError(ValueError):
    """Invalid flag combination or malformed run configuration."""


@dataclass
class RunConfig:
    """Resolved experiment cell: where detections come from, which tracker
    runs, and what (if anything) attacks it."""

    tracker_mode: str = "fused"
    attacker: str = "none"
    ablate: frozenset[str] = frozenset()
    scenario_path: str | None = None
    template: str | None = None
    det_path: str | None = None
    seed: int = 0
    motion_weight: float | None = None
    ema_alpha: float | None = None
    thr_iou: float | None = None
    thr_frame: int | None = None
    thr_iter: int | None = None
    max_frames: int | None = None
    out: str = "."

    def __post_init__(self) -> None:
        if self.tracker_mode not in ("fused", "byte"):
            raise ConfigError(f"unknown tracker {self.tracker_mode!r}")
        if self.attacker != "none" and self.attacker not in ATTACK_METHODS:
            raise ConfigError(
                f"unknown attacker {self.attacker!r}; have {list(ATTACK_METHODS)}"
            )
        bad = set(self.ablate) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation(s) {sorted(bad)}; have {list(ABLATIONS)}")
        sources = [
            s for s in (self.scenario_path, self.template, self.det_path) if s
        ]
        if len(sources) != 1:
            raise ConfigError(
                "exactly one detection source required: --scenario, --template, or --det"
            )
        if (
            self.tracker_mode == "byte"
            and self.attacker == "trasw"
            and "no-pp" not in self.ablate
        ):
            raise ConfigError(
                "the overlap-only tracker carries no embeddings: the feature "
                "push-pull term cannot apply (pass --ablate no-pp)"
            )

    def association(self) -> AssociationConfig:
        kw: dict = {"mode": self.tracker_mode}
        if self.motion_weight is not None:
            kw["motion_weight"] = self.motion_weight
        if self.ema_alpha is not None:
            kw["ema_alpha"] = self.ema_alpha
        return AssociationConfig(**kw)

    def attack(self) -> AttackConfig:
        if self.attacker == "none":
            raise ConfigError("no attacker configured")
        kw: dict = {
            "method": self.attacker,
            "use_pp": "no-pp" not in self.ablate,
            "use_cl": "no-cl" not in self.ablate,
            "use_fn": "no-fn" not in self.ablate,
            "seed": self.seed,
        }
        for name in ("thr_iou", "thr_frame", "thr_iter", "max_frames"):
            v = getattr(self, name)
            if v is not None:
                kw[name] = v
        return AttackConfig(**kw)


def _provider(cfg: RunConfig):
    """(provider, human-readable source name)"""
    if cfg.template:
        spec = make_template(cfg.template, cfg.seed)
        return gen_scenario(spec), f"{cfg.template}-s{cfg.seed}"
    if cfg.scenario_path:
        spec = load_scenario(cfg.scenario_path)
        return gen_scenario(spec), Path(cfg.scenario_path).stem
    frames = load_mot_det(cfg.det_path)
    return ReplayRun(frames), Path(cfg.det_path).stem


def _worker_count() -> int:
    env = os.environ.get(WORKERS_ENV, "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return max(1, min(8, os.cpu_count() or 1))


# --- gen ----------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    kwargs = {}
    if args.agents is not None:
        kwargs["n_agents"] = args.agents
    try:
        spec = make_template(args.template, args.seed, **kwargs)
    except TypeError:
        raise ScenarioError(
            f"template {args.template!r} does not take an agent-count override"
        ) from None
    gen_scenario(spec)  # validate before writing
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(spec, str(out))
    print(f"wrote {out} ({len(spec.agents)} agents, {spec.n_frames} frames)")
    return 0


# --- track ----------------------------------------------------------------------


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    provider, name = _provider(cfg)
    assoc = cfg.association()
    tracker = Tracker(assoc)
    rows = []
    from .tracker import TrackHistory

    history = TrackHistory()
    for t in range(1, provider.n_frames + 1):
        maps = provider.render(t, with_features=assoc.uses_features)
        dets = decode(maps, with_features=assoc.uses_features)
        labels = label_detections(dets, provider.frame_truth(t))
        tracker.predict()
        report = tracker.associate(dets)
        # measure tracklet/detection agreement before states absorb the frame
        for i, j in report.pairs:
            trk = tracker.tracklets[i]
            det = dets[j]
            d_feat = ""
            if trk.appearance is not None and det.feature is not None:
                d_feat = f"{1.0 - float(trk.appearance.smoothed @ det.feature):.6f}"
            d_box = 1.0 - iou(trk.predicted_box(), det.box)
            rows.append((t, trk.track_id, d_feat, f"{d_box:.6f}"))
        assignments = tracker.commit(dets, report, t, labels)
        history.record(t, assignments)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.txt").write_text("\n".join(history.mot_lines()) + "\n")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "track_id", "d_feat", "d_box"])
        w.writerows(rows)
    (out / "config.json").write_text(json.dumps(_resolved(cfg, name), indent=1))
    ids = {a.track_id for rec in history.frames for a in rec.assignments}
    print(f"tracked {name}: {len(ids)} ids over {provider.n_frames} frames -> {out}")
    return 0


# --- attack ---------------------------------------------------------------------


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    if cfg.attacker == "none":
        raise ConfigError("attack requires --attacker")
    provider, name = _provider(cfg)
    assoc = cfg.association()
    atk = cfg.attack()
    clean = run_video(provider, assoc)
    thr_frame = atk.thr_frame
    thr_iou = atk.thr_iou
    targets = attackable_ids(clean, thr_frame, thr_iou)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = []
    for tid in targets:
        trace = run_attack(provider, tid, atk, assoc)
        (out / f"trace-{cfg.attacker}-id{tid}.json").write_text(trace.to_json())
        outcomes.append(_outcome(trace, name, cfg.seed))
        print(
            f"{cfg.attacker} vs {cfg.tracker_mode} id={tid}: "
            f"success={trace.success} held={trace.held_to_end} "
            f"fm={len(trace.attacked_frames)} l2={trace.l2_total:.2f}"
        )
    props = _proportions(clean, thr_frame)
    report = build_suite_report(
        cfg.tracker_mode, cfg.attacker, name, outcomes, list(DEFAULT_CAPS), props
    )
    doc = {
        "config": _resolved(cfg, name),
        "attackable_ids": targets,
        "outcomes": [o.to_dict() for o in outcomes],
        "report": report.to_dict(),
    }
    (out / "report.json").write_text(json.dumps(doc, indent=1))
    if not targets:
        print("no attackable ids in this scenario")
    return 0


def _outcome(trace: AttackTrace, scenario: str, seed: int) -> AttackOutcome:
    fm = len(trace.attacked_frames)
    return AttackOutcome(
        scenario=scenario,
        seed=seed,
        tracker_mode=trace.tracker_mode,
        method=trace.method,
        track_id=trace.id_att,
        agent_id=-1 if trace.agent_att is None else trace.agent_att,
        attacked=fm > 0,
        success=trace.success,
        held_to_end=trace.held_to_end,
        attacked_frames=fm,
        l2_total=trace.l2_total,
        l2_mean=(trace.l2_total / fm) if fm else 0.0,
        judge_from=trace.attacked_frames[-1] if fm else 0,
    )


def _proportions(clean, thr_frame: int) -> dict[str, float]:
    curve = attackable_proportion_curve(clean, list(PROPORTION_GRID), thr_frame)
    return {f"{thr:.1f}": v for thr, v in zip(PROPORTION_GRID, curve)}


def _resolved(cfg: RunConfig, name: str) -> dict:
    doc = {
        "source": name,
        "tracker": cfg.tracker_mode,
        "attacker": cfg.attacker,
        "ablate": sorted(cfg.ablate),
        "seed": cfg.seed,
    }
    for k in (
        "motion_weight", "ema_alpha", "thr_iou", "thr_frame", "thr_iter", "max_frames"
    ):
        v = getattr(cfg, k)
        if v is not None:
            doc[k] = v
    return doc


# --- sweep ----------------------------------------------------------------------


def _parse_attacker_spec(spec: str) -> tuple[str, frozenset[str]]:
    """'trasw:no-pp:no-fn' -> ('trasw', {'no-pp','no-fn'})"""
    parts = spec.split(":")
    method = parts[0]
    ablate = frozenset(parts[1:])
    if method not in ATTACK_METHODS:
        raise ConfigError(f"unknown attacker {method!r} in {spec!r}")
    bad = set(ablate) - set(ABLATIONS)
    if bad:
        raise ConfigError(f"unknown ablation(s) {sorted(bad)} in {spec!r}")
    return method, ablate


def sweep_cell(payload: dict) -> dict:
    """One (template, seed, tracker) cell: clean run plus every requested
    attacker over the first few attackable ids. Standalone so worker
    processes can execute it."""
    template = payload["template"]
    seed = payload["seed"]
    tracker_mode = payload["tracker"]
    spec = make_template(template, seed)
    provider = gen_scenario(spec)
    assoc = AssociationConfig(mode=tracker_mode)
    clean = run_video(provider, assoc)
    thr_frame = payload.get("thr_frame") or 10
    targets = attackable_ids(clean, thr_frame=thr_frame)[: payload["ids_per_scenario"]]
    result = {
        "template": template,
        "seed": seed,
        "tracker": tracker_mode,
        "tracked_count": len({a.track_id for r in clean.frames for a in r.assignments}),
        "attackable": targets,
        "proportions": _proportions(clean, thr_frame),
        "attackers": {},
    }
    for spec_str in payload["attackers"]:
        method, ablate = _parse_attacker_spec(spec_str)
        if tracker_mode == "byte":
            ablate = ablate | {"no-pp"}  # embeddings do not exist on this path
        kw = {
            "method": method,
            "use_pp": "no-pp" not in ablate,
            "use_cl": "no-cl" not in ablate,
            "use_fn": "no-fn" not in ablate,
            "seed": seed,
        }
        for name in ("thr_iou", "thr_frame", "thr_iter", "max_frames"):
            if payload.get(name) is not None:
                kw[name] = payload[name]
        atk = AttackConfig(**kw)
        runs = []
        for tid in targets:
            trace = run_attack(provider, tid, atk, assoc)
            outcome = _outcome(trace, f"{template}-s{seed}", seed)
            runs.append(
                {
                    "outcome": outcome.to_dict(),
                    "frames": [
                        {
                            "frame": f.frame,
                            "gates": [f.gate_exist, f.gate_fit, f.gate_overlap],
                            "attacked": f.attacked,
                            "erred": f.erred,
                            "iterations": f.iterations,
                            "l2": f.l2,
                            "flag": f.flag,
                        }
                        for f in trace.frames
                    ],
                }
            )
        result["attackers"][spec_str] = runs
    return result


def cmd_sweep(args: argparse.Namespace) -> int:
    templates = [t.strip() for t in args.templates.split(",") if t.strip()]
    for t in templates:
        if t not in TEMPLATES:
            raise ConfigError(f"unknown template {t!r}; have {sorted(TEMPLATES)}")
    seeds = _parse_seeds(args.seeds)
    trackers = [t.strip() for t in args.trackers.split(",") if t.strip()]
    for t in trackers:
        if t not in ("fused", "byte"):
            raise ConfigError(f"unknown tracker {t!r}")
    attackers = [a.strip() for a in args.attackers.split(",") if a.strip()]
    for a in attackers:
        _parse_attacker_spec(a)
    caps = [int(c) for c in args.caps.split(",")]
    out = Path(args.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)

    payload_common = {
        "attackers": attackers,
        "ids_per_scenario": args.ids,
        "thr_iou": args.thr_iou,
        "thr_frame": args.thr_frame,
        "thr_iter": args.thr_iter,
        "max_frames": args.max_frames,
    }
    pending = []
    done: list[dict] = []
    for template in templates:
        for seed in seeds:
            for tracker in trackers:
                path = cells_dir / f"{template}-s{seed}-{tracker}.json"
                if path.exists():
                    cell = json.loads(path.read_text())
                    if set(attackers) <= set(cell.get("attackers", {})):
                        done.append(cell)
                        continue
                pending.append(
                    dict(payload_common, template=template, seed=seed, tracker=tracker)
                )

    if pending:
        workers = _worker_count()
        print(f"sweep: {len(pending)} cells to run ({len(done)} cached), "
              f"{workers} workers")
        if workers == 1:
            results = map(sweep_cell, pending)
            for cell in results:
                _store_cell(cells_dir, cell)
                done.append(cell)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for cell in pool.map(sweep_cell, pending):
                    _store_cell(cells_dir, cell)
                    done.append(cell)
    else:
        print(f"sweep: all {len(done)} cells cached")

    reports = _combine(done, attackers, caps)
    doc = {
        "config": {
            "templates": templates,
            "seeds": seeds,
            "trackers": trackers,
            "attackers": attackers,
            "caps": caps,
            "ids_per_scenario": args.ids,
        },
        "reports": [r.to_dict() for r in reports],
    }
    (out / "report.json").write_text(json.dumps(doc, indent=1))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SuiteReport.csv_header(caps))
        for r in reports:
            w.writerow(r.to_csv_row(caps))
    for r in reports:
        s = r.stats
        fm = "-" if s.mean_attacked_frames is None else f"{s.mean_attacked_frames:.1f}"
        print(
            f"{r.tracker_mode:>5} {r.method:<14} n={s.n:<4} "
            f"succ={s.success_rate:.2f} fm={fm}"
        )
    return 0


def _store_cell(cells_dir: Path, cell: dict) -> None:
    path = cells_dir / f"{cell['template']}-s{cell['seed']}-{cell['tracker']}.json"
    path.write_text(json.dumps(cell))


def _combine(cells: list[dict], attackers: list[str], caps: list[int]) -> list[SuiteReport]:
    reports = []
    trackers = sorted({c["tracker"] for c in cells})
    suite = "+".join(sorted({c["template"] for c in cells}))
    for tracker in trackers:
        rows = [c for c in cells if c["tracker"] == tracker]
        props: dict[str, list[float]] = {}
        for c in rows:
            for k, v in c["proportions"].items():
                props.setdefault(k, []).append(v)
        mean_props = {k: sum(v) / len(v) for k, v in sorted(props.items())}
        for attacker in attackers:
            outcomes = [
                AttackOutcome.from_dict(run["outcome"])
                for c in rows
                for run in c["attackers"].get(attacker, [])
            ]
            reports.append(
                build_suite_report(tracker, attacker, suite, outcomes, caps, mean_props)
            )
    return reports


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi)))
    return [int(s) for s in text.split(",") if s.strip()]


# --- argument plumbing -----------------------------------------------------------


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        tracker_mode=getattr(args, "tracker", "fused"),
        attacker=getattr(args, "attacker", "none") or "none",
        ablate=frozenset(getattr(args, "ablate", []) or []),
        scenario_path=getattr(args, "scenario", None),
        template=getattr(args, "template", None),
        det_path=getattr(args, "det", None),
        seed=args.seed,
        motion_weight=getattr(args, "lam", None),
        ema_alpha=getattr(args, "alpha", None),
        thr_iou=getattr(args, "thr_iou", None),
        thr_frame=getattr(args, "thr_frame", None),
        thr_iter=getattr(args, "thr_iter", None),
        max_frames=getattr(args, "max_frames", None),
        out=args.out,
    )


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--template", help=f"built-in template: {sorted(TEMPLATES)}")
    p.add_argument("--det", help="MOT-format detection file to replay")
    p.add_argument("--seed", type=int, default=0)


def _add_tracker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tracker", choices=("fused", "byte"), default="fused")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="weight on motion distance in the fused cost")
    p.add_argument("--alpha", type=float, default=None,
                   help="appearance smoothing factor")


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--attacker", choices=ATTACK_METHODS, default=None)
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=[])
    p.add_argument("--thr-iou", dest="thr_iou", type=float, default=None)
    p.add_argument("--thr-frame", dest="thr_frame", type=int, default=None)
    p.add_argument("--thr-iter", dest="thr_iter", type=int, default=None)
    p.add_argument("--max-frames", dest="max_frames", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackswitch",
        description="Synthetic tracking lab: association engines and "
                    "identity-switch attacks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a scenario file from a template")
    g.add_argument("--template", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--agents", type=int, default=None,
                   help="agent-count override for templates that support it")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("track", help="run a tracker over a clip, no attack")
    _add_source_flags(t)
    _add_tracker_flags(t)
    t.add_argument("--out", default="track-out")
    t.set_defaults(func=cmd_track)

    a = sub.add_parser("attack", help="attack every attackable id in a clip")
    _add_source_flags(a)
    _add_tracker_flags(a)
    _add_attack_flags(a)
    a.add_argument("--out", default="attack-out")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", help="grid of scenarios x trackers x attackers")
    s.add_argument("--templates", default="crossing,crowded")
    s.add_argument("--seeds", default="0:25", help="'lo:hi' or comma list")
    s.add_argument("--trackers", default="fused,byte")
    s.add_argument(
        "--attackers",
        default="trasw,ranat,detat,hijack",
        help="comma list; ablations attach with colons, e.g. trasw:no-pp",
    )
    s.add_argument("--ids", type=int, default=2, help="attack targets per scenario")
    s.add_argument("--caps", default="1,5,10,15,20")
    s.add_argument("--thr-iou", dest="thr_iou", type=float, default=None)
    s.add_argument("--thr-frame", dest="thr_frame", type=int, default=None)
    s.add_argument("--thr-iter", dest="thr_iter", type=int, default=None)
    s.add_argument("--max-frames", dest="max_frames", type=int, default=None)
    s.add_argument("--out", default="sweep-out")
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
