"""Synthetic sensor world: scenarios, rendered detector grids, and decoding.

A scenario is a set of agents following piecewise-linear waypoint paths with
optional observation jitter. Each frame renders to stride-4 grids mimicking a
center-point detector head: a peak heatmap, per-cell box sizes, fractional
center offsets, and an identity-embedding map. Decoding recovers detections
from (possibly perturbed) grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import maximum_filter

from .geometry import (
    BoxTLBR,
    box_from_center,
    box_size,
    center,
    iou,
    to_grid,
)

DET_THRESHOLD = 0.4

# Cell offsets of the 3x3 neighborhood around a center cell, row-major.
NINE_BLOCK = tuple(
    (dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
)

_SCENARIO_SCHEMA = "trackswitch.scenario/1"
_GRID_SCHEMA = "trackswitch.grids/1"


class ScenarioError(ValueError):
    """Misconfigured scenario (bad geometry, overlapping spawns, bad schema)."""


@dataclass
class TruthObject:
    """One agent's ground-truth box (and rendered embedding) in one frame."""

    agent_id: int
    box: BoxTLBR
    feature: np.ndarray | None = None
    score: float = 1.0


@dataclass(frozen=True)
class AgentSpec:
    agent_id: int
    embedding: np.ndarray
    waypoints: tuple[tuple[float, float, float], ...]  # (frame, cx, cy)
    width: float
    height: float
    present_from: int = 1
    present_to: int | None = None  # inclusive; None = until the last frame

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ScenarioError(f"agent {self.agent_id}: non-positive box size")
        if not self.waypoints:
            raise ScenarioError(f"agent {self.agent_id}: needs at least one waypoint")
        frames = [w[0] for w in self.waypoints]
        if sorted(frames) != frames:
            raise ScenarioError(f"agent {self.agent_id}: waypoints out of order")
        emb = np.asarray(self.embedding, dtype=float)
        n = np.linalg.norm(emb)
        if n < 1e-12:
            raise ScenarioError(f"agent {self.agent_id}: zero embedding")
        object.__setattr__(self, "embedding", emb / n)

    def position(self, t: int) -> tuple[float, float]:
        frames = np.array([w[0] for w in self.waypoints], dtype=float)
        xs = np.array([w[1] for w in self.waypoints], dtype=float)
        ys = np.array([w[2] for w in self.waypoints], dtype=float)
        return float(np.interp(t, frames, xs)), float(np.interp(t, frames, ys))

    def present(self, t: int, n_frames: int) -> bool:
        last = self.present_to if self.present_to is not None else n_frames
        return self.present_from <= t <= last


@dataclass(frozen=True)
class ScenarioSpec:
    width: int
    height: int
    n_frames: int
    agents: tuple[AgentSpec, ...]
    stride: int = 4
    obs_noise_std: float = 0.0
    feat_noise_std: float = 0.0  # radians of embedding rotation per observation
    feature_dim: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.stride < 1 or self.width % self.stride or self.height % self.stride:
            raise ScenarioError("stride must divide both image dimensions")
        if self.n_frames < 1:
            raise ScenarioError("need at least one frame")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate agent ids")
        for a in self.agents:
            if a.embedding.shape != (self.feature_dim,):
                raise ScenarioError(
                    f"agent {a.agent_id}: embedding dim {a.embedding.shape} != {self.feature_dim}"
                )

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.height // self.stride, self.width // self.stride)


@dataclass
class SensorMaps:
    """Detector-head grids for one frame. feat may have zero channels."""

    heat: np.ndarray  # (gh, gw), values in [0, 1]
    size: np.ndarray  # (2, gh, gw): (w, h) in pixels
    off: np.ndarray   # (2, gh, gw): fractional cell offsets
    feat: np.ndarray  # (D, gh, gw)
    stride: int = 4


@dataclass
class Perturbation:
    """Additive deltas for each grid of a SensorMaps."""

    d_heat: np.ndarray
    d_size: np.ndarray
    d_off: np.ndarray
    d_feat: np.ndarray

    @classmethod
    def zeros_like(cls, maps: SensorMaps) -> "Perturbation":
        return cls(
            d_heat=np.zeros_like(maps.heat),
            d_size=np.zeros_like(maps.size),
            d_off=np.zeros_like(maps.off),
            d_feat=np.zeros_like(maps.feat),
        )

    def copy(self) -> "Perturbation":
        return Perturbation(
            self.d_heat.copy(), self.d_size.copy(), self.d_off.copy(), self.d_feat.copy()
        )

    def grids(self) -> tuple[np.ndarray, ...]:
        return (self.d_heat, self.d_size, self.d_off, self.d_feat)


def pert_l2(pert: Perturbation) -> float:
    """Joint L2 norm over all four delta grids."""
    total = 0.0
    for g in pert.grids():
        total += float(np.sum(g * g))
    return math.sqrt(total)


@dataclass
class DecodedDetection:
    box: BoxTLBR
    score: float
    size: tuple[float, float]
    feature: np.ndarray | None = None
    cell: tuple[int, int] = (0, 0)  # (gx, gy) peak cell


def render_maps(
    objects: list[TruthObject],
    grid_shape: tuple[int, int],
    stride: int,
    feature_dim: int,
    with_features: bool = True,
) -> SensorMaps:
    """Render one frame's grids.

    The heatmap is the per-cell max of unit-peak Gaussians centered on each
    agent's integer center cell (scaled by the agent's score). Size, offset
    and embedding values cover the nine-block around each center; a cell
    contested by two agents belongs to the nearer center, ties to the agent
    listed first.
    """
    gh, gw = grid_shape
    heat = np.zeros((gh, gw))
    size = np.zeros((2, gh, gw))
    off = np.zeros((2, gh, gw))
    fdim = feature_dim if with_features else 0
    feat = np.zeros((fdim, gh, gw))
    owner_d2 = np.full((gh, gw), np.inf)

    for obj in objects:
        w, h = box_size(obj.box)
        if w <= 0 or h <= 0:
            raise ScenarioError(f"agent {obj.agent_id}: zero-area truth box")
        cx, cy = center(obj.box)
        cell = to_grid(cx, cy, stride)
        if not (0 <= cell.gx < gw and 0 <= cell.gy < gh):
            raise ScenarioError(f"agent {obj.agent_id}: center off the grid")
        if with_features:
            if obj.feature is None:
                raise ScenarioError(f"agent {obj.agent_id}: feature required but missing")
            if obj.feature.shape != (fdim,):
                raise ScenarioError(f"agent {obj.agent_id}: bad feature dim")

        sigma = max(1.0, min(w, h) / (6.0 * stride))
        r = int(math.ceil(4.0 * sigma))
        x0, x1 = max(0, cell.gx - r), min(gw, cell.gx + r + 1)
        y0, y1 = max(0, cell.gy - r), min(gh, cell.gy + r + 1)
        ys = np.arange(y0, y1)[:, None]
        xs = np.arange(x0, x1)[None, :]
        g = np.exp(
            -((xs - cell.gx) ** 2 + (ys - cell.gy) ** 2) / (2.0 * sigma * sigma)
        )
        np.maximum(heat[y0:y1, x0:x1], obj.score * g, out=heat[y0:y1, x0:x1])

        fx, fy = cx / stride, cy / stride
        for dx, dy in NINE_BLOCK:
            x, y = cell.gx + dx, cell.gy + dy
            if not (0 <= x < gw and 0 <= y < gh):
                continue
            d2 = (x - fx) ** 2 + (y - fy) ** 2
            if d2 < owner_d2[y, x]:
                owner_d2[y, x] = d2
                size[0, y, x] = w
                size[1, y, x] = h
                off[0, y, x] = cell.offx
                off[1, y, x] = cell.offy
                if fdim:
                    feat[:, y, x] = obj.feature
    return SensorMaps(heat=heat, size=size, off=off, feat=feat, stride=stride)


def apply_perturbation(maps: SensorMaps, pert: Perturbation) -> SensorMaps:
    """Materialize the perturbed grids. Heat is clipped back into [0, 1].

    Feature cells are stored raw; readers renormalize at read time (decode,
    read_feature), so unit norm is a property of reads, not of the stored map.
    """
    for mine, theirs in zip(
        (maps.heat, maps.size, maps.off, maps.feat), pert.grids()
    ):
        if mine.shape != theirs.shape:
            raise ValueError(f"perturbation shape {theirs.shape} != map {mine.shape}")
    return SensorMaps(
        heat=np.clip(maps.heat + pert.d_heat, 0.0, 1.0),
        size=maps.size + pert.d_size,
        off=maps.off + pert.d_off,
        feat=maps.feat + pert.d_feat,
        stride=maps.stride,
    )


def read_feature(maps: SensorMaps, gx: int, gy: int) -> np.ndarray | None:
    """Unit-normalized feature at a cell, or None for a (near-)zero cell."""
    if maps.feat.shape[0] == 0:
        return None
    v = maps.feat[:, gy, gx]
    n = float(np.linalg.norm(v))
    if n < 1e-9:
        return None
    return v / n


def decode(
    maps: SensorMaps,
    threshold: float = DET_THRESHOLD,
    with_features: bool = True,
    pert: Perturbation | None = None,
) -> list[DecodedDetection]:
    """Detections from 3x3 local maxima of the heatmap at or above threshold.

    Passing `pert` decodes the perturbed grids without materializing them
    (equivalent to decode(apply_perturbation(maps, pert), ...)). Peaks whose
    size channels are non-positive, or whose feature cell cannot be
    normalized when features are requested, are dropped: they do not form
    legal detections.
    """
    heat = maps.heat
    if pert is not None:
        heat = np.clip(heat + pert.d_heat, 0.0, 1.0)
    local_max = maximum_filter(heat, size=3, mode="constant", cval=-1.0)
    ys, xs = np.nonzero((heat >= threshold) & (heat == local_max))
    dets: list[DecodedDetection] = []
    for gy, gx in zip(ys.tolist(), xs.tolist()):
        w = float(maps.size[0, gy, gx])
        h = float(maps.size[1, gy, gx])
        offx = float(maps.off[0, gy, gx])
        offy = float(maps.off[1, gy, gx])
        if pert is not None:
            w += float(pert.d_size[0, gy, gx])
            h += float(pert.d_size[1, gy, gx])
            offx += float(pert.d_off[0, gy, gx])
            offy += float(pert.d_off[1, gy, gx])
        if w <= 0 or h <= 0:
            continue
        feature = None
        if with_features:
            if maps.feat.shape[0] == 0:
                raise ValueError("features requested but the map has no channels")
            v = maps.feat[:, gy, gx]
            if pert is not None:
                v = v + pert.d_feat[:, gy, gx]
            n = float(np.linalg.norm(v))
            if n < 1e-9:
                continue
            feature = v / n
        cx = (gx + offx) * maps.stride
        cy = (gy + offy) * maps.stride
        dets.append(
            DecodedDetection(
                box=box_from_center(cx, cy, w, h),
                score=float(heat[gy, gx]),
                size=(w, h),
                feature=feature,
                cell=(gx, gy),
            )
        )
    return dets


def label_detections(
    dets: list[DecodedDetection],
    objects: list[TruthObject],
    min_iou: float = 0.5,
) -> list[int | None]:
    """Ground-truth agent id per detection: best-overlap agent above min_iou."""
    labels: list[int | None] = []
    for det in dets:
        best, best_id = 0.0, None
        for obj in objects:
            v = iou(det.box, obj.box)
            if v > best and v > min_iou:
                best, best_id = v, obj.agent_id
        labels.append(best_id)
    return labels


class ScenarioRun:
    """A generated scenario: per-frame truth precomputed, grids rendered on demand."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.gh, self.gw = spec.grid_shape
        rng = np.random.default_rng(spec.seed)
        self._truths: list[list[TruthObject]] = []
        for t in range(1, spec.n_frames + 1):
            frame: list[TruthObject] = []
            for agent in spec.agents:
                if not agent.present(t, spec.n_frames):
                    continue
                cx, cy = agent.position(t)
                if spec.obs_noise_std > 0:
                    cx += rng.normal(0.0, spec.obs_noise_std)
                    cy += rng.normal(0.0, spec.obs_noise_std)
                # keep the observed box inside the image
                cx = float(np.clip(cx, agent.width / 2, spec.width - agent.width / 2))
                cy = float(np.clip(cy, agent.height / 2, spec.height - agent.height / 2))
                feature = agent.embedding
                if spec.feat_noise_std > 0:
                    feature = _rotate_embedding(feature, spec.feat_noise_std, rng)
                frame.append(
                    TruthObject(
                        agent_id=agent.agent_id,
                        box=box_from_center(cx, cy, agent.width, agent.height),
                        feature=feature,
                    )
                )
            self._truths.append(frame)

    @property
    def n_frames(self) -> int:
        return self.spec.n_frames

    @property
    def stride(self) -> int:
        return self.spec.stride

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    def frame_truth(self, t: int) -> list[TruthObject]:
        return self._truths[t - 1]

    def render(self, t: int, with_features: bool = True) -> SensorMaps:
        return render_maps(
            self.frame_truth(t),
            (self.gh, self.gw),
            self.spec.stride,
            self.spec.feature_dim,
            with_features=with_features,
        )


def _rotate_embedding(e: np.ndarray, angle_std: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate a unit vector by a random small angle toward a random orthogonal direction."""
    theta = rng.normal(0.0, angle_std)
    r = rng.normal(size=e.shape)
    r -= np.dot(r, e) * e
    n = np.linalg.norm(r)
    if n < 1e-12:
        return e
    u = r / n
    return math.cos(theta) * e + math.sin(theta) * u


def gen_scenario(spec: ScenarioSpec) -> ScenarioRun:
    """Validate a spec and produce its deterministic run.

    Validation uses the noiseless paths: every present box must fit the image
    and no two agents may overlap on the frame where the later one spawns.
    """
    for agent in spec.agents:
        last = agent.present_to if agent.present_to is not None else spec.n_frames
        if agent.present_from < 1 or last > spec.n_frames or agent.present_from > last:
            raise ScenarioError(f"agent {agent.agent_id}: bad presence interval")
        for t in range(agent.present_from, last + 1):
            cx, cy = agent.position(t)
            if (
                cx - agent.width / 2 < 0
                or cx + agent.width / 2 > spec.width
                or cy - agent.height / 2 < 0
                or cy + agent.height / 2 > spec.height
            ):
                raise ScenarioError(
                    f"agent {agent.agent_id}: box leaves the image at frame {t}"
                )
    for agent in spec.agents:
        t0 = agent.present_from
        cx, cy = agent.position(t0)
        spawn_box = box_from_center(cx, cy, agent.width, agent.height)
        for other in spec.agents:
            if other.agent_id == agent.agent_id or not other.present(t0, spec.n_frames):
                continue
            ox, oy = other.position(t0)
            other_box = box_from_center(ox, oy, other.width, other.height)
            if iou(spawn_box, other_box) > 0:
                raise ScenarioError(
                    f"agents {agent.agent_id} and {other.agent_id} overlap at spawn frame {t0}"
                )
    return ScenarioRun(spec)


# --- serialization ---------------------------------------------------------


def save_scenario(spec: ScenarioSpec, path: str) -> None:
    doc = {
        "schema": _SCENARIO_SCHEMA,
        "width": spec.width,
        "height": spec.height,
        "n_frames": spec.n_frames,
        "stride": spec.stride,
        "obs_noise_std": spec.obs_noise_std,
        "feat_noise_std": spec.feat_noise_std,
        "feature_dim": spec.feature_dim,
        "seed": spec.seed,
        "agents": [
            {
                "id": a.agent_id,
                "embedding": [float(v) for v in a.embedding],
                "waypoints": [[float(f), float(x), float(y)] for f, x, y in a.waypoints],
                "width": a.width,
                "height": a.height,
                "present_from": a.present_from,
                "present_to": a.present_to,
            }
            for a in spec.agents
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_scenario(path: str) -> ScenarioSpec:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != _SCENARIO_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema: {doc.get('schema')!r}")
    agents = tuple(
        AgentSpec(
            agent_id=int(a["id"]),
            embedding=np.asarray(a["embedding"], dtype=float),
            waypoints=tuple((f, x, y) for f, x, y in a["waypoints"]),
            width=float(a["width"]),
            height=float(a["height"]),
            present_from=int(a.get("present_from", 1)),
            present_to=(None if a.get("present_to") is None else int(a["present_to"])),
        )
        for a in doc["agents"]
    )
    return ScenarioSpec(
        width=int(doc["width"]),
        height=int(doc["height"]),
        n_frames=int(doc["n_frames"]),
        agents=agents,
        stride=int(doc["stride"]),
        obs_noise_std=float(doc["obs_noise_std"]),
        feat_noise_std=float(doc["feat_noise_std"]),
        feature_dim=int(doc["feature_dim"]),
        seed=int(doc["seed"]),
    )


def save_grids(path: str, obj: SensorMaps | Perturbation) -> None:
    """Dump grids as a one-line JSON header followed by raw float64 bytes."""
    if isinstance(obj, SensorMaps):
        kind = "sensor_maps"
        named = [("heat", obj.heat), ("size", obj.size), ("off", obj.off), ("feat", obj.feat)]
        stride = obj.stride
    else:
        kind = "perturbation"
        named = [
            ("d_heat", obj.d_heat),
            ("d_size", obj.d_size),
            ("d_off", obj.d_off),
            ("d_feat", obj.d_feat),
        ]
        stride = None
    header = {
        "schema": _GRID_SCHEMA,
        "kind": kind,
        "dtype": "<f8",
        "stride": stride,
        "grids": [{"name": n, "shape": list(g.shape)} for n, g in named],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for _, g in named:
            fh.write(np.ascontiguousarray(g, dtype="<f8").tobytes())


def load_grids(path: str) -> SensorMaps | Perturbation:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("schema") != _GRID_SCHEMA:
            raise ValueError(f"unsupported grid schema: {header.get('schema')!r}")
        grids = {}
        for entry in header["grids"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            grids[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    if header["kind"] == "sensor_maps":
        return SensorMaps(
            heat=grids["heat"], size=grids["size"], off=grids["off"], feat=grids["feat"],
            stride=int(header["stride"]),
        )
    return Perturbation(
        d_heat=grids["d_heat"], d_size=grids["d_size"], d_off=grids["d_off"],
        d_feat=grids["d_feat"],
    )


# --- external detections --------------------------------------------------


def load_mot_det(path: str) -> dict[int, list[tuple[int, BoxTLBR, float]]]:
    """Parse MOT-style text: frame,id,x,y,w,h,score[,...]. tlwh becomes tlbr."""
    frames: dict[int, list[tuple[int, BoxTLBR, float]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise ValueError(f"{path}:{lineno}: expected at least 7 fields")
            try:
                frame = int(float(parts[0]))
                obj_id = int(float(parts[1]))
                x, y, w, h = (float(p) for p in parts[2:6])
                score = float(parts[6])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if w <= 0 or h <= 0:
                raise ValueError(f"{path}:{lineno}: non-positive box size")
            frames.setdefault(frame, []).append(
                (obj_id, BoxTLBR(x, y, x + w, y + h), float(np.clip(score, 0.0, 1.0)))
            )
    return frames


class ReplayRun:
    """Replays an external detection stream through the same provider surface.

    Identity embeddings are derived deterministically per ground-truth id when
    features are requested; streams without ids (id == -1) only support the
    feature-less pipeline.
    """

    def __init__(
        self,
        det_frames: dict[int, list[tuple[int, BoxTLBR, float]]],
        stride: int = 4,
        feature_dim: int = 64,
    ):
        if not det_frames:
            raise ValueError("empty detection stream")
        self.stride = stride
        self.feature_dim = feature_dim
        self.n_frames = max(det_frames)
        max_x = max(
            (b.x2 for dets in det_frames.values() for _, b, _ in dets), default=stride
        )
        max_y = max(
            (b.y2 for dets in det_frames.values() for _, b, _ in dets), default=stride
        )
        self.gw = int(math.ceil((max_x + 2 * stride) / stride))
        self.gh = int(math.ceil((max_y + 2 * stride) / stride))
        self._frames = det_frames
        self._embeddings: dict[int, np.ndarray] = {}

    def _embedding(self, obj_id: int) -> np.ndarray:
        if obj_id < 0:
            raise ValueError(
                "detection stream has no object ids; features are unavailable "
                "(use the feature-less tracker variant)"
            )
        if obj_id not in self._embeddings:
            rng = np.random.default_rng([0x1D5EED, obj_id])
            v = rng.normal(size=self.feature_dim)
            self._embeddings[obj_id] = v / np.linalg.norm(v)
        return self._embeddings[obj_id]

    def frame_truth(self, t: int) -> list[TruthObject]:
        out = []
        for obj_id, box, score in self._frames.get(t, []):
            out.append(TruthObject(agent_id=obj_id, box=box, score=score))
        return out

    def render(self, t: int, with_features: bool = True) -> SensorMaps:
        objects = self.frame_truth(t)
        if with_features:
            for obj in objects:
                obj.feature = self._embedding(obj.agent_id)
        return render_maps(
            objects, (self.gh, self.gw), self.stride, self.feature_dim,
            with_features=with_features,
        )


# --- templates --------------------------------------------------------------


def _basis(k: int, dim: int) -> np.ndarray:
    e = np.zeros(dim)
    e[k] = 1.0
    return e


def _crossing_pair(
    rng: np.random.Generator,
    ids: tuple[int, int],
    dim: int,
    xc: float,
    ym: float,
    f0: int,
    fc: int,
    f1: int,
) -> list[AgentSpec]:
    """Two agents drifting the same way horizontally while swapping vertical sides.

    The faster agent overtakes the slower one around frame fc; both bend at the
    meeting point so a coasting motion model diverges from the truth afterwards.
    """
    id_a, id_b = ids
    pre, post = fc - f0, f1 - fc
    wa, ha = rng.uniform(16, 20), rng.uniform(40, 48)
    wb, hb = rng.uniform(16, 22), rng.uniform(40, 50)
    dx0 = rng.uniform(0, 4)
    dy0 = rng.uniform(-3, 3)
    vya = rng.uniform(0.8, 1.1)    # A crosses downward
    vyb = -rng.uniform(0.8, 1.1)   # B crosses upward
    va = rng.uniform(3.6, 4.4)
    vb = va - rng.uniform(1.2, 1.5)
    # bends at the crossing; sometimes nearly straight
    vya2 = vya + rng.uniform(-1.0, 0.4)
    vyb2 = vyb + rng.uniform(-0.4, 1.0)
    va2 = va + rng.uniform(-0.4, 0.4)
    vb2 = vb + rng.uniform(-0.4, 0.4)
    a = AgentSpec(
        agent_id=id_a,
        embedding=_basis(id_a, dim),
        waypoints=(
            (f0, xc - va * pre, ym - vya * pre),
            (fc, xc, ym),
            (f1, xc + va2 * post, ym + vya2 * post),
        ),
        width=wa,
        height=ha,
        present_from=f0,
        present_to=f1,
    )
    b = AgentSpec(
        agent_id=id_b,
        embedding=_basis(id_b, dim),
        waypoints=(
            (f0, xc + dx0 - vb * pre, ym + dy0 - vyb * pre),
            (fc, xc + dx0, ym + dy0),
            (f1, xc + dx0 + vb2 * post, ym + dy0 + vyb2 * post),
        ),
        width=wb,
        height=hb,
        present_from=f0,
        present_to=f1,
    )
    return [a, b]


def template_crossing(seed: int, feature_dim: int = 64) -> ScenarioSpec:
    """Two agents swapping sides over 40 frames, meeting near frame 20."""
    rng = np.random.default_rng([0xC505, seed])
    ym = 120 + rng.uniform(-8, 8)
    xc = 126 + rng.uniform(-4, 4)
    agents = _crossing_pair(rng, (0, 1), feature_dim, xc, ym, 1, 20, 40)
    return ScenarioSpec(
        width=256,
        height=256,
        n_frames=40,
        agents=tuple(agents),
        obs_noise_std=0.6,
        feat_noise_std=0.15,
        feature_dim=feature_dim,
        seed=seed,
    )


def template_crowded(seed: int, feature_dim: int = 64, n_agents: int = 12) -> ScenarioSpec:
    """Crossing pairs stacked over three lanes and staggered time waves.

    Defaults to twelve agents (six pairs, two waves). n_agents must be even and
    at least two; extra pairs open further waves, stretching the clip.
    """
    if n_agents < 2 or n_agents % 2:
        raise ScenarioError(f"n_agents must be an even count >= 2, got {n_agents}")
    rng = np.random.default_rng([0xC80D, seed])
    agents: list[AgentSpec] = []
    n_pairs = n_agents // 2
    n_waves = (n_pairs + 2) // 3
    next_id = 0
    last_frame = 50
    for wave in range(n_waves):
        f0 = 1 + 20 * wave
        f1 = f0 + 29
        last_frame = max(last_frame, f1)
        for lane in range(min(3, n_pairs - 3 * wave)):
            # lanes are offset in x as well as y so neighbouring pairs never
            # share a corridor even at spawn, when the crossing spread peaks
            ym = 70.0 + 90.0 * lane + rng.uniform(-4, 4)
            xc = 100.0 + 72.0 * lane + rng.uniform(-4, 4)
            fc = f0 + 19
            agents.extend(
                _crossing_pair(
                    rng, (next_id, next_id + 1), feature_dim, xc, ym, f0, fc, f1
                )
            )
            next_id += 2
    return ScenarioSpec(
        width=320,
        height=320,
        n_frames=last_frame,
        agents=tuple(agents),
        obs_noise_std=0.6,
        feat_noise_std=0.15,
        feature_dim=feature_dim,
        seed=seed,
    )


def template_sparse(seed: int, feature_dim: int = 64) -> ScenarioSpec:
    """Three agents: one glancing pair plus a loner that never overlaps anyone."""
    rng = np.random.default_rng([0x5BA5, seed])
    ym = 88 + rng.uniform(-6, 6)
    xc = 126 + rng.uniform(-4, 4)
    pair = _crossing_pair(rng, (0, 1), feature_dim, xc, ym, 1, 20, 40)
    # widen the vertical miss so the peak overlap stays mild
    loner_y = 210 + rng.uniform(-4, 4)
    loner = AgentSpec(
        agent_id=2,
        embedding=_basis(2, feature_dim),
        waypoints=((1, 36.0, loner_y), (40, 220.0, loner_y + rng.uniform(-6, 6))),
        width=rng.uniform(16, 20),
        height=rng.uniform(40, 48),
    )
    return ScenarioSpec(
        width=256,
        height=256,
        n_frames=40,
        agents=tuple(pair) + (loner,),
        obs_noise_std=0.6,
        feat_noise_std=0.15,
        feature_dim=feature_dim,
        seed=seed,
    )


TEMPLATES = {
    "crossing": template_crossing,
    "crowded": template_crowded,
    "sparse": template_sparse,
}


def make_template(name: str, seed: int, **kwargs) -> ScenarioSpec:
    if name not in TEMPLATES:
        raise ScenarioError(f"unknown template {name!r}; have {sorted(TEMPLATES)}")
    return TEMPLATES[name](seed, **kwargs)
