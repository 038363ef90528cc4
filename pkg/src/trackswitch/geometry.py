"""Axis-aligned box types and the small pure helpers everything else builds on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoxTLBR:
    """Box as top-left / bottom-right corners. Zero-area boxes are legal values."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"inverted box: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)


@dataclass(frozen=True)
class BoxXYAH:
    """Box as center, aspect ratio (w/h) and height, the motion-model parameterization."""

    cx: float
    cy: float
    a: float
    h: float

    def __post_init__(self) -> None:
        if self.h <= 0 or self.a <= 0:
            raise ValueError(f"non-positive aspect or height: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.a, self.h], dtype=float)


@dataclass(frozen=True)
class GridCell:
    """Integer cell of a strided grid plus the fractional offset inside the cell."""

    gx: int
    gy: int
    offx: float
    offy: float


def iou(a: BoxTLBR, b: BoxTLBR) -> float:
    """Intersection over union. Degenerate zero-area inputs yield 0."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (N,4) and (M,4) tlbr arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def center(box: BoxTLBR) -> tuple[float, float]:
    return ((box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0)


def box_size(box: BoxTLBR) -> tuple[float, float]:
    return (box.x2 - box.x1, box.y2 - box.y1)


def box_from_center(cx: float, cy: float, w: float, h: float) -> BoxTLBR:
    return BoxTLBR(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def to_grid(cx: float, cy: float, stride: int) -> GridCell:
    """Map a pixel-space center onto the strided grid.

    The fractional part satisfies 0 <= off < 1 and (g + off) * stride
    reconstructs the input exactly.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if cx < 0 or cy < 0:
        raise ValueError(f"center outside grid: ({cx}, {cy})")
    fx = cx / stride
    fy = cy / stride
    gx = int(np.floor(fx))
    gy = int(np.floor(fy))
    return GridCell(gx=gx, gy=gy, offx=fx - gx, offy=fy - gy)


def smooth_l1(a, b):
    """Elementwise smooth-L1: quadratic inside the unit band, linear outside."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    out = np.where(d < 1.0, 0.5 * d * d, d - 0.5)
    if out.ndim == 0:
        return float(out)
    return out


def smooth_l1_grad(a, b):
    """d/da of smooth_l1(a, b); sign(d) on the linear branch, d on the quadratic one."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    out = np.where(np.abs(d) < 1.0, d, np.sign(d))
    if out.ndim == 0:
        return float(out)
    return out


def tlbr_to_xyah(box: BoxTLBR) -> BoxXYAH:
    w, h = box_size(box)
    if h <= 0:
        raise ValueError(f"cannot convert zero-height box: {box}")
    cx, cy = center(box)
    return BoxXYAH(cx=cx, cy=cy, a=w / h, h=h)


def xyah_to_tlbr(box: BoxXYAH) -> BoxTLBR:
    w = box.a * box.h
    return box_from_center(box.cx, box.cy, w, box.h)
