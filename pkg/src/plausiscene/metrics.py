"""Physical plausibility and localization metrics over scenes.

Scores are box-level: human segments are the same granularity the
discriminator consumes, so metric and model agree. Everything is pure and
seeded; scenes can be scored in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NoHumanSegments
from .geometry import (
    OrientedBox,
    box_volume,
    iou2d_bev,
    iou3d,
    mc_overlap_volume,
    min_surface_distance,
    obb_corners,
    points_in_box,
    sample_in_box,
)
from .scenegraph import CONTACT_SEGMENTS, Scene

CONTACT_TAU = 0.02
PENETRATION_SAMPLES = 2048
NON_COLLISION_SAMPLES = 4096


@dataclass
class SceneMetrics:
    non_collision: float | None
    contact: float | None
    penetration_volume: float
    max_support_gap: float
    iou3d: float | None = None
    iou2d: float | None = None


def _aabb(box: OrientedBox) -> tuple[np.ndarray, np.ndarray]:
    corners = obb_corners(box)
    return corners.min(axis=0), corners.max(axis=0)


def penetration_volume(scene: Scene, samples: int = PENETRATION_SAMPLES, seed: int = 0) -> float:
    """Total pairwise overlap volume between scene elements, in m^3.

    Pairs whose axis-aligned bounds are disjoint are skipped; the rest are
    measured with seeded Monte-Carlo sampling, drawing from the smaller box.
    """
    boxes = [e.box for e in scene.elements]
    bounds = [_aabb(b) for b in boxes]
    total = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            lo = np.maximum(bounds[i][0], bounds[j][0])
            hi = np.minimum(bounds[i][1], bounds[j][1])
            if np.any(hi - lo <= 1e-9):
                continue
            a, b = boxes[i], boxes[j]
            if box_volume(b) < box_volume(a):
                a, b = b, a
            total += mc_overlap_volume(a, b, samples=samples, seed=seed)
    return total


def support_gaps(scene: Scene) -> list[float | None]:
    """Vertical clearance of each element above its designated support.

    The designation comes from ``scene.supports`` ("floor", another element's
    index, or None for elements the body holds up). Scenes without a support
    map fall back to: non-floor objects and feet rest on the floor, everything
    else unsupported. Gaps are clamped at 0; penetration is not a gap.
    """
    supports = scene.supports
    if supports is None:
        supports = []
        for e in scene.elements:
            if e.is_floor:
                supports.append(None)
            elif e.kind.kind == "object":
                supports.append("floor")
            elif e.kind.name in ("left_foot", "right_foot"):
                supports.append("floor")
            else:
                supports.append(None)

    gaps: list[float | None] = []
    for e, sup in zip(scene.elements, supports):
        if sup is None:
            gaps.append(None)
            continue
        bottom = obb_corners(e.box)[:, 2].min()
        if sup == "floor":
            ref = 0.0
        else:
            ref = obb_corners(scene.elements[int(sup)].box)[:, 2].max()
        gaps.append(max(0.0, float(bottom - ref)))
    return gaps


def max_support_gap(scene: Scene) -> float:
    gaps = [g for g in support_gaps(scene) if g is not None]
    return max(gaps) if gaps else 0.0


def non_collision_score(scene: Scene, samples: int = NON_COLLISION_SAMPLES, seed: int = 0) -> float:
    """Fraction of human-segment volume outside every object.

    Samples are drawn uniformly inside the segment boxes, allocated
    proportionally to volume. A sample collides if it falls inside any
    non-floor object box or below the floor's top plane (z = 0); the floor
    slab itself is otherwise excluded.
    """
    seg_idx = scene.segment_indices()
    if not seg_idx:
        raise NoHumanSegments("non-collision score needs body segments")
    objects = [scene.elements[i].box for i in scene.object_indices(include_floor=False)]
    has_floor = scene.floor_index is not None

    volumes = np.array([box_volume(scene.elements[i].box) for i in seg_idx])
    shares = volumes / volumes.sum() * samples
    counts = np.floor(shares).astype(int)
    remainder = samples - counts.sum()
    if remainder > 0:
        order = np.argsort(-(shares - counts))
        counts[order[:remainder]] += 1

    hits = 0
    for slot, (idx, n) in enumerate(zip(seg_idx, counts)):
        if n == 0:
            continue
        rng = np.random.default_rng([seed, slot])
        pts = sample_in_box(scene.elements[idx].box, int(n), rng)
        colliding = np.zeros(len(pts), dtype=bool)
        if has_floor:
            colliding |= pts[:, 2] < -1e-9
        for obj in objects:
            colliding |= points_in_box(pts, obj)
        hits += int(np.count_nonzero(colliding))
    return 1.0 - hits / samples


def contact_score(scene: Scene, tau: float = CONTACT_TAU, samples_per_face: int = 8) -> int:
    """1 iff any contact segment (feet, pelvis, hands) is within tau of a
    supporting surface (floor or any object), else 0. Inclusive threshold."""
    contact_idx = [
        i for i in scene.segment_indices() if scene.elements[i].kind.name in CONTACT_SEGMENTS
    ]
    if not contact_idx:
        raise NoHumanSegments("contact score needs contact segments")
    target_boxes = [scene.elements[i].box for i in scene.object_indices(include_floor=True)]
    if not target_boxes:
        return 0
    for i in contact_idx:
        seg = scene.elements[i].box
        for target in target_boxes:
            if min_surface_distance(seg, target, samples_per_face) <= tau:
                return 1
    return 0


def _mean_iou(scene: Scene, reference: Scene) -> tuple[float, float]:
    if len(scene) != len(reference):
        raise LengthMismatch(
            f"scene has {len(scene)} elements, reference {len(reference)}"
        )
    idx = [i for i in range(len(scene)) if not scene.elements[i].is_floor]
    if not idx:
        idx = list(range(len(scene)))
    v3 = [iou3d(scene.elements[i].box, reference.elements[i].box) for i in idx]
    v2 = [iou2d_bev(scene.elements[i].box, reference.elements[i].box) for i in idx]
    return float(np.mean(v3)), float(np.mean(v2))


def scene_metrics(
    scene: Scene,
    reference: Scene | None = None,
    samples: int = NON_COLLISION_SAMPLES,
    seed: int = 0,
) -> SceneMetrics:
    """All physical metrics for one scene, plus IoU against a reference."""
    has_segments = bool(scene.segment_indices())
    nc = non_collision_score(scene, samples=samples, seed=seed) if has_segments else None
    ct = contact_score(scene) if has_segments else None
    m = SceneMetrics(
        non_collision=nc,
        contact=None if ct is None else float(ct),
        penetration_volume=penetration_volume(scene, seed=seed),
        max_support_gap=max_support_gap(scene),
    )
    if reference is not None:
        m.iou3d, m.iou2d = _mean_iou(scene, reference)
    return m


@dataclass
class DatasetMetrics:
    per_scene: list
    mean_non_collision: float | None
    mean_contact: float | None
    mean_penetration_volume: float
    mean_max_support_gap: float
    mean_iou3d: float | None
    mean_iou2d: float | None
    per_class: dict


def dataset_metrics(
    scenes: list[Scene],
    references: list[Scene] | None = None,
    samples: int = NON_COLLISION_SAMPLES,
    seed: int = 0,
) -> DatasetMetrics:
    """Aggregate metrics over a scene set; element correspondence by index."""
    if references is not None and len(references) != len(scenes):
        raise LengthMismatch(
            f"{len(scenes)} scenes vs {len(references)} references"
        )
    per_scene = []
    per_class: dict[str, list[float]] = {}
    for si, scene in enumerate(scenes):
        ref = references[si] if references is not None else None
        per_scene.append(scene_metrics(scene, ref, samples=samples, seed=seed))
        if ref is not None:
            for i, e in enumerate(scene.elements):
                if e.is_floor:
                    continue
                per_class.setdefault(e.kind.name, []).append(
                    iou3d(e.box, ref.elements[i].box)
                )

    def mean_of(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    return DatasetMetrics(
        per_scene=per_scene,
        mean_non_collision=mean_of([m.non_collision for m in per_scene]),
        mean_contact=mean_of([m.contact for m in per_scene]),
        mean_penetration_volume=float(np.mean([m.penetration_volume for m in per_scene])),
        mean_max_support_gap=float(np.mean([m.max_support_gap for m in per_scene])),
        mean_iou3d=mean_of([m.iou3d for m in per_scene]),
        mean_iou2d=mean_of([m.iou2d for m in per_scene]),
        per_class={k: {"mean_iou3d": float(np.mean(v)), "count": len(v)} for k, v in sorted(per_class.items())},
    )
