"""Synthetic labeled scenes: furniture plus a boxed human, and corruptions.

Plausible scenes are constructed so that every gravity-supported element
rests on its support (gap < 1e-3 m) and nothing interpenetrates; corruptions
then inject one controlled violation (floating, interpenetration, tilt, or a
scale anomaly) to create their implausible counterparts. Generation is a
pure function of (config, seed).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import PlacementFailure, TargetIsFloor
from .geometry import (
    OrientedBox,
    box_volume,
    mc_overlap_volume,
    min_surface_distance,
    obb_corners,
    rot_z,
    rotation_about_axis,
    sample_in_box,
)
from .metrics import max_support_gap, penetration_volume
from .scenegraph import NodeKind, Scene, SceneElement

CORRUPTION_KINDS = ("float", "penetrate", "tilt", "scale")

# Default magnitude ranges: meters for float/penetrate, radians for tilt;
# scale draws one of the two anomaly ratios.
MAGNITUDE_RANGES = {"float": (0.1, 0.5), "penetrate": (0.1, 0.3), "tilt": (0.3, 1.2)}
SCALE_RATIOS = (0.3, 3.0)

MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass
class ClassSpec:
    """Furniture class with per-axis full-extent ranges (meters)."""

    class_id: int
    name: str
    extent_ranges: tuple  # ((lo, hi),) * 3
    placement: str = "on_floor"
    sittable: bool = False

    def __post_init__(self):
        for lo, hi in self.extent_ranges:
            if lo <= 0 or hi < lo:
                raise ValueError(f"bad extent range ({lo}, {hi}) for {self.name}")


DEFAULT_CLASS_SPECS = (
    ClassSpec(0, "floor", ((4.0, 6.0), (4.0, 6.0), (0.1, 0.1))),
    ClassSpec(1, "chair", ((0.42, 0.55), (0.42, 0.55), (0.40, 0.52)), sittable=True),
    ClassSpec(2, "table", ((0.9, 1.6), (0.6, 1.1), (0.65, 0.78))),
    ClassSpec(3, "sofa", ((1.5, 2.2), (0.85, 1.05), (0.40, 0.50)), sittable=True),
    ClassSpec(4, "bed", ((1.4, 1.9), (1.95, 2.15), (0.45, 0.60)), sittable=True),
)

# Body segment full extents (meters); jittered +-10% per scene.
SEGMENT_EXTENTS = {
    "left_foot": (0.24, 0.095, 0.075),
    "right_foot": (0.24, 0.095, 0.075),
    "pelvis": (0.34, 0.26, 0.22),
    "torso": (0.36, 0.24, 0.52),
    "left_hand": (0.18, 0.09, 0.05),
    "right_hand": (0.18, 0.09, 0.05),
}


@dataclass
class CorruptionSpec:
    """One implausibility injection: what to break, how hard, and where."""

    kind: str
    magnitude: float
    target: int | str = "random"

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.magnitude <= 0:
            raise ValueError("magnitude must be > 0")


@dataclass
class SynthConfig:
    classes: tuple = DEFAULT_CLASS_SPECS
    pose_mode: str = "mixed"  # standing | sitting | mixed
    n_objects: tuple[int, int] = (2, 4)
    include_human: bool = True
    cloud_points: int = 0  # >0 samples segment clouds and refits boxes
    seed: int = 0
    implausible_fraction: float = 0.5
    corruption_mix: dict = field(
        default_factory=lambda: {k: 0.25 for k in CORRUPTION_KINDS}
    )

    def __post_init__(self):
        if self.pose_mode not in ("standing", "sitting", "mixed"):
            raise ValueError(f"unknown pose mode {self.pose_mode!r}")
        if not 0.0 <= self.implausible_fraction <= 1.0:
            raise ValueError("implausible_fraction must be in [0, 1]")
        total = sum(self.corruption_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"corruption mix sums to {total}, expected 1")
        for kind in self.corruption_mix:
            if kind not in CORRUPTION_KINDS:
                raise ValueError(f"unknown corruption kind {kind!r} in mix")


def _footprint_axes_corners(box: OrientedBox):
    corners = obb_corners(box)[:, :2]
    r = box.rotation
    axes = np.array([[r[0, 0], r[1, 0]], [r[0, 1], r[1, 1]]])
    return axes, corners


def upright_boxes_overlap(a: OrientedBox, b: OrientedBox, margin: float = 1e-9) -> bool:
    """Exact overlap test for yaw-only boxes: z intervals plus 2D SAT."""
    za = (obb_corners(a)[:, 2].min(), obb_corners(a)[:, 2].max())
    zb = (obb_corners(b)[:, 2].min(), obb_corners(b)[:, 2].max())
    if za[0] >= zb[1] - margin or zb[0] >= za[1] - margin:
        return False
    axes_a, ca = _footprint_axes_corners(a)
    axes_b, cb = _footprint_axes_corners(b)
    for axis in np.concatenate([axes_a, axes_b]):
        pa = ca @ axis
        pb = cb @ axis
        if pa.min() >= pb.max() - margin or pb.min() >= pa.max() - margin:
            return False
    return True


def _draw_extents(rng: np.random.Generator, spec: ClassSpec) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) for lo, hi in spec.extent_ranges]) / 2.0


def _upright_box(cx, cy, half, yaw, bottom=0.0) -> OrientedBox:
    return OrientedBox([cx, cy, bottom + half[2]], half, rot_z(yaw))


def _segment_half(rng, name) -> np.ndarray:
    return np.array(SEGMENT_EXTENTS[name]) * rng.uniform(0.9, 1.1) / 2.0


def _human_standing(rng, base_index):
    """Segment boxes (in a local frame facing +x) and their support wiring."""
    foot_l = _segment_half(rng, "left_foot")
    foot_r = _segment_half(rng, "right_foot")
    pelvis = _segment_half(rng, "pelvis")
    torso = _segment_half(rng, "torso")
    hand_l = _segment_half(rng, "left_hand")
    hand_r = _segment_half(rng, "right_hand")
    pelvis_z = rng.uniform(0.86, 0.98)
    parts = [
        ("left_foot", np.array([0.0, 0.10, foot_l[2]]), foot_l),
        ("right_foot", np.array([0.0, -0.10, foot_r[2]]), foot_r),
        ("pelvis", np.array([0.0, 0.0, pelvis_z]), pelvis),
        ("torso", np.array([0.0, 0.0, pelvis_z + pelvis[2] + torso[2]]), torso),
        ("left_hand", np.array([0.05, 0.30, 0.80]), hand_l),
        ("right_hand", np.array([0.05, -0.30, 0.80]), hand_r),
    ]
    supports = ["floor", "floor", None, base_index + 2, None, None]
    return parts, supports


def _human_sitting(rng, seat: OrientedBox, base_index):
    """Pelvis on the seat's top face, feet on the floor in front of it."""
    foot_l = _segment_half(rng, "left_foot")
    foot_r = _segment_half(rng, "right_foot")
    pelvis = _segment_half(rng, "pelvis")
    torso = _segment_half(rng, "torso")
    seat_top = float(obb_corners(seat)[:, 2].max())
    front = seat.half_extents[0] + foot_l[0] + rng.uniform(0.05, 0.15)
    parts = [
        ("left_foot", np.array([front, 0.10, foot_l[2]]), foot_l),
        ("right_foot", np.array([front, -0.10, foot_r[2]]), foot_r),
        ("pelvis", np.array([0.0, 0.0, seat_top + pelvis[2]]), pelvis),
        ("torso", np.array([0.0, 0.0, seat_top + 2 * pelvis[2] + torso[2]]), torso),
    ]
    supports = ["floor", "floor", None, base_index + 2]  # pelvis support patched to seat
    return parts, supports


def _place_parts(parts, yaw, cx, cy):
    rot = rot_z(yaw)
    placed = []
    for name, local_center, half in parts:
        center = rot @ np.array([local_center[0], local_center[1], 0.0])
        center = np.array([cx + center[0], cy + center[1], local_center[2]])
        placed.append((name, OrientedBox(center, half, rot)))
    return placed


def sample_scene(config: SynthConfig, seed) -> Scene:
    """One plausible scene: floor, furniture on the floor, optional human.

    Furniture is rejection-sampled against mutual penetration; the human's
    segment boxes are placed standing (feet on the floor) or sitting (pelvis
    on a seat's top face) and rejected against the furniture. Deterministic
    for a fixed (config, seed).

    Raises:
        PlacementFailure: after MAX_PLACEMENT_ATTEMPTS rejected layouts.
    """
    rng = np.random.default_rng(seed)
    pose = config.pose_mode
    if pose == "mixed":
        pose = "sitting" if rng.uniform() < 0.5 else "standing"

    specs = {s.name: s for s in config.classes}
    floor_half = _draw_extents(rng, specs["floor"])
    floor_box = OrientedBox([0.0, 0.0, -floor_half[2]], floor_half, np.eye(3))
    elements = [SceneElement(NodeKind.object("floor"), floor_box)]
    supports: list = [None]

    furniture_specs = [s for s in config.classes if s.name != "floor"]
    n_obj = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
    chosen = [furniture_specs[i] for i in rng.integers(0, len(furniture_specs), n_obj)]
    if (
        config.include_human
        and pose == "sitting"
        and not any(s.sittable for s in chosen)
    ):
        sittables = [s for s in furniture_specs if s.sittable]
        chosen[int(rng.integers(0, len(chosen)))] = sittables[
            int(rng.integers(0, len(sittables)))
        ]

    # Draw extents first and place the largest footprints while the floor is
    # still empty; small items fill the gaps far more reliably.
    drawn = [(spec, _draw_extents(rng, spec)) for spec in chosen]
    drawn.sort(key=lambda item: -(item[1][0] * item[1][1]))

    placed_boxes: list[OrientedBox] = []
    for spec, half in drawn:
        radius = float(np.hypot(half[0], half[1])) + 0.05
        for attempt in range(MAX_PLACEMENT_ATTEMPTS):
            cx = rng.uniform(-(floor_half[0] - radius), floor_half[0] - radius)
            cy = rng.uniform(-(floor_half[1] - radius), floor_half[1] - radius)
            box = _upright_box(cx, cy, half, rng.uniform(-np.pi, np.pi))
            if not any(upright_boxes_overlap(box, other) for other in placed_boxes):
                break
        else:
            raise PlacementFailure(f"could not place {spec.name}")
        placed_boxes.append(box)
        elements.append(SceneElement(NodeKind.object(spec.name), box))
        supports.append("floor")

    if config.include_human:
        base_index = len(elements)
        human = None
        if pose == "sitting":
            seat_indices = [
                i
                for i, e in enumerate(elements)
                if e.kind.kind == "object" and specs[e.kind.name].sittable
            ]
            for si in rng.permutation(seat_indices):
                seat = elements[int(si)].box
                parts, seg_supports = _human_sitting(rng, seat, base_index)
                seg_supports[2] = int(si)
                yaw = float(np.arctan2(seat.rotation[1, 0], seat.rotation[0, 0]))
                placed = _place_parts(parts, yaw, seat.center[0], seat.center[1])
                # The pelvis touches the seat top; touching is not overlap.
                clear = not any(
                    upright_boxes_overlap(box, other)
                    for _, box in placed
                    for other in placed_boxes
                )
                if clear:
                    human = (placed, seg_supports)
                    break
            if human is None:
                raise PlacementFailure("no seat admits a sitting human")
        else:
            parts, seg_supports = _human_standing(rng, base_index)
            reach = 0.55  # generous radius of the segment group footprint
            for attempt in range(MAX_PLACEMENT_ATTEMPTS):
                cx = rng.uniform(-(floor_half[0] - reach), floor_half[0] - reach)
                cy = rng.uniform(-(floor_half[1] - reach), floor_half[1] - reach)
                placed = _place_parts(parts, rng.uniform(-np.pi, np.pi), cx, cy)
                if not any(
                    upright_boxes_overlap(box, other)
                    for _, box in placed
                    for other in placed_boxes
                ):
                    human = (placed, seg_supports)
                    break
            if human is None:
                raise PlacementFailure("could not place a standing human")

        placed, seg_supports = human
        for name, box in placed:
            if config.cloud_points > 0:
                cloud = sample_in_box(box, config.cloud_points, rng)
                elements.append(SceneElement.from_cloud(NodeKind.segment(name), cloud))
            else:
                elements.append(SceneElement(NodeKind.segment(name), box))
        supports.extend(seg_supports)

    return Scene(
        elements=elements,
        label="plausible",
        seed=seed if isinstance(seed, int) else None,
        supports=supports,
        pose=pose if config.include_human else None,
    )


def _nearest_neighbor(scene: Scene, target: int) -> int | None:
    """Closest other element by surface distance, ties by center distance.

    Prefers non-floor neighbors; falls back to the floor when nothing else
    exists. Touching elements (distance 0) rank first, so grounded targets
    sink into their support.
    """
    t_box = scene.elements[target].box
    candidates = []
    for i, e in enumerate(scene.elements):
        if i == target:
            continue
        d = min_surface_distance(t_box, e.box, samples_per_face=4)
        c = float(np.linalg.norm(e.box.center - t_box.center))
        candidates.append((e.is_floor, round(d, 6), c, i))
    if not candidates:
        return None
    non_floor = [c for c in candidates if not c[0]]
    touching = [c for c in non_floor if c[1] <= 1e-6]
    pool = touching or candidates  # any touching non-floor first, else all
    pool = sorted(pool, key=lambda c: (c[1], c[2], c[3]))
    return pool[0][3]


def _with_box(scene: Scene, index: int, box: OrientedBox, label: str, corruption: dict) -> Scene:
    elements = list(scene.elements)
    old = elements[index]
    elements[index] = SceneElement(kind=old.kind, box=box, cloud=None)
    return replace(
        scene, elements=elements, label=label, corruption=corruption
    )


def corrupt_scene(scene: Scene, spec: CorruptionSpec, seed) -> Scene:
    """Apply one corruption to one element; everything else is untouched.

    float: lift the target along +z by magnitude.
    penetrate: translate the target toward its nearest neighbor until their
        overlap volume reaches magnitude^3 (capped at 90% of the smaller box).
    tilt: rotate the target by magnitude about a random horizontal axis.
    scale: multiply the target's half-extents by magnitude (a ratio).

    Raises:
        TargetIsFloor: the floor cannot be corrupted.
    """
    rng = np.random.default_rng(seed)
    if spec.target == "random" or spec.target is None:
        options = [i for i in range(len(scene)) if not scene.elements[i].is_floor]
        if not options:
            raise TargetIsFloor("scene has only a floor element")
        target = int(options[rng.integers(0, len(options))])
    else:
        target = int(spec.target)
        if scene.elements[target].is_floor:
            raise TargetIsFloor("the floor cannot be corrupted")

    box = scene.elements[target].box
    record = {"kind": spec.kind, "magnitude": float(spec.magnitude), "target": target}

    if spec.kind == "float":
        new_box = OrientedBox(
            box.center + np.array([0.0, 0.0, spec.magnitude]),
            box.half_extents,
            box.rotation,
        )
    elif spec.kind == "penetrate":
        neighbor = _nearest_neighbor(scene, target)
        if neighbor is None:
            raise TargetIsFloor("penetrate needs a neighbor element")
        n_box = scene.elements[neighbor].box
        direction = n_box.center - box.center
        span = float(np.linalg.norm(direction))
        if span < 1e-9:
            raise PlacementFailure("target and neighbor centers coincide")
        direction = direction / span
        want = min(
            spec.magnitude**3,
            0.9 * min(box_volume(box), box_volume(n_box)),
        )

        def overlap_at(s: float) -> float:
            moved = OrientedBox(box.center + s * direction, box.half_extents, box.rotation)
            return mc_overlap_volume(moved, n_box, samples=2048, seed=0)

        lo, hi = 0.0, span
        if overlap_at(hi) < want:
            s_final = hi
        else:
            for _ in range(40):
                mid = (lo + hi) / 2.0
                if overlap_at(mid) >= want:
                    hi = mid
                else:
                    lo = mid
            s_final = hi
        new_box = OrientedBox(box.center + s_final * direction, box.half_extents, box.rotation)
        record["neighbor"] = int(neighbor)
    elif spec.kind == "tilt":
        phi = rng.uniform(0.0, 2 * np.pi)
        axis = np.array([np.cos(phi), np.sin(phi), 0.0])
        new_box = OrientedBox(
            box.center, box.half_extents, rotation_about_axis(axis, spec.magnitude) @ box.rotation
        )
    else:  # scale
        new_box = OrientedBox(box.center, box.half_extents * spec.magnitude, box.rotation)

    return _with_box(scene, target, new_box, "implausible", record)


def draw_corruption(rng: np.random.Generator, mix: dict) -> CorruptionSpec:
    """Sample a corruption kind from the mix and a magnitude from its range."""
    kinds = sorted(mix)
    probs = np.array([mix[k] for k in kinds])
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
    if kind == "scale":
        magnitude = float(SCALE_RATIOS[int(rng.integers(0, 2))])
    else:
        lo, hi = MAGNITUDE_RANGES[kind]
        magnitude = float(rng.uniform(lo, hi))
    return CorruptionSpec(kind=kind, magnitude=magnitude)


def _violation(scene: Scene) -> tuple[float, float]:
    return penetration_volume(scene, samples=1024), max_support_gap(scene)


def _is_violating(kind: str, magnitude: float, pen: float, gap: float) -> bool:
    if kind == "float":
        return gap >= 0.45 * magnitude
    if kind == "penetrate":
        return pen >= 0.45 * magnitude**3
    return pen > 1e-5 or gap > 1e-3


@dataclass
class SceneRecord:
    scene: Scene
    index: int
    label: str
    seed: int
    corruption_kind: str = ""
    magnitude: float | None = None
    split: str = "train"

    @property
    def filename(self) -> str:
        return f"scene_{self.index:06d}.json"


def _sample_scene_retrying(config: SynthConfig, index: int) -> Scene:
    # A handful of derived seeds absorbs the rare unplaceable layout without
    # giving up determinism.
    for retry in range(8):
        seed = [config.seed, index] if retry == 0 else [config.seed, index, 3, retry]
        try:
            return sample_scene(config, seed)
        except PlacementFailure:
            continue
    raise PlacementFailure(f"scene {index} failed placement 8 times")


def _make_record(config: SynthConfig, index: int) -> SceneRecord:
    base = _sample_scene_retrying(config, index)
    base.seed = index
    f = config.implausible_fraction
    corrupt = int(np.floor((index + 1) * f)) > int(np.floor(index * f))
    if not corrupt:
        return SceneRecord(scene=base, index=index, label="plausible", seed=index)

    rng = np.random.default_rng([config.seed, index, 1])
    last = None
    for attempt in range(20):
        spec = draw_corruption(rng, config.corruption_mix)
        corrupted = corrupt_scene(base, spec, [config.seed, index, 2, attempt])
        last = (spec, corrupted)
        pen, gap = _violation(corrupted)
        if _is_violating(spec.kind, spec.magnitude, pen, gap):
            break
    spec, corrupted = last
    return SceneRecord(
        scene=corrupted,
        index=index,
        label="implausible",
        seed=index,
        corruption_kind=spec.kind,
        magnitude=spec.magnitude,
    )


def generate_scene_set(config: SynthConfig, count: int) -> list[SceneRecord]:
    """count scenes, alternating plausible/corrupted, with a seeded
    70/15/15 train/val/test split. Parallelism is capped by the
    PLAUSISCENE_THREADS environment variable (default 1)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    workers = int(os.environ.get("PLAUSISCENE_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda i: _make_record(config, i), range(count)))
    else:
        records = [_make_record(config, i) for i in range(count)]

    order = np.random.default_rng([config.seed, 999]).permutation(count)
    n_train = int(count * 0.70)
    n_val = int(count * 0.15)
    for rank, idx in enumerate(order):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_val:
            split = "val"
        else:
            split = "test"
        records[idx].split = split
    return records
