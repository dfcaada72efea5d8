"""Oriented-bounding-box primitives: fitting, corners, normals, overlap, IoU.

World convention used throughout the package: z-up, ground plane at z = 0,
gravity along -z. All lengths are meters. Every function here is pure;
seeded randomness is passed explicitly and never read from global state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloud

MIN_HALF_EXTENT = 1e-4
ROTATION_TOL = 1e-9
DEFAULT_MC_SAMPLES = 4096
DEFAULT_MC_SEED = 0

# Canonical corner ordering: index i in 0..7 carries the local sign pattern
# ((i>>2)&1, (i>>1)&1, i&1), bit 1 -> +1 and bit 0 -> -1. The ordering is part
# of the node-feature and file contract; never reorder.
CORNER_SIGNS = np.array(
    [[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)], dtype=float
) * 2.0 - 1.0
CORNER_SIGNS.flags.writeable = False

# Face normals in the local frame, fixed order (+x,-x,+y,-y,+z,-z).
FACE_NORMALS_LOCAL = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=float,
)
FACE_NORMALS_LOCAL.flags.writeable = False


def rot_x(angle: float) -> np.ndarray:
    """Rotation about the x axis; +angle turns +y toward +z."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(angle: float) -> np.ndarray:
    """Rotation about the y axis; +angle turns +z toward +x."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(angle: float) -> np.ndarray:
    """Rotation about the z axis (yaw); +angle turns +x toward +y."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rotation by ``angle`` about an arbitrary unit axis (Rodrigues form)."""
    u = np.asarray(axis, dtype=float).reshape(3)
    u = u / np.linalg.norm(u)
    k = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def yaw_of(rotation: np.ndarray) -> float:
    """Yaw angle of the rotated local +x axis, projected to the ground plane."""
    return float(np.arctan2(rotation[1, 0], rotation[0, 0]))


def project_to_yaw(rotation: np.ndarray) -> np.ndarray:
    """Nearest yaw-only rotation (keeps the heading of the local +x axis)."""
    return rot_z(yaw_of(rotation))


def _check_rotation(r: np.ndarray) -> None:
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > ROTATION_TOL:
        raise ValueError(f"rotation determinant {det!r} != +1")


@dataclass(frozen=True)
class OrientedBox:
    """Box with center, strictly positive half-extents, and a rotation matrix.

    Half-extents below ``MIN_HALF_EXTENT`` are clamped up to that floor at
    construction so downstream math never sees a zero-thickness box.
    Instances are immutable; the stored arrays are marked read-only.
    """

    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3).copy()
        half = np.asarray(self.half_extents, dtype=float).reshape(3).copy()
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3).copy()
        if not np.all(np.isfinite(center)):
            raise ValueError("center has non-finite entries")
        if not np.all(np.isfinite(half)) or np.any(half <= 0.0):
            raise ValueError(f"half_extents must be strictly positive, got {half}")
        half = np.maximum(half, MIN_HALF_EXTENT)
        _check_rotation(rotation)
        for arr in (center, half, rotation):
            arr.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extents", half)
        object.__setattr__(self, "rotation", rotation)

    @classmethod
    def axis_aligned(cls, center, half_extents) -> "OrientedBox":
        return cls(center, half_extents, np.eye(3))


def box_volume(box: OrientedBox) -> float:
    return float(8.0 * np.prod(box.half_extents))


def obb_corners(box: OrientedBox) -> np.ndarray:
    """The 8 corners in canonical order, shape (8, 3).

    Corner i = center + R @ (signs_i * half_extents) with the sign pattern
    from ``CORNER_SIGNS``.
    """
    return box.center + (CORNER_SIGNS * box.half_extents) @ box.rotation.T


def obb_face_normals(box: OrientedBox) -> np.ndarray:
    """Unit outward face normals in world frame, shape (6, 3).

    Fixed order: local +x, -x, +y, -y, +z, -z.
    """
    return FACE_NORMALS_LOCAL @ box.rotation.T


def transform_box(box: OrientedBox, rotation: np.ndarray, translation) -> OrientedBox:
    """Apply the rigid motion p -> R p + t to the box."""
    t = np.asarray(translation, dtype=float).reshape(3)
    return OrientedBox(
        center=rotation @ box.center + t,
        half_extents=box.half_extents,
        rotation=rotation @ box.rotation,
    )


def translate_box(box: OrientedBox, translation) -> OrientedBox:
    t = np.asarray(translation, dtype=float).reshape(3)
    return OrientedBox(box.center + t, box.half_extents, box.rotation)


def _convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull (Andrew's monotone chain), counter-clockwise, no repeats."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def build(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2:
                a, b = out[-2], out[-1]
                if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _min_area_angle(hull: np.ndarray) -> float:
    """Orientation of the minimum-area bounding rectangle of a hull, in [0, pi/2)."""
    edges = np.roll(hull, -1, axis=0) - hull
    best_angle, best_area = 0.0, np.inf
    for e in edges:
        angle = float(np.arctan2(e[1], e[0])) % (np.pi / 2)
        c, s = np.cos(angle), np.sin(angle)
        rotated = hull @ np.array([[c, -s], [s, c]])
        area = float(np.ptp(rotated[:, 0]) * np.ptp(rotated[:, 1]))
        if area < best_area - 1e-15:
            best_area, best_angle = area, angle
    return best_angle


def _plane_angle(points_2d: np.ndarray) -> float:
    """Principal direction of 2D points as an angle in (-pi, pi].

    The rectangle orientation comes from the minimum-area bounding rectangle
    of the convex hull (far lower angular noise on finite samples than the
    raw covariance eigenvector, whose error blows up for near-square
    footprints). PCA of the covariance still decides which of the four
    equivalent rectangle axes to report: the returned angle is the
    representative closest to the dominant eigenvector, sign-disambiguated by
    forcing that eigenvector's largest-magnitude component positive, so fits
    are deterministic.
    """
    centered = points_2d - points_2d.mean(axis=0)
    cov = centered.T @ centered / len(centered)
    if float(np.trace(cov)) < 1e-18:
        raise DegenerateCloud("all points coincide in this projection plane")
    _, vecs = np.linalg.eigh(cov)
    v = vecs[:, -1]
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    pca_angle = float(np.arctan2(v[1], v[0]))

    hull = _convex_hull_2d(points_2d)
    if len(hull) < 3:
        # Rank-1 projection: the dominant eigenvector is the line direction.
        return pca_angle
    rect = _min_area_angle(hull)
    # Snap to the mod-90 representative nearest the PCA direction.
    offset = round((pca_angle - rect) / (np.pi / 2))
    return rect + offset * (np.pi / 2)


def fit_obb_pca(points: np.ndarray) -> OrientedBox:
    """Fit an oriented box via per-plane 2D PCA of the projected points.

    The orientation about each world axis comes from the principal direction
    of the points projected onto the perpendicular plane (yz plane for the
    x-axis angle, xz for y, xy for z). The three angles compose as
    Rz @ Ry @ Rx; extents and center are the axis-aligned span of the
    de-rotated points, mapped back to world frame. The fitted box contains
    every input point by construction.

    Args:
        points: (N, 3) array, N >= 4 finite points.

    Raises:
        DegenerateCloud: if any projected covariance has rank 0; the caller
            may substitute an identity orientation for that axis.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")

    # Angle about z from the xy projection, about y from xz, about x from yz.
    # Each later angle is measured on the cloud de-rotated by the earlier
    # ones, which keeps small errors in one plane from inflating the spans
    # measured in the others.
    theta_z = _plane_angle(pts[:, [0, 1]])
    q = pts @ rot_z(theta_z)  # rows become Rz(-theta_z) @ p
    theta_y = _plane_angle(q[:, [0, 2]])
    q = q @ rot_y(-theta_y)
    theta_x = _plane_angle(q[:, [1, 2]])
    rotation = rot_z(theta_z) @ rot_y(-theta_y) @ rot_x(theta_x)

    local = pts @ rotation  # rows become R^T @ p
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    half = np.maximum((hi - lo) / 2.0, MIN_HALF_EXTENT)
    center_local = (hi + lo) / 2.0
    return OrientedBox(rotation @ center_local, half, rotation)


def points_in_box(points: np.ndarray, box: OrientedBox, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of points inside the (closed) box, with boundary tolerance."""
    local = (points - box.center) @ box.rotation
    return np.all(np.abs(local) <= box.half_extents + tol, axis=1)


def sample_in_box(box: OrientedBox, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in the box interior, shape (n, 3)."""
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * box.half_extents
    return local @ box.rotation.T + box.center


def mc_overlap_volume(
    a: OrientedBox,
    b: OrientedBox,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = DEFAULT_MC_SEED,
) -> float:
    """Monte-Carlo estimate of the intersection volume of two boxes.

    Draws ``samples`` points uniformly inside ``a`` and returns
    vol(a) * hit fraction in ``b``. Deterministic for a fixed seed.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = sample_in_box(a, samples, rng)
    hits = int(np.count_nonzero(points_in_box(pts, b)))
    return box_volume(a) * hits / samples


def _box_key(box: OrientedBox) -> tuple:
    return tuple(box.center) + tuple(box.half_extents) + tuple(box.rotation.ravel())


def _canonical_pair(a: OrientedBox, b: OrientedBox) -> tuple[OrientedBox, OrientedBox]:
    # Fixed argument ordering so seeded sampling makes pair metrics symmetric.
    return (a, b) if _box_key(a) <= _box_key(b) else (b, a)


def iou3d(
    a: OrientedBox,
    b: OrientedBox,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = DEFAULT_MC_SEED,
) -> float:
    """3D intersection-over-union, Monte-Carlo overlap over exact union."""
    first, second = _canonical_pair(a, b)
    overlap = mc_overlap_volume(first, second, samples=samples, seed=seed)
    union = box_volume(a) + box_volume(b) - overlap
    return overlap / union if union > 0 else 0.0


def _bev_bounds(box: OrientedBox) -> tuple[np.ndarray, np.ndarray]:
    xy = obb_corners(box)[:, :2]
    return xy.min(axis=0), xy.max(axis=0)


def iou2d_bev(a: OrientedBox, b: OrientedBox) -> float:
    """Bird's-eye-view IoU of the axis-aligned bounds of the projected corners.

    Exact (no sampling): both footprints are reduced to axis-aligned 2D boxes.
    """
    lo_a, hi_a = _bev_bounds(a)
    lo_b, hi_b = _bev_bounds(b)
    inter_dims = np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)
    if np.any(inter_dims <= 0):
        return 0.0
    inter = float(np.prod(inter_dims))
    area_a = float(np.prod(hi_a - lo_a))
    area_b = float(np.prod(hi_b - lo_b))
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def surface_grid(box: OrientedBox, samples_per_face: int) -> np.ndarray:
    """Deterministic grid of points on the 6 faces, shape (6*n*n, 3)."""
    if samples_per_face < 1:
        raise ValueError("samples_per_face must be >= 1")
    n = samples_per_face
    h = box.half_extents

    def lin(extent: float) -> np.ndarray:
        return np.linspace(-extent, extent, n) if n > 1 else np.zeros(1)

    points = []
    for axis in range(3):
        u_axis, v_axis = [i for i in range(3) if i != axis]
        u, v = np.meshgrid(lin(h[u_axis]), lin(h[v_axis]), indexing="ij")
        for sign in (1.0, -1.0):
            face = np.zeros((n * n, 3))
            face[:, axis] = sign * h[axis]
            face[:, u_axis] = u.ravel()
            face[:, v_axis] = v.ravel()
            points.append(face)
    local = np.concatenate(points, axis=0)
    return local @ box.rotation.T + box.center


def distance_to_box(points: np.ndarray, box: OrientedBox) -> np.ndarray:
    """Euclidean distance from each point to the solid box (0 inside)."""
    local = (points - box.center) @ box.rotation
    clamped = np.clip(local, -box.half_extents, box.half_extents)
    return np.linalg.norm(local - clamped, axis=1)


def min_surface_distance(a: OrientedBox, b: OrientedBox, samples_per_face: int = 8) -> float:
    """Minimum distance between the box surfaces, from grid samples.

    Each box's faces are sampled on a deterministic grid and measured against
    the other box as a solid, so touching or overlapping boxes return 0
    exactly and the error for separated boxes is bounded by the grid spacing.
    """
    d_ab = distance_to_box(surface_grid(a, samples_per_face), b).min()
    d_ba = distance_to_box(surface_grid(b, samples_per_face), a).min()
    return float(min(d_ab, d_ba))
