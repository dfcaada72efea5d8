"""Scene containers and the graph representation fed to the discriminator.

A scene is a list of labeled elements (objects and human body segments), each
carrying an oriented box. The graph is complete and directed: one node per
element with 24 corner features, one edge per ordered pair with 172 features
laid out as [64 pairwise corner distances | 108 face-normal cross components].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    CORNER_SIGNS,
    OrientedBox,
    fit_obb_pca,
    obb_face_normals,
    rot_z,
    transform_box,
    translate_box,
    yaw_of,
)

OBJECT_CLASSES = ("floor", "chair", "table", "sofa", "bed")
BODY_SEGMENTS = ("left_foot", "right_foot", "pelvis", "torso", "left_hand", "right_hand")
# Segments expected to touch a supporting surface while interacting.
CONTACT_SEGMENTS = ("left_foot", "right_foot", "pelvis", "left_hand", "right_hand")

NODE_FEATURE_DIM = 24
EDGE_DIST_DIM = 64
EDGE_NORM_DIM = 108
EDGE_FEATURE_DIM = EDGE_DIST_DIM + EDGE_NORM_DIM

LABELS = ("plausible", "implausible", "unlabeled")


@dataclass(frozen=True)
class NodeKind:
    """Element identity: an object class or a body segment."""

    kind: str  # "object" | "segment"
    ref_id: int

    def __post_init__(self):
        if self.kind == "object":
            vocab = OBJECT_CLASSES
        elif self.kind == "segment":
            vocab = BODY_SEGMENTS
        else:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if not 0 <= self.ref_id < len(vocab):
            raise ValueError(f"{self.kind} id {self.ref_id} outside vocabulary")

    @property
    def name(self) -> str:
        vocab = OBJECT_CLASSES if self.kind == "object" else BODY_SEGMENTS
        return vocab[self.ref_id]

    @classmethod
    def object(cls, name: str) -> "NodeKind":
        return cls("object", OBJECT_CLASSES.index(name))

    @classmethod
    def segment(cls, name: str) -> "NodeKind":
        return cls("segment", BODY_SEGMENTS.index(name))


@dataclass
class SceneElement:
    """One scene element: identity, box, optional source point cloud."""

    kind: NodeKind
    box: OrientedBox
    cloud: np.ndarray | None = None

    @classmethod
    def from_cloud(cls, kind: NodeKind, cloud: np.ndarray) -> "SceneElement":
        """Build the element from vertices; the box is the PCA fit of the cloud."""
        cloud = np.asarray(cloud, dtype=float)
        return cls(kind=kind, box=fit_obb_pca(cloud), cloud=cloud)

    @property
    def is_floor(self) -> bool:
        return self.kind.kind == "object" and self.kind.name == "floor"

    @property
    def is_segment(self) -> bool:
        return self.kind.kind == "segment"


@dataclass
class Scene:
    """Labeled list of elements plus generation metadata.

    ``supports`` records, per element, the surface that should carry it:
    "floor", the index of another element, or None for elements held up by
    the body (e.g. a standing torso's hands).
    """

    elements: list[SceneElement]
    label: str = "unlabeled"
    seed: int | None = None
    corruption: dict | None = None
    supports: list | None = None
    pose: str | None = None

    def __post_init__(self):
        if not self.elements:
            raise ValueError("scene needs at least one element")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if sum(1 for e in self.elements if e.is_floor) > 1:
            raise ValueError("scene may contain at most one floor element")
        if self.supports is not None and len(self.supports) != len(self.elements):
            raise ValueError("supports list must align with elements")

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def floor_index(self) -> int | None:
        for i, e in enumerate(self.elements):
            if e.is_floor:
                return i
        return None

    def object_indices(self, include_floor: bool = True) -> list[int]:
        return [
            i
            for i, e in enumerate(self.elements)
            if e.kind.kind == "object" and (include_floor or not e.is_floor)
        ]

    def segment_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.elements) if e.is_segment]

    def centers(self) -> np.ndarray:
        return np.array([e.box.center for e in self.elements])

    def translated(self, t) -> "Scene":
        t = np.asarray(t, dtype=float).reshape(3)
        elements = [
            SceneElement(
                kind=e.kind,
                box=translate_box(e.box, t),
                cloud=None if e.cloud is None else e.cloud + t,
            )
            for e in self.elements
        ]
        return replace(self, elements=elements)

    def rotated(self, rotation: np.ndarray) -> "Scene":
        """Scene under the global rigid rotation p -> R p (about the origin)."""
        elements = [
            SceneElement(
                kind=e.kind,
                box=transform_box(e.box, rotation, np.zeros(3)),
                cloud=None if e.cloud is None else e.cloud @ rotation.T,
            )
            for e in self.elements
        ]
        return replace(self, elements=elements)


@dataclass
class SceneGraph:
    """Complete directed feature graph of a scene.

    node_features: (P, 24) centroid-centered corners, corner-major x,y,z.
    edge_index:    (E, 2) int array of (source, destination) pairs.
    edge_features: (E, 172) rows of [distances | normal crosses].
    """

    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    node_kinds: list[NodeKind] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[0]


def edge_dist_features(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """Euclidean distance between every corner pair, flattened to 64 values.

    Entry [8*i + j] is the distance from corner i of the source box to
    corner j of the destination box.
    """
    diff = corners_a[:, None, :] - corners_b[None, :, :]
    return np.linalg.norm(diff, axis=2).reshape(EDGE_DIST_DIM)


def edge_norm_features(normals_a: np.ndarray, normals_b: np.ndarray) -> np.ndarray:
    """Cross product of every face-normal pair, flattened to 108 values.

    Entries [3*(6*i + j) : 3*(6*i + j) + 3] hold cross(n_a[i], n_b[j]).
    """
    a = normals_a[:, None, :]
    b = normals_b[None, :, :]
    return np.cross(np.broadcast_to(a, (6, 6, 3)), np.broadcast_to(b, (6, 6, 3))).reshape(
        EDGE_NORM_DIM
    )


def centered_corners(scene: Scene) -> np.ndarray:
    """Corners of every element after subtracting the mean of element centers.

    Centering the centers before adding the rotated corner offsets keeps the
    whole feature pipeline free of absolute coordinates, so a global
    translation that does not round the stored centers cancels exactly.
    Shape (P, 8, 3).
    """
    centers = scene.centers()
    centroid = centers.mean(axis=0)
    deltas = centers - centroid
    out = np.empty((len(scene), 8, 3))
    for i, e in enumerate(scene.elements):
        offsets = (CORNER_SIGNS * e.box.half_extents) @ e.box.rotation.T
        out[i] = deltas[i] + offsets
    return out


def complete_edge_index(num_nodes: int) -> np.ndarray:
    """All ordered pairs (l, k), l != k, in nested-loop order; shape (E, 2)."""
    pairs = [(l, k) for l in range(num_nodes) for k in range(num_nodes) if l != k]
    return np.array(pairs, dtype=int).reshape(len(pairs), 2)


def build_graph(scene: Scene, canonicalize_yaw: bool = False) -> SceneGraph:
    """Form the complete directed feature graph of a scene.

    One node per element with its centered corners as features; every ordered
    pair of distinct elements contributes one edge whose features concatenate
    the 64 corner distances with the 108 normal-cross components.

    Args:
        scene: source scene, at least one element.
        canonicalize_yaw: rotate the scene by the inverse yaw of its floor
            element first, making the graph invariant to global yaw. Off by
            default; normal-cross features are otherwise rotation-covariant.
    """
    if canonicalize_yaw:
        fi = scene.floor_index
        if fi is not None:
            yaw = yaw_of(scene.elements[fi].box.rotation)
            if yaw != 0.0:
                scene = scene.rotated(rot_z(-yaw))

    p = len(scene)
    corners = centered_corners(scene)
    normals = np.array([obb_face_normals(e.box) for e in scene.elements])

    node_features = corners.reshape(p, NODE_FEATURE_DIM)
    edge_index = complete_edge_index(p)
    edge_features = np.empty((len(edge_index), EDGE_FEATURE_DIM))
    for row, (l, k) in enumerate(edge_index):
        edge_features[row, :EDGE_DIST_DIM] = edge_dist_features(corners[l], corners[k])
        edge_features[row, EDGE_DIST_DIM:] = edge_norm_features(normals[l], normals[k])

    return SceneGraph(
        node_features=node_features,
        edge_index=edge_index,
        edge_features=edge_features,
        node_kinds=[e.kind for e in scene.elements],
    )
