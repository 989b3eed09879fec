"""Synthetic desk-scale scenes, trajectories, odometry and detections.

Scenes are rooms with boxy objects; the ground-truth surface of each
object is the ellipsoid inscribed in its axis-aligned bounding box, so
quadric-versus-box metrics have an exact optimum. Cameras orbit the
scene looking inward. Odometry noise perturbs each relative step by a
fraction of its own magnitude; detection noise is additive Gaussian on
the box corners, clamped to the image. Everything is a pure function of
(parameters, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    CoverageFailure,
    NotAnEllipse,
    NotVisible,
    PlacementFailure,
)
from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    ConstrainedDualQuadric,
    SE3Pose,
    pose_between,
    pose_compose,
    predict_bbox,
    so3_exp,
    so3_log,
)

DEFAULT_INTRINSICS = CameraIntrinsics(320.0, 320.0, 320.0, 240.0, 640.0, 480.0)

DEFAULT_CLASS_NAMES = (
    "chair",
    "table",
    "monitor",
    "plant",
    "cup",
    "book",
    "lamp",
    "keyboard",
)


@dataclass(frozen=True)
class SceneObject:
    id: int
    class_label: str
    aabb_min: np.ndarray
    aabb_max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.aabb_min, dtype=float).reshape(3)
        hi = np.array(self.aabb_max, dtype=float).reshape(3)
        if not np.all(lo < hi):
            raise ValueError("aabb_min must be strictly below aabb_max")
        object.__setattr__(self, "aabb_min", lo)
        object.__setattr__(self, "aabb_max", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.aabb_min + self.aabb_max)

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * (self.aabb_max - self.aabb_min)


def object_ellipsoid(obj: SceneObject) -> ConstrainedDualQuadric:
    """Ground-truth quadric of an object: the AABB-inscribed ellipsoid."""
    return ConstrainedDualQuadric(np.zeros(3), obj.center, obj.half_extents)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise magnitudes of the simulation protocol.

    Translation noise is 5% of each step's translation, rotation noise
    15% of each step's rotation angle, detections get sigma 2 px
    (variance 4 px^2) per corner coordinate.
    """

    trans_fraction: float = 0.05
    rot_fraction: float = 0.15
    det_sigma_px: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.trans_fraction < 0 or self.rot_fraction < 0 or self.det_sigma_px < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of scene generation (room, objects, camera path)."""

    n_objects: int = 6
    room_min: tuple = (-3.0, -3.0, 0.0)
    room_max: tuple = (3.0, 3.0, 2.5)
    object_min_size: float = 0.5
    object_max_size: float = 1.4
    class_names: tuple = DEFAULT_CLASS_NAMES
    orbit_radius_scale: float = 1.15
    camera_height: float = 1.4
    camera_height_wobble: float = 0.25
    max_pairwise_overlap: float = 0.15
    placement_attempts: int = 2000
    coverage_attempts: int = 25
    min_views_per_object: int = 3

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("need at least one object")


@dataclass(frozen=True)
class Scene:
    objects: tuple
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class Detection:
    frame: int
    object_id: int
    bbox: BoundingBox
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", np.array(self.scores, dtype=float).reshape(-1))


@dataclass(frozen=True)
class Trial:
    """One simulated run: ground truth plus its corrupted measurements."""

    scene: Scene
    trajectory: tuple
    odometry: tuple
    detections: tuple
    noise: NoiseSpec


def _overlap_volume(lo_a, hi_a, lo_b, hi_b) -> float:
    sides = np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)
    if np.any(sides <= 0):
        return 0.0
    return float(np.prod(sides))


def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    """Place objects in the room by rejection sampling.

    A placement is rejected when its AABB overlaps an existing object by
    more than `max_pairwise_overlap` of the smaller volume (this also
    rules out containment).
    """
    rng = np.random.default_rng(seed)
    room_lo = np.asarray(spec.room_min, dtype=float)
    room_hi = np.asarray(spec.room_max, dtype=float)
    objects = []
    attempts = 0
    while len(objects) < spec.n_objects:
        if attempts >= spec.placement_attempts:
            raise PlacementFailure(
                f"placed {len(objects)}/{spec.n_objects} objects "
                f"in {spec.placement_attempts} attempts"
            )
        attempts += 1
        size = rng.uniform(spec.object_min_size, spec.object_max_size, size=3)
        half = 0.5 * size
        center = rng.uniform(room_lo + half, room_hi - half)
        lo, hi = center - half, center + half
        volume = float(np.prod(size))
        ok = True
        for other in objects:
            overlap = _overlap_volume(lo, hi, other.aabb_min, other.aabb_max)
            other_vol = float(np.prod(other.aabb_max - other.aabb_min))
            if overlap > spec.max_pairwise_overlap * min(volume, other_vol):
                ok = False
                break
        if not ok:
            continue
        oid = len(objects)
        label = spec.class_names[int(rng.integers(len(spec.class_names)))]
        objects.append(SceneObject(oid, label, lo, hi))
    return Scene(tuple(objects), DEFAULT_INTRINSICS)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SE3Pose:
    """Camera pose at `eye` with the optical axis through `target`."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    x = np.cross(up, forward)
    n = float(np.linalg.norm(x))
    if n < 1e-9:
        x = np.cross([0.0, 1.0, 0.0], forward)
        n = float(np.linalg.norm(x))
    x /= n
    y = np.cross(forward, x)
    return SE3Pose(np.column_stack([x, y, forward]), eye)


def _object_visible(pose, intrinsics, obj) -> bool:
    try:
        predict_bbox(pose, intrinsics, object_ellipsoid(obj))
    except (BehindCamera, NotAnEllipse, NotVisible):
        return False
    return True


def generate_trajectory(scene: Scene, n_poses: int, seed: int, spec: SceneSpec = SceneSpec()):
    """Smooth orbit around the scene with every object seen enough times.

    Cameras sit on a ring around the object centroid, looking inward,
    with a gentle height wobble. Radius and phase are resampled until
    each object is visible from at least `min_views_per_object` poses.
    """
    if n_poses < 2:
        raise ValueError("a trajectory needs at least two poses")
    rng = np.random.default_rng(seed)
    centers = np.array([obj.center for obj in scene.objects])
    centroid = centers.mean(axis=0)
    spread = max(float(np.linalg.norm(centers[:, :2] - centroid[None, :2], axis=1).max()), 1.0)
    for _ in range(spec.coverage_attempts):
        radius = spec.orbit_radius_scale * spread * rng.uniform(1.3, 1.8)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        height = spec.camera_height + rng.uniform(-0.2, 0.2)
        poses = []
        for k in range(n_poses):
            angle = phase + 2.0 * np.pi * k / n_poses
            wobble = spec.camera_height_wobble * np.sin(3.0 * angle)
            eye = centroid + np.array(
                [radius * np.cos(angle), radius * np.sin(angle), 0.0]
            )
            eye[2] = height + wobble
            poses.append(look_at(eye, centroid))
        counts = [
            sum(_object_visible(p, scene.intrinsics, obj) for p in poses)
            for obj in scene.objects
        ]
        if min(counts) >= spec.min_views_per_object:
            return poses
    raise CoverageFailure(
        f"no orbit found covering every object {spec.min_views_per_object} times"
    )


def corrupt_odometry(trajectory, noise: NoiseSpec, rng=None):
    """Per-step relative measurements with magnitude-proportional noise.

    Translation noise is Gaussian per axis with sigma equal to
    trans_fraction times the step translation norm; rotation noise is a
    Gaussian angle (sigma rot_fraction times the step angle) about a
    uniformly random axis, composed on the right.
    """
    if len(trajectory) < 2:
        raise ValueError("need at least two poses")
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    measurements = []
    for a, b in zip(trajectory[:-1], trajectory[1:]):
        u = pose_between(a, b)
        t_sigma = noise.trans_fraction * float(np.linalg.norm(u.translation))
        t_noisy = u.translation + rng.normal(0.0, 1.0, size=3) * t_sigma
        step_angle = float(np.linalg.norm(so3_log(u.rotation)))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.normal(0.0, 1.0) * noise.rot_fraction * step_angle
        R_noisy = u.rotation @ so3_exp(axis * angle)
        measurements.append(SE3Pose(R_noisy, t_noisy))
    return measurements


def chain_odometry(start: SE3Pose, measurements):
    """Integrate relative measurements into a trajectory from `start`."""
    poses = [start]
    for u in measurements:
        poses.append(pose_compose(poses[-1], u))
    return poses


def _score_vector(rng, n_classes: int, true_class: int) -> np.ndarray:
    raw = rng.uniform(0.0, 0.25, size=n_classes)
    raw[true_class] += 0.75
    return raw / raw.sum()


def simulate_detections(trajectory, scene: Scene, intrinsics: CameraIntrinsics,
                        noise: NoiseSpec, rng=None):
    """Noisy bounding-box detections of every visible object.

    The ground-truth box is the sensor-model prediction for the object's
    inscribed ellipsoid; corners get independent Gaussian noise and are
    clamped to the image afterwards. Objects behind the camera or
    projecting outside the image are omitted.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed + 1)
    n_classes = len(DEFAULT_CLASS_NAMES)
    class_index = {name: i for i, name in enumerate(DEFAULT_CLASS_NAMES)}
    detections = []
    w, h = float(intrinsics.width), float(intrinsics.height)
    for frame, pose in enumerate(trajectory):
        for obj in scene.objects:
            try:
                box = predict_bbox(pose, intrinsics, object_ellipsoid(obj))
            except (BehindCamera, NotAnEllipse, NotVisible):
                continue
            b = box.vector + rng.normal(0.0, 1.0, size=4) * noise.det_sigma_px
            x_lo, x_hi = sorted((b[0], b[2]))
            y_lo, y_hi = sorted((b[1], b[3]))
            b = np.array(
                [
                    min(max(x_lo, 0.0), w),
                    min(max(y_lo, 0.0), h),
                    min(max(x_hi, 0.0), w),
                    min(max(y_hi, 0.0), h),
                ]
            )
            scores = _score_vector(rng, n_classes, class_index.get(obj.class_label, 0))
            detections.append(Detection(frame, obj.id, BoundingBox.from_vector(b), scores))
    return detections


def simulate_trial(spec: SceneSpec, n_poses: int, noise: NoiseSpec,
                   scene_seed: int, noise_seed: int) -> Trial:
    """Scene, trajectory and corrupted measurements for one trial.

    The scene and trajectory depend only on `scene_seed`; the injected
    noise depends only on `noise_seed`, so trials on the same scene share
    ground truth.
    """
    scene = generate_scene(spec, scene_seed)
    trajectory = generate_trajectory(scene, n_poses, scene_seed + 1, spec)
    rng = np.random.default_rng(noise_seed)
    odometry = corrupt_odometry(trajectory, noise, rng)
    detections = simulate_detections(trajectory, scene, scene.intrinsics, noise, rng)
    return Trial(scene, tuple(trajectory), tuple(odometry), tuple(detections), noise)
