"""
Scenario Simulator

Deterministic stand-in for the object detector and the visual odometry:
labeled cuboids on a ground plane, keyframe paths (rectangles, lines, arcs),
random-walk odometry and noisy per-frame detections. Every random draw comes
from a numpy Generator seeded by (scenario seed, stream, ...), so a scenario
file fully determines its observation stream.

Author: LunaLynx12
"""

from geometry import CAMERA_FROM_BODY, Cuboid, Pose, camera_pose, exp_batch, object_in_camera, project_box, yaw_of
from models import NoiseConfig, ScenarioConfig, TrajectoryConfig
from errors import DataError, NotVisible, PlacementFailure
from features import Detection, normalize_embedding
from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass, field
import numpy as np
import logging
import config
import math


log = logging.getLogger(__name__)

WORLD_STREAM = 0
ODOMETRY_STREAM = 1
DETECTION_STREAM = 2

LABEL_DIMS: Dict[str, Tuple[float, float, float]] = {
    "car": (4.5, 1.8, 1.5),
    "van": (5.0, 2.0, 2.2),
    "truck": (5.2, 2.3, 2.8),
    "bus": (5.4, 2.5, 3.0),
    "pedestrian": (0.6, 0.6, 1.75),
    "cyclist": (1.8, 0.6, 1.7),
    "tree": (1.2, 1.2, 4.0),
    "pole": (0.3, 0.3, 3.5),
    "bench": (1.8, 0.6, 0.9),
}
"""
Nominal (dx, dy, dz) per label in meters. Unknown labels fall back to a 1 m cube.
"""

INSTANCE_SIGMA = 0.08
"""
Spread of instance embeddings around their label anchor.
"""


@dataclass(frozen=True, eq=False)
class TrueObject:
    id: int
    label: str
    cuboid: Cuboid
    hist: np.ndarray
    emb: np.ndarray


@dataclass(eq=False)
class GroundTruth:
    """
    True keyframe poses and objects of a scenario.
    """
    cameras: List[Pose]
    stamps: List[float]
    objects: List[TrueObject]
    anchors: Dict[str, np.ndarray] = field(default_factory=dict)

    def positions(self) -> np.ndarray:
        return np.array([c.t for c in self.cameras])


@dataclass(eq=False)
class FrameObservation:
    """
    Everything the back-end receives for one keyframe.

    Attributes:
        frame (int): Frame id
        stamp (float): Timestamp in seconds
        odometry (Optional[Pose]): Noisy relative pose from the previous keyframe, None for the first
        detections (List[Detection]): Noisy detections of visible objects
    """
    frame: int
    stamp: float
    odometry: Optional[Pose]
    detections: List[Detection]


@dataclass(eq=False)
class Scenario:
    config: ScenarioConfig
    truth: GroundTruth
    observations: List[FrameObservation]

    def odometry_trajectory(self) -> List[Pose]:
        """
        Dead-reckoned camera poses: the true first pose chained with the noisy odometry.
        """
        poses = [self.truth.cameras[0]]
        for obs in self.observations[1:]:
            poses.append(poses[-1] @ obs.odometry)
        return poses


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _side(start: np.ndarray, heading: float, length: float, spacing: float, closed: bool) -> List[Tuple[float, float, float]]:
    steps = np.arange(0.0, length + (spacing * 1e-9 if closed else -spacing * 1e-9), spacing)
    direction = np.array([math.cos(heading), math.sin(heading)])
    return [(*(start + s * direction), heading) for s in steps]


def trajectory_samples(cfg: TrajectoryConfig) -> List[Tuple[float, float, float]]:
    """
    Keyframe (x, y, heading) samples along the configured path.
    """
    if cfg.shape == "line":
        return _side(np.zeros(2), 0.0, cfg.length, cfg.spacing, closed=True)

    if cfg.shape == "curve":
        steps = np.arange(0.0, cfg.length + cfg.spacing * 1e-9, cfg.spacing)
        phi = steps / cfg.radius
        return [(cfg.radius * math.sin(p), cfg.radius * (1.0 - math.cos(p)), p) for p in phi]

    corners = [np.array(c, dtype=float) for c in [(0, 0), (cfg.length, 0), (cfg.length, cfg.width), (0, cfg.width)]]
    samples = []
    for i, corner in enumerate(corners):
        nxt = corners[(i + 1) % 4]
        heading = math.atan2(*(nxt - corner)[::-1])
        samples += _side(corner, heading, float(np.linalg.norm(nxt - corner)), cfg.spacing, closed=False)
    samples.append((0.0, 0.0, samples[-1][2]))

    if cfg.revisit_offset_deg is not None:
        heading = math.radians(cfg.revisit_offset_deg)
        u = np.array([math.cos(heading), math.sin(heading)])
        start = np.array([cfg.length / 2.0, 0.0]) - (cfg.length / 2.0) * u
        leg = start - np.zeros(2)
        if np.linalg.norm(leg) > cfg.spacing / 2.0:
            leg_heading = math.atan2(leg[1], leg[0])
            samples += _side(np.zeros(2), leg_heading, float(np.linalg.norm(leg)), cfg.spacing, closed=False)[1:]
        samples += _side(start, heading, cfg.length, cfg.spacing, closed=True)
    return samples


def generate_trajectory(cfg: TrajectoryConfig) -> List[Pose]:
    """
    True world-from-camera keyframe poses.

    Rectangles run counter-clockwise from the origin along the first side and
    close the circuit; unless revisit_offset_deg is None they then pass the
    first side's region again with the heading rotated by that offset.

    param cfg: Path settings
    type cfg: TrajectoryConfig
    return: Keyframe poses, heading tangent to the path
    rtype: List[Pose]
    """
    return [camera_pose(x, y, h) for x, y, h in trajectory_samples(cfg)]


def _label_anchors(labels: List[str], dim: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """
    Unit vectors with pairwise angles equal to the configured anchor separation.
    """
    if len(labels) + 1 > dim:
        raise PlacementFailure(f"embedding dimension {dim} too small for {len(labels)} labels")
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    cos_sep = math.cos(math.radians(config.ANCHOR_SEPARATION_DEG))
    alpha = math.acos(math.sqrt(cos_sep))
    common = basis[:, 0]
    return {label: math.cos(alpha) * common + math.sin(alpha) * basis[:, i + 1] for i, label in enumerate(labels)}


def generate_world(cfg: ScenarioConfig) -> GroundTruth:
    """
    Places labeled objects on the ground plane around the scenario path.

    Objects keep a minimum center separation and stay clear of the path;
    dims vary +-10% around the label's nominal size; yaw is uniform; each
    object carries a sorted histogram drawn from its label's Dirichlet and
    a unit embedding near its label anchor.

    param cfg: Scenario settings
    type cfg: ScenarioConfig
    return: Ground truth with keyframe poses and objects
    rtype: GroundTruth
    raises PlacementFailure: If the objects cannot be placed within the attempt cap
    """
    rng = _rng(cfg.seed, WORLD_STREAM)
    samples = np.array(trajectory_samples(cfg.trajectory))
    cameras = [camera_pose(x, y, h) for x, y, h in samples]
    path = samples[:, :2]
    lo, hi = path.min(axis=0) - cfg.margin, path.max(axis=0) + cfg.margin

    labels = sorted(cfg.labels)
    weights = np.array([cfg.labels[l] for l in labels], dtype=float)
    weights /= weights.sum()
    anchors = _label_anchors(labels, cfg.emb_dim, rng)
    label_alpha = {l: 20.0 * rng.dirichlet(np.ones(cfg.hist_bins)) + 0.1 for l in labels}

    objects: List[TrueObject] = []
    centers: List[np.ndarray] = []
    attempts = 0
    while len(objects) < cfg.n_objects:
        attempts += 1
        if attempts > config.PLACEMENT_ATTEMPTS:
            raise PlacementFailure(f"placed {len(objects)} of {cfg.n_objects} objects in {config.PLACEMENT_ATTEMPTS} attempts")
        xy = rng.uniform(lo, hi)
        label = labels[rng.choice(len(labels), p=weights)]
        nominal = np.array(LABEL_DIMS.get(label, (1.0, 1.0, 1.0)))
        dims = nominal * rng.uniform(0.9, 1.1, size=3)
        yaw = rng.uniform(-math.pi, math.pi)
        if np.min(np.linalg.norm(path - xy, axis=1)) < cfg.road_clearance + 0.5 * np.hypot(dims[0], dims[1]):
            continue
        if centers and np.min(np.linalg.norm(np.array(centers) - xy, axis=1)) < config.MIN_OBJECT_SEPARATION:
            continue

        hist = np.sort(rng.dirichlet(label_alpha[label]))[::-1]
        emb = normalize_embedding(anchors[label] + rng.normal(0.0, INSTANCE_SIGMA, cfg.emb_dim))
        cuboid = Cuboid(np.array([xy[0], xy[1], dims[2] / 2.0]), yaw, dims)
        objects.append(TrueObject(len(objects), label, cuboid, hist, emb))
        centers.append(xy)

    stamps = [i * cfg.frame_dt for i in range(len(cameras))]
    log.debug(f"[Simulation] placed {len(objects)} objects after {attempts} attempts")
    return GroundTruth(cameras, stamps, objects, anchors)


def simulate_odometry(poses: List[Pose], noise: NoiseConfig, seed: int) -> List[Pose]:
    """
    Noisy relative poses between consecutive keyframes.

    Each true relative pose is right-multiplied by exp(eps), eps zero-mean
    Gaussian with per-axis standard deviation sigma times the segment length
    (rotation sigma for the first three entries, translation sigma for the last three).

    param poses: True keyframe poses, at least 2
    type poses: List[Pose]
    param noise: Noise model
    type noise: NoiseConfig
    param seed: Scenario seed
    type seed: int
    return: len(poses) - 1 relative poses
    rtype: List[Pose]
    """
    if len(poses) < 2:
        raise ValueError("odometry needs at least 2 poses")
    rng = _rng(seed, ODOMETRY_STREAM)
    rel = [a.inverse() @ b for a, b in zip(poses, poses[1:])]
    lengths = np.array([np.linalg.norm(r.t) for r in rel])
    sigma = np.array([noise.odom_rot_sigma] * 3 + [noise.odom_trans_sigma] * 3)
    eps = rng.normal(size=(len(rel), 6)) * sigma * lengths[:, None]
    if not eps.any():
        return rel
    perturb = exp_batch(eps)
    return [r @ Pose.from_matrix(m) for r, m in zip(rel, perturb)]


def _visible(T_co: Pose, dims: np.ndarray, cfg: ScenarioConfig) -> bool:
    x, _, z = T_co.t
    if z <= 0 or np.linalg.norm(T_co.t) > cfg.max_range:
        return False
    return abs(math.degrees(math.atan2(x, z))) <= cfg.hfov_deg / 2.0


def render_detections(truth: GroundTruth, frame: int, T_wc: Pose, cfg: ScenarioConfig) -> List[Detection]:
    """
    Noisy detections of the objects a camera sees.

    An object is a candidate when its center lies in front of the camera,
    inside the horizontal field of view and within max range, and its box
    projects into the image. Each candidate then survives dropout and gets
    pose, dims, label, histogram and embedding noise.

    param truth: Ground truth
    type truth: GroundTruth
    param frame: Frame id
    type frame: int
    param T_wc: True camera pose
    type T_wc: Pose
    param cfg: Scenario settings (noise model included)
    type cfg: ScenarioConfig
    return: Detections in object id order
    rtype: List[Detection]
    """
    noise = cfg.noise
    T_cw = T_wc.inverse()
    labels = sorted(cfg.labels)
    stamp = truth.stamps[frame] if frame < len(truth.stamps) else frame * cfg.frame_dt
    dets = []
    for obj in truth.objects:
        T_co = T_cw @ obj.cuboid.pose
        if not _visible(T_co, obj.cuboid.dims, cfg):
            continue
        rng = _rng(cfg.seed, DETECTION_STREAM, frame, obj.id)
        if rng.uniform() < noise.dropout:
            continue

        yaw_co = yaw_of(CAMERA_FROM_BODY.T @ T_co.R) + rng.normal(0.0, noise.det_yaw_sigma)
        t_co = T_co.t + rng.normal(0.0, noise.det_trans_sigma, 3)
        dims = np.maximum(obj.cuboid.dims + rng.normal(0.0, noise.dims_sigma, 3), 0.05)
        try:
            bbox = project_box(object_in_camera(t_co, yaw_co), dims, cfg.intrinsics)
        except NotVisible:
            continue

        label = obj.label
        if len(labels) > 1 and rng.uniform() < noise.label_flip_prob:
            others = [l for l in labels if l != obj.label]
            label = others[rng.integers(len(others))]

        hist = obj.hist
        if noise.hist_jitter:
            hist = np.sort(rng.dirichlet(200.0 * obj.hist + 1.0))[::-1]
        emb = obj.emb
        if noise.emb_sigma > 0:
            emb = normalize_embedding(obj.emb + rng.normal(0.0, noise.emb_sigma, obj.emb.shape[0]))

        dets.append(Detection(frame=frame, stamp=stamp, label=label, bbox=bbox, hist=hist, emb=emb,
                              t_co=t_co, yaw_co=yaw_co, dims=dims, score=float(rng.uniform(0.6, 1.0)),
                              object_id=obj.id))
    return dets


def simulate(cfg: ScenarioConfig) -> Scenario:
    """
    Generates the world, the odometry and every frame's detections.

    param cfg: Scenario settings
    type cfg: ScenarioConfig
    return: Ground truth plus the observation stream
    rtype: Scenario
    """
    truth = generate_world(cfg)
    odometry = simulate_odometry(truth.cameras, cfg.noise, cfg.seed) if len(truth.cameras) > 1 else []
    observations = [
        FrameObservation(i, truth.stamps[i], odometry[i - 1] if i > 0 else None,
                         render_detections(truth, i, T_wc, cfg))
        for i, T_wc in enumerate(truth.cameras)
    ]
    log.info(f"[Simulation] seed {cfg.seed}: {len(observations)} frames, {len(truth.objects)} objects, "
             f"{sum(len(o.detections) for o in observations)} detections")
    return Scenario(cfg, truth, observations)


def objects_to_json(objects: List[TrueObject]) -> list:
    return [
        {"id": o.id, "label": o.label, "t": [float(x) for x in o.cuboid.t], "yaw": float(o.cuboid.yaw),
         "dims": [float(x) for x in o.cuboid.dims], "hist": [float(x) for x in o.hist],
         "emb": [float(x) for x in o.emb]}
        for o in objects
    ]


def objects_from_json(data: list) -> List[TrueObject]:
    try:
        return [TrueObject(int(d["id"]), str(d["label"]), Cuboid(np.array(d["t"], dtype=float), float(d["yaw"]),
                                                                  np.array(d["dims"], dtype=float)),
                           np.array(d["hist"], dtype=float), np.array(d["emb"], dtype=float))
                for d in data]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed object record: {e}") from e
