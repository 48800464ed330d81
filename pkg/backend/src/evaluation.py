"""
Evaluation Module

Trajectory alignment and absolute trajectory error, the loop-detection
precision/recall protocol, map quality against ground-truth cuboids and the
per-detection association accuracy tally.

Author: LunaLynx12
"""

from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple
from errors import DataError, DegenerateGeometry, NoOverlap
from geometry import Cuboid, Pose, iou_3d, rotation_distance
from models import AteReport, LoopAttempt, PrPoint
from scipy.spatial.transform import Rotation
from dataclasses import dataclass
import numpy as np
import logging
import config
import math


log = logging.getLogger(__name__)


@dataclass(eq=False)
class Trajectory:
    """
    Timestamped camera poses.

    Attributes:
        stamps (np.ndarray): Timestamps in seconds, strictly increasing
        poses (List[Pose]): World-from-camera pose per stamp
    """
    stamps: np.ndarray
    poses: List[Pose]

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(self.stamps) != len(self.poses):
            raise DataError(f"{len(self.stamps)} timestamps for {len(self.poses)} poses")
        if len(self.stamps) > 1 and np.any(np.diff(self.stamps) <= 0):
            raise DataError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)


def match_timestamps(est: Trajectory, gt: Trajectory,
                     tolerance: float = config.TIMESTAMP_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pairs every estimated sample with the nearest ground-truth sample in time.

    param est: Estimated trajectory
    type est: Trajectory
    param gt: Ground-truth trajectory
    type gt: Trajectory
    param tolerance: Largest accepted time offset in seconds
    type tolerance: float
    return: Index arrays into est and gt
    rtype: Tuple[np.ndarray, np.ndarray]
    raises NoOverlap: If no pair lies within the tolerance
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoOverlap("cannot match an empty trajectory")
    pos = np.clip(np.searchsorted(gt.stamps, est.stamps), 1, max(len(gt) - 1, 1))
    left = np.clip(pos - 1, 0, len(gt) - 1)
    right = np.clip(pos, 0, len(gt) - 1)
    nearest = np.where(np.abs(gt.stamps[left] - est.stamps) <= np.abs(gt.stamps[right] - est.stamps), left, right)
    keep = np.abs(gt.stamps[nearest] - est.stamps) <= tolerance
    if not keep.any():
        raise NoOverlap(f"no timestamps agree within {tolerance} s")
    return np.flatnonzero(keep), nearest[keep]


def _umeyama(P: np.ndarray, Q: np.ndarray, with_scale: bool) -> Tuple[float, Pose]:
    if len(P) < 3:
        raise DegenerateGeometry(f"alignment needs at least 3 matched positions, got {len(P)}")
    mu_p, mu_q = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - mu_p, Q - mu_q
    sv = np.linalg.svd(Qc.T @ Pc, compute_uv=False)
    if sv[0] <= 0 or sv[1] < 1e-9 * sv[0]:
        raise DegenerateGeometry("positions are collinear or coincident")

    rot, _ = Rotation.align_vectors(Qc, Pc)
    R = rot.as_matrix()
    scale = 1.0
    if with_scale:
        scale = float(np.einsum("ij,ij->", Qc, Pc @ R.T) / np.einsum("ij,ij->", Pc, Pc))
    return scale, Pose(R, mu_q - scale * R @ mu_p)


def align_similarity(est: Trajectory, gt: Trajectory, with_scale: bool = False) -> Tuple[float, Pose]:
    """
    Closed-form least-squares alignment of estimated positions onto ground truth.

    Minimizes sum ||s * R * p_est + t - p_gt||^2 over timestamp-matched samples.
    The scale stays 1 unless `with_scale` is set.

    param est: Estimated trajectory
    type est: Trajectory
    param gt: Ground-truth trajectory
    type gt: Trajectory
    param with_scale: Also estimate the scale
    type with_scale: bool
    return: Scale and the rigid transform applied after scaling
    rtype: Tuple[float, Pose]
    raises NoOverlap: If no timestamps match
    raises DegenerateGeometry: If fewer than 3 matches or the matched positions are collinear
    """
    i, j = match_timestamps(est, gt)
    return _umeyama(est.positions[i], gt.positions[j], with_scale)


def ate(est: Trajectory, gt: Trajectory, with_scale: bool = False, align: bool = True) -> AteReport:
    """
    Absolute trajectory error.

    param est: Estimated trajectory
    type est: Trajectory
    param gt: Ground-truth trajectory
    type gt: Trajectory
    param with_scale: Similarity instead of rigid alignment
    type with_scale: bool
    param align: Align first; when False positions are compared as given
    type align: bool
    return: MSE, RMSE, STD and Max of the per-frame position errors
    rtype: AteReport
    raises NoOverlap, DegenerateGeometry: Propagated from the alignment
    """
    i, j = match_timestamps(est, gt)
    P, Q = est.positions[i], gt.positions[j]
    scale, T = _umeyama(P, Q, with_scale) if align else (1.0, Pose.identity())
    errors = np.linalg.norm(scale * P @ T.R.T + T.t - Q, axis=1)
    mse = float(np.mean(errors ** 2))
    return AteReport(mse=mse, rmse=math.sqrt(mse), std=float(np.std(errors)), max=float(errors.max()),
                     n=len(errors), errors=[float(e) for e in errors])


def rotation_errors(est: Trajectory, gt: Trajectory, alignment: Optional[Pose] = None) -> np.ndarray:
    """
    Per-frame rotation error in degrees between timestamp-matched poses.

    param alignment: Transform applied to the estimate first, identity by default
    type alignment: Optional[Pose]
    """
    i, j = match_timestamps(est, gt)
    A = alignment or Pose.identity()
    return np.array([math.degrees(rotation_distance(A @ est.poses[a], gt.poses[b])) for a, b in zip(i, j)])


def loop_opportunity(gt_positions: np.ndarray, frame: int, tau_l: float = config.TAU_L,
                     min_gap: int = config.LOOP_MIN_GAP) -> bool:
    """
    Whether some frame i with frame - i > min_gap lies within tau_l of `frame` in ground truth.
    """
    earlier = gt_positions[:max(0, frame - min_gap)]
    if len(earlier) == 0:
        return False
    return bool(np.min(np.linalg.norm(earlier - gt_positions[frame], axis=1)) <= tau_l)


def opportunity_events(check_frames: Iterable[int], gt_positions: np.ndarray, tau_l: float = config.TAU_L,
                       min_gap: int = config.LOOP_MIN_GAP) -> List[List[int]]:
    """
    Groups the loop-check frames that have a ground-truth loop opportunity into events.

    An event is a maximal run of consecutive check frames that all have an
    opportunity; recall counts each event once.

    return: Check frames of each event, in order
    rtype: List[List[int]]
    """
    events: List[List[int]] = []
    previous = False
    for f in sorted(check_frames):
        now = loop_opportunity(gt_positions, f, tau_l, min_gap)
        if now and previous:
            events[-1].append(f)
        elif now:
            events.append([f])
        previous = now
    return events


def event_index(events: Sequence[Sequence[int]]) -> Dict[int, int]:
    return {f: e for e, frames in enumerate(events) for f in frames}


def attempt_error(a: LoopAttempt) -> float:
    if a.gt_position is None:
        raise DataError(f"attempt at frame {a.frame} has no ground-truth position")
    return float(np.linalg.norm(np.subtract(a.est_position, a.gt_position)))


def pr_point(attempts: Sequence[LoopAttempt], threshold: float, tau_l: float, events: Set[int]) -> PrPoint:
    declared = [a for a in attempts if a.score >= threshold]
    tp = sum(attempt_error(a) <= tau_l for a in declared)
    fp = len(declared) - tp
    fn = len(events - {a.event for a in declared})
    return PrPoint(threshold=threshold, precision=tp / (tp + fp) if declared else 1.0,
                   recall=tp / (tp + fn) if tp + fn else 0.0, tp=tp, fp=fp, fn=fn)


def pr_curve(attempts: Sequence[LoopAttempt], tau_l: float = config.TAU_L,
             thresholds: Optional[Sequence[float]] = None, events: Optional[Iterable[int]] = None) -> List[PrPoint]:
    """
    Precision and recall of loop declarations as the score threshold is swept.

    At each threshold the attempts scoring at or above it are declared. A
    declared attempt is a true positive when its corrected position lies
    within tau_l of ground truth, otherwise a false positive. A ground-truth
    opportunity event is a false negative when none of its attempts is
    declared. Precision is TP / (TP + FP), 1 with no declarations; recall is
    TP / (TP + FN), 0 when both are zero.

    param attempts: Loop attempt log
    type attempts: Sequence[LoopAttempt]
    param tau_l: Position tolerance in meters
    type tau_l: float
    param thresholds: Score thresholds, every distinct score plus one above the maximum by default
    type thresholds: Optional[Sequence[float]]
    param events: Opportunity event ids; taken from the attempts when omitted
    type events: Optional[Iterable[int]]
    return: One point per threshold, ascending
    rtype: List[PrPoint]
    raises DataError: If the log is empty or an attempt lacks ground truth
    """
    if not attempts:
        raise DataError("PR evaluation needs a non-empty attempt log")
    if events is None:
        events = {a.event for a in attempts if a.event is not None}
    events = set(events)
    if thresholds is None:
        scores = np.unique([a.score for a in attempts])
        thresholds = list(scores) + [float(scores[-1]) + 1.0]
    return [pr_point(attempts, float(t), tau_l, events) for t in sorted(thresholds)]


def map_iou_report(landmarks: Iterable, objects: Iterable, min_score: float = 0.8) -> dict:
    """
    Best same-label 3D IoU of every ground-truth object against the map.

    Landmarks whose mean detection score does not exceed `min_score` are ignored.

    param landmarks: Map landmarks (label, cuboid, mean_score)
    type landmarks: Iterable
    param objects: Ground-truth objects (id, label, cuboid)
    type objects: Iterable
    param min_score: Confidence gate
    type min_score: float
    return: {"mean_iou", "per_object": {object id: iou}, "n_landmarks"}
    rtype: dict
    """
    kept = [lm for lm in landmarks if lm.mean_score > min_score]
    by_label: Dict[str, List[Cuboid]] = {}
    for lm in kept:
        by_label.setdefault(lm.label, []).append(lm.cuboid)
    per_object = {}
    for obj in objects:
        candidates = by_label.get(obj.label, [])
        per_object[obj.id] = max((iou_3d(obj.cuboid, c) for c in candidates), default=0.0)
    mean = float(np.mean(list(per_object.values()))) if per_object else 0.0
    return {"mean_iou": mean, "per_object": per_object, "n_landmarks": len(kept)}


class AssociationTally:
    """
    Counts correct association decisions against ground-truth instance ids.

    A landmark is owned by the instance whose detection spawned it. Matching a
    detection to a landmark of its own instance is correct; spawning is
    correct only when no candidate landmark of that instance was available.
    """
    def __init__(self):
        self.owner: Dict[int, int] = {}
        self.correct = 0
        self.total = 0

    def record(self, object_id: Optional[int], landmark_id: int, spawned: bool, candidates: Iterable[int]) -> None:
        if spawned:
            self.owner[landmark_id] = object_id
        if object_id is None:
            return
        self.total += 1
        if spawned:
            self.correct += all(self.owner.get(c) != object_id for c in candidates)
        else:
            self.correct += self.owner.get(landmark_id) == object_id

    def merge(self, retired: Dict[int, int]) -> None:
        """
        Fused landmarks keep the owner of the landmark that absorbed them.
        """
        for old, new in retired.items():
            self.owner.setdefault(new, self.owner.get(old))

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.total if self.total else None
