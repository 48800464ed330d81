"""
Object Data Association

Maintains the global object map and matches each frame's detections to its
landmarks: a label-gated similarity of box overlap, color histogram and
embedding, solved one-to-one with the Hungarian algorithm.

Author: LunaLynx12
"""

from geometry import CameraIntrinsics, Cuboid, Pose, iou_2d, predict_bbox
from features import Detection, emb_similarity, hist_similarity
from scipy.optimize import linear_sum_assignment
from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass, field
from collections import deque
from models import AssocConfig
from errors import NotVisible
from threading import RLock
import numpy as np
import config
import logging


log = logging.getLogger(__name__)


@dataclass
class Measurement:
    """
    One observation of a landmark: object pose in the camera frame and measured dims.
    """
    T_co: Pose
    dims: np.ndarray
    score: float = 1.0


@dataclass
class Landmark:
    """
    Persistent map object.

    Attributes:
        id (int): Stable landmark id, never reused
        label (str): Category
        pose (Pose): World-from-object transform T_wo
        dims (np.ndarray): Cuboid dimensions (m)
        hists (deque): Most recent color histograms, capped
        embs (deque): Most recent embeddings, capped
        observed_frames (List[int]): Frames that observed this landmark, ascending
        measurements (Dict[int, Measurement]): Per-frame measurement used by refinement
    """
    id: int
    label: str
    pose: Pose
    dims: np.ndarray
    hists: deque
    embs: deque
    observed_frames: List[int] = field(default_factory=list)
    measurements: Dict[int, Measurement] = field(default_factory=dict)

    @property
    def obs_count(self) -> int:
        return len(self.observed_frames)

    @property
    def first_frame(self) -> int:
        return min(self.observed_frames)

    @property
    def last_frame(self) -> int:
        return max(self.observed_frames)

    @property
    def cuboid(self) -> Cuboid:
        return Cuboid.from_pose(self.pose, self.dims)

    @property
    def mean_score(self) -> float:
        return float(np.mean([m.score for m in self.measurements.values()])) if self.measurements else 0.0

    def observe(self, frame: int, det: Detection) -> None:
        self.hists.append(det.hist)
        self.embs.append(det.emb)
        if frame not in self.measurements:
            self.observed_frames.append(frame)
            self.observed_frames.sort()
        self.measurements[frame] = Measurement(det.pose_in_camera, det.dims.copy(), det.score)


class MapState:
    """
    Thread-safe global object map.

    Holds the landmarks, the keyframe trajectory T_wc, the relative odometry
    between consecutive keyframes and the ids retired by loop fusion. Every
    mutation happens under the map lock, one writer at a time.
    """
    def __init__(self, history_cap: int = config.HISTORY_CAP):
        self.lock = RLock()
        self.history_cap = history_cap
        self.landmarks: Dict[int, Landmark] = {}
        self.keyframes: Dict[int, Pose] = {}
        self.stamps: Dict[int, float] = {}
        self.odometry: Dict[int, Pose] = {}
        self.retired: Dict[int, int] = {}
        self.next_id = 0

    def add_keyframe(self, frame: int, T_wc: Pose, stamp: float, odometry: Optional[Pose] = None) -> None:
        """
        Registers a keyframe pose.

        param frame: Frame id
        type frame: int
        param T_wc: World-from-camera pose
        type T_wc: Pose
        param stamp: Timestamp in seconds
        type stamp: float
        param odometry: Relative pose from the previous keyframe, if any
        type odometry: Optional[Pose]
        """
        with self.lock:
            self.keyframes[frame] = T_wc
            self.stamps[frame] = stamp
            if odometry is not None:
                self.odometry[frame] = odometry

    def spawn(self, frame: int, det: Detection) -> Landmark:
        with self.lock:
            T_wc = self.keyframes[frame]
            lm = Landmark(id=self.next_id, label=det.label, pose=T_wc @ det.pose_in_camera,
                          dims=det.dims.copy(), hists=deque(maxlen=self.history_cap),
                          embs=deque(maxlen=self.history_cap))
            lm.observe(frame, det)
            self.landmarks[lm.id] = lm
            self.next_id += 1
            return lm

    def active_landmarks(self, frame: int, window: int) -> List[Landmark]:
        """
        Landmarks last observed within `window` keyframes of `frame`, in id order.
        """
        return [lm for lm in self.landmarks.values() if lm.last_frame >= frame - window]

    def frames(self) -> List[int]:
        return sorted(self.keyframes)

    def snapshot(self) -> dict:
        """
        JSON-ready map export: one entry per live landmark.
        """
        with self.lock:
            return {
                "landmarks": [
                    {
                        "id": lm.id,
                        "label": lm.label,
                        "t": [float(x) for x in lm.pose.t],
                        "yaw": float(lm.cuboid.yaw),
                        "dims": [float(x) for x in lm.dims],
                        "obs_count": lm.obs_count,
                        "first_frame": lm.first_frame,
                    }
                    for lm in sorted(self.landmarks.values(), key=lambda o: o.id)
                ],
                "retired": {str(k): v for k, v in sorted(self.retired.items())},
            }


def detection_similarity(d: Detection, o: Landmark, T_wc: Pose, k: CameraIntrinsics,
                         lam: float = config.ASSOC_LAMBDA) -> float:
    """
    Similarity between a detection and a landmark.

    Zero when labels differ. Otherwise lam * IoU(box, predicted box)
    + lam * (1 - lam) * color similarity + (1 - lam)^2 * embedding similarity,
    with a negative embedding term clamped to zero and the IoU term zero when
    the landmark does not project into the image.

    param d: Detection in the current frame
    type d: Detection
    param o: Map landmark
    type o: Landmark
    param T_wc: Current camera pose
    type T_wc: Pose
    param k: Camera intrinsics
    type k: CameraIntrinsics
    param lam: Balance in [0, 1]
    type lam: float
    return: Score >= 0
    rtype: float
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    if d.label != o.label:
        return 0.0
    try:
        iou = iou_2d(d.bbox, predict_bbox(o.cuboid, T_wc.inverse(), k))
    except NotVisible:
        iou = 0.0
    his = hist_similarity(d.hist, list(o.hists))
    dis = max(0.0, emb_similarity(d.emb, list(o.embs)))
    return lam * iou + lam * (1.0 - lam) * his + (1.0 - lam) ** 2 * dis


def build_similarity_matrix(dets: List[Detection], landmarks: List[Landmark], T_wc: Pose,
                            k: CameraIntrinsics, cfg: AssocConfig) -> Tuple[np.ndarray, List[int]]:
    """
    Builds the detection-by-landmark score matrix.

    param dets: Detections of one frame (rows)
    type dets: List[Detection]
    param landmarks: Candidate landmarks (columns)
    type landmarks: List[Landmark]
    param T_wc: Camera pose of the frame
    type T_wc: Pose
    param k: Camera intrinsics
    type k: CameraIntrinsics
    param cfg: Association settings
    type cfg: AssocConfig
    return: N x M matrix and the landmark id of each column
    rtype: Tuple[np.ndarray, List[int]]
    """
    W = np.zeros((len(dets), len(landmarks)))
    for i, d in enumerate(dets):
        for j, o in enumerate(landmarks):
            W[i, j] = detection_similarity(d, o, T_wc, k, cfg.lam)
    return W, [o.id for o in landmarks]


def assign_matches(W: np.ndarray, ids: List[int], threshold: float) -> Tuple[List[Tuple[int, int]], List[int]]:
    """
    One-to-one assignment maximizing the total score over entries at or above the threshold.

    param W: N x M score matrix
    type W: np.ndarray
    param ids: Landmark id per column
    type ids: List[int]
    param threshold: Minimum accepted score
    type threshold: float
    return: (detection index, landmark id) matches and unmatched detection indices, both ascending
    rtype: Tuple[List[Tuple[int, int]], List[int]]
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    W = np.asarray(W, dtype=float)
    n = W.shape[0] if W.ndim == 2 else (W.size // len(ids) if ids else 0)
    if n == 0 or not ids:
        return [], list(range(n))
    W = W.reshape(n, len(ids))

    gated = np.where(W >= threshold, W, 0.0)
    rows, cols = linear_sum_assignment(gated, maximize=True)
    matches = [(int(r), ids[c]) for r, c in zip(rows, cols) if gated[r, c] > 0.0]
    matched = {r for r, _ in matches}
    return matches, [i for i in range(n) if i not in matched]


def apply_associations(state: MapState, frame: int, matches: List[Tuple[int, int]],
                       unmatched: List[int], dets: List[Detection]) -> MapState:
    """
    Pushes matched detections into their landmarks and spawns a landmark per unmatched detection.
    """
    with state.lock:
        for i, lid in matches:
            state.landmarks[lid].observe(frame, dets[i])
        for i in unmatched:
            state.spawn(frame, dets[i])
    return state


def associate_frame(state: MapState, frame: int, dets: List[Detection], k: CameraIntrinsics,
                    cfg: AssocConfig) -> Dict[int, int]:
    """
    Runs similarity, assignment and map update for one frame.

    param state: Global map, already holding the frame's keyframe pose
    type state: MapState
    param frame: Frame id
    type frame: int
    param dets: Filtered detections
    type dets: List[Detection]
    param k: Camera intrinsics
    type k: CameraIntrinsics
    param cfg: Association settings
    type cfg: AssocConfig
    return: Landmark id assigned to each detection index
    rtype: Dict[int, int]
    """
    with state.lock:
        candidates = state.active_landmarks(frame, cfg.window)
        W, ids = build_similarity_matrix(dets, candidates, state.keyframes[frame], k, cfg)
        matches, unmatched = assign_matches(W, ids, cfg.threshold)
        first_new = state.next_id
        apply_associations(state, frame, matches, unmatched, dets)

    assigned = {i: lid for i, lid in matches}
    assigned.update({i: first_new + n for n, i in enumerate(unmatched)})
    log.debug(f"[Association] frame {frame}: {len(matches)} matched, {len(unmatched)} new")
    return assigned
