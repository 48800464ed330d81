"""
Object Appearance Features

Color histograms clustered from HSV pixels, embedding similarity, proposal
filtering and the detection JSONL codec.

Author: LunaLynx12
"""

from errors import DimMismatch, EmptyHistory, EmptyPatch, ParseError, SchemaError
from geometry import BBox2D, Pose, object_in_camera
from pydantic import BaseModel, Field, ValidationError
from typing import Dict, Iterable, List, Optional
from dataclasses import dataclass
from functools import cached_property
from sklearn.cluster import KMeans
from models import FilterConfig
from pathlib import Path
import numpy as np
import config
import logging
import json


log = logging.getLogger(__name__)


def normalize_histogram(h: Iterable[float]) -> np.ndarray:
    """
    Scales a nonnegative weight vector to sum to one. Vectors already within
    1e-12 of unit sum are returned unchanged so repeated normalization is a fixed point.

    param h: Histogram weights
    type h: Iterable[float]
    return: Normalized copy
    rtype: np.ndarray
    raises DimMismatch: If the vector is empty, negative or sums to zero
    """
    h = np.array(h, dtype=float)
    total = h.sum()
    if h.size == 0 or np.any(h < 0) or total <= 0:
        raise DimMismatch(f"invalid histogram {h.tolist()}")
    if abs(total - 1.0) > 1e-12:
        h = h / total
    return h


def normalize_embedding(e: Iterable[float]) -> np.ndarray:
    e = np.array(e, dtype=float)
    norm = np.linalg.norm(e)
    if e.size == 0 or norm == 0:
        raise DimMismatch("embedding must be a nonzero vector")
    if abs(norm - 1.0) > 1e-12:
        e = e / norm
    return e


@dataclass(frozen=True, eq=False)
class Detection:
    """
    A single object proposal in one frame.

    Attributes:
        frame (int): Frame id
        stamp (float): Frame timestamp in seconds
        label (str): Category
        bbox (BBox2D): Image box
        hist (np.ndarray): Normalized color histogram
        emb (np.ndarray): Unit embedding
        t_co (np.ndarray): Object center in the camera frame (m)
        yaw_co (float): Object yaw relative to the camera heading (rad)
        dims (np.ndarray): Object dimensions (m)
        score (float): Detector confidence in [0, 1]
        object_id (Optional[int]): Ground-truth instance, written by the simulator only
    """
    frame: int
    stamp: float
    label: str
    bbox: BBox2D
    hist: np.ndarray
    emb: np.ndarray
    t_co: np.ndarray
    yaw_co: float
    dims: np.ndarray
    score: float = 1.0
    object_id: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        dims = np.array(self.dims, dtype=float).reshape(3)
        if np.any(dims <= 0):
            raise ValueError(f"dims must be positive, got {dims.tolist()}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "t_co", np.array(self.t_co, dtype=float).reshape(3))
        object.__setattr__(self, "hist", np.asarray(self.hist, dtype=float))
        object.__setattr__(self, "emb", np.asarray(self.emb, dtype=float))

    @cached_property
    def pose_in_camera(self) -> Pose:
        return object_in_camera(self.t_co, self.yaw_co)

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.t_co))


def extract_color_histogram(patch: np.ndarray, K_c: int = config.COLOR_CLUSTERS, seed: int = 0) -> np.ndarray:
    """
    Clusters the HSV pixels of an object patch with K-means++ and returns the
    per-cluster member fractions sorted descending.

    param patch: HSV pixels (N, 3) with H in [0, 360) and S, V in [0, 1]
    type patch: np.ndarray
    param K_c: Histogram length
    type K_c: int
    param seed: Seed for the K-means++ initialization
    type seed: int
    return: Histogram of length K_c summing to one
    rtype: np.ndarray
    raises EmptyPatch: If the patch holds no pixels
    """
    if K_c < 1:
        raise ValueError("K_c must be at least 1")
    X = np.array(patch, dtype=float).reshape(-1, 3)
    if len(X) == 0:
        raise EmptyPatch("cannot build a color histogram from an empty patch")
    X[:, 0] /= 360.0

    hist = np.zeros(K_c)
    k = min(K_c, len(np.unique(X, axis=0)))
    if k == 1:
        hist[0] = 1.0
        return hist

    clt = KMeans(n_clusters=k, init="k-means++", n_init=1,
                 max_iter=config.KMEANS_MAX_ITER, tol=config.KMEANS_TOL, random_state=seed)
    labels = clt.fit_predict(X)
    counts = np.sort(np.bincount(labels, minlength=k))[::-1]
    hist[:k] = counts / counts.sum()
    return hist


def _check_history(x: np.ndarray, history: List[np.ndarray]) -> np.ndarray:
    if len(history) == 0:
        raise EmptyHistory("similarity against an empty history")
    for i, h in enumerate(history):
        if np.ndim(h) != 1 or len(h) != x.shape[0]:
            raise DimMismatch(f"history entry {i} has shape {np.shape(h)}, expected ({x.shape[0]},)")
    return np.asarray(list(history), dtype=float)


def hist_similarity(h: np.ndarray, H: List[np.ndarray]) -> float:
    """
    Mean dot product between a histogram and a history of histograms.
    """
    h = np.asarray(h, dtype=float)
    return float(np.mean(_check_history(h, H) @ h))


def emb_similarity(e: np.ndarray, E: List[np.ndarray]) -> float:
    """
    Mean dot product between an embedding and a history of embeddings.
    """
    e = np.asarray(e, dtype=float)
    return float(np.mean(_check_history(e, E) @ e))


def filter_proposals(dets: List[Detection], cfg: FilterConfig) -> List[Detection]:
    """
    Drops proposals that are too large, too far or too unconfident. Order is preserved.

    param dets: Raw proposals
    type dets: List[Detection]
    param cfg: Gates
    type cfg: FilterConfig
    return: Kept proposals
    rtype: List[Detection]
    """
    kept = [d for d in dets
            if d.dims.max() <= cfg.max_dim and d.range <= cfg.max_range and d.score >= cfg.min_score]
    if len(kept) < len(dets):
        log.debug(f"[Filter] dropped {len(dets) - len(kept)} of {len(dets)} proposals")
    return kept


class DetectionRecord(BaseModel):
    """
    Schema of one detection JSONL line.
    """
    frame: int = Field(..., ge=0)
    stamp: float
    label: str = Field(..., min_length=1)
    bbox: List[float] = Field(..., min_length=4, max_length=4)
    dims: List[float] = Field(..., min_length=3, max_length=3)
    t_co: List[float] = Field(..., min_length=3, max_length=3)
    yaw_co: float
    hist: List[float] = Field(..., min_length=1)
    emb: List[float] = Field(..., min_length=1)
    score: float = Field(..., ge=0, le=1)
    object_id: Optional[int] = None


def detection_from_record(rec: DetectionRecord) -> Detection:
    return Detection(frame=rec.frame, stamp=rec.stamp, label=rec.label, bbox=BBox2D(*rec.bbox),
                     hist=normalize_histogram(rec.hist), emb=normalize_embedding(rec.emb),
                     t_co=np.array(rec.t_co), yaw_co=rec.yaw_co, dims=np.array(rec.dims),
                     score=rec.score, object_id=rec.object_id)


def detection_to_record(d: Detection) -> dict:
    rec = {
        "frame": int(d.frame),
        "stamp": float(d.stamp),
        "label": d.label,
        "bbox": [float(x) for x in d.bbox.as_list()],
        "dims": [float(x) for x in d.dims],
        "t_co": [float(x) for x in d.t_co],
        "yaw_co": float(d.yaw_co),
        "hist": [float(x) for x in d.hist],
        "emb": [float(x) for x in d.emb],
        "score": float(d.score),
    }
    if d.object_id is not None:
        rec["object_id"] = int(d.object_id)
    return rec


def parse_detections(lines: Iterable[str]) -> Dict[int, List[Detection]]:
    """
    Parses detection JSONL lines and groups them by frame id, ascending.

    param lines: JSONL text lines
    type lines: Iterable[str]
    return: Frame id to detections in file order
    rtype: Dict[int, List[Detection]]
    raises ParseError: If a line is not a JSON object
    raises SchemaError: If a line misses a field or carries an invalid value
    """
    frames: Dict[int, List[Detection]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), lineno) from e
        if not isinstance(raw, dict):
            raise ParseError("expected a JSON object", lineno)
        try:
            rec = DetectionRecord.model_validate(raw)
            det = detection_from_record(rec)
        except ValidationError as e:
            err = e.errors()[0]
            field_name = ".".join(str(p) for p in err["loc"]) or "?"
            raise SchemaError(err["msg"], lineno, field_name) from e
        except (DimMismatch, ValueError) as e:
            raise SchemaError(str(e), lineno, "hist/emb/bbox") from e
        frames.setdefault(det.frame, []).append(det)
    return dict(sorted(frames.items()))


def ingest_detections(path: str) -> Dict[int, List[Detection]]:
    """
    Reads a detection JSONL file.

    param path: File path
    type path: str
    return: Frame id to detections, ascending by frame
    rtype: Dict[int, List[Detection]]
    raises ParseError, SchemaError: On malformed content
    """
    with open(path, "r", encoding="utf-8") as f:
        frames = parse_detections(f)
    log.info(f"[Ingest] {sum(len(v) for v in frames.values())} detections in {len(frames)} frames from {path}")
    return frames


def write_detections(path: str, frames: Dict[int, List[Detection]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for frame in sorted(frames):
            for d in frames[frame]:
                f.write(json.dumps(detection_to_record(d)) + "\n")
