"""
Pipeline Driver

Runs the back-end over an observation stream: per keyframe it filters and
associates detections and refines the sliding window; every few keyframes it
matches the local map slice against the global map and, on a verified loop,
corrects the drift. Wall time is recorded per stage.

Author: LunaLynx12
"""

from evaluation import AssociationTally, Trajectory, ate, event_index, loop_opportunity, map_iou_report, opportunity_events, rotation_errors
from loop_closure import LoopCloser, LoopResult, correct_current_pose, select_loop_frame
from models import AteReport, LoopAttempt, LoopRecord, PipelineConfig, RuntimeRow
from scene_graph import MatchSet, build_graph, match_graphs, split_local_global
from errors import DataError, DegenerateGeometry, PipelineError, SemLoopError
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
from simulation import FrameObservation, GroundTruth, Scenario
from features import filter_proposals, ingest_detections
from association import MapState, associate_frame
from formats import canonical_digest, read_tum
from geometry import Pose, rotation_distance
from dataclasses import dataclass, field
from contextlib import contextmanager
from refinement import refine_window
from timeit import default_timer
import numpy as np
import logging
import config
import math


log = logging.getLogger(__name__)


@dataclass(eq=False)
class PipelineResult:
    """
    Everything one run produces.

    Attributes:
        trajectory (Trajectory): Final keyframe trajectory
        trajectory_before (Trajectory): Mapping-only trajectory, loop closure disabled
        snapshot (dict): Map export
        graph (dict): Scene graph of the final map
        loops (List[LoopRecord]): Applied loop closures
        attempts (List[LoopAttempt]): Loop checks with at least one verified match
        events (List[List[int]]): Check frames of each ground-truth loop opportunity
        runtime (List[RuntimeRow]): Per-stage wall time
        ate_before (Optional[AteReport]): ATE of the mapping-only trajectory, needs ground truth
        ate_after (Optional[AteReport]): ATE of the final trajectory, needs ground truth
        rotation_error_deg (Optional[float]): Mean rotation error of the final trajectory
        association_accuracy (Optional[float]): Share of correct association decisions, needs instance ids
        map_iou (Optional[dict]): Map quality against ground-truth cuboids
        ground_truth (Optional[Trajectory]): Ground-truth keyframe trajectory, when known
        digest (str): SHA-256 over trajectories, map and loop log
    """
    trajectory: Trajectory
    trajectory_before: Trajectory
    snapshot: dict
    graph: dict
    loops: List[LoopRecord]
    attempts: List[LoopAttempt]
    events: List[List[int]]
    runtime: List[RuntimeRow]
    ate_before: Optional[AteReport] = None
    ate_after: Optional[AteReport] = None
    rotation_error_deg: Optional[float] = None
    association_accuracy: Optional[float] = None
    map_iou: Optional[dict] = None
    ground_truth: Optional[Trajectory] = None
    digest: str = ""
    state: Optional[MapState] = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "frames": len(self.trajectory),
            "landmarks": len(self.snapshot["landmarks"]),
            "loops": len(self.loops),
            "attempts": len(self.attempts),
            "events": len(self.events),
            "ate_before": self.ate_before.summary() if self.ate_before else None,
            "ate_after": self.ate_after.summary() if self.ate_after else None,
            "rotation_error_deg": self.rotation_error_deg,
            "association_accuracy": self.association_accuracy,
            "map_mean_iou": self.map_iou["mean_iou"] if self.map_iou else None,
            "runtime": [r.model_dump() for r in self.runtime],
            "digest": self.digest,
        }


class SemanticMapper:
    """
    Sequential back-end over one observation stream, each instance with its own map.
    """
    def __init__(self, cfg: PipelineConfig, initial_pose: Pose, truth: Optional[GroundTruth] = None):
        self.cfg = cfg
        self.initial_pose = initial_pose
        self.truth = truth
        self.state = MapState(cfg.assoc.history_cap)
        self.closer = LoopCloser(cfg.loop, cfg.graph.min_matches)
        self.tally = AssociationTally()
        self.timings: Dict[str, List[float]] = {s: [] for s in config.RUNTIME_STAGES}
        self.attempts: List[LoopAttempt] = []
        self.check_frames: List[int] = []
        self._count = 0
        self._last: Optional[int] = None

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """
        Times a stage and tags any module error with its name.
        """
        start = default_timer()
        try:
            yield
        except PipelineError:
            raise
        except (SemLoopError, ValueError, ArithmeticError) as e:
            log.error(f"[Pipeline] {name} failed: {e}")
            raise PipelineError(name, e) from e
        finally:
            self.timings[name].append((default_timer() - start) * 1000.0)

    def process(self, obs: FrameObservation) -> None:
        """
        Runs every stage for one keyframe.

        param obs: Keyframe observation; all but the first need odometry
        type obs: FrameObservation
        raises PipelineError: If a stage fails
        """
        k, state, cfg = obs.frame, self.state, self.cfg
        with self.stage("data_association"):
            if self._last is None:
                state.add_keyframe(k, self.initial_pose, obs.stamp)
            elif obs.odometry is None:
                raise DataError(f"frame {k} has no odometry")
            else:
                state.add_keyframe(k, state.keyframes[self._last] @ obs.odometry, obs.stamp, obs.odometry)
            dets = filter_proposals(obs.detections, cfg.filter)
            candidates = [lm.id for lm in state.active_landmarks(k, cfg.assoc.window)]
            first_new = state.next_id
            assigned = associate_frame(state, k, dets, cfg.intrinsics, cfg.assoc)
            for i, lid in sorted(assigned.items()):
                self.tally.record(dets[i].object_id, lid, lid >= first_new, candidates)

        with self.stage("object_optimization"):
            if cfg.refine:
                frames = state.frames()[-cfg.window.size:]
                if len(frames) >= 2:
                    refine_window(state, frames, cfg.window)

        if cfg.loop_closure and self._count > 0 and self._count % cfg.loop_check_interval == 0:
            self.check_frames.append(k)
            with self.stage("loop_detection"):
                local, glob = split_local_global(state, k, cfg.graph.loop_window)
                matches = match_graphs(local, glob, cfg.graph)
            if len(matches):
                with self.stage("drift_correction"):
                    self._attempt(k, matches)

        self._last = k
        self._count += 1

    def _attempt(self, k: int, matches: MatchSet) -> Optional[LoopResult]:
        kept, drift = self.closer.estimate(self.state, matches)
        loop_frame = select_loop_frame(kept, self.state)
        corrected = correct_current_pose(self.state.keyframes[k], drift)
        result = self.closer.close(self.state, k, kept, drift)
        if result is not None:
            self.tally.merge(self.state.retired)

        attempt = LoopAttempt(frame=k, loop_frame=loop_frame, score=kept.score, n_matches=len(kept),
                              declared=result is not None, est_position=[float(x) for x in corrected.t])
        if self.truth is not None and k < len(self.truth.cameras):
            gt = self.truth.cameras[k]
            attempt.gt_position = [float(x) for x in gt.t]
            attempt.opportunity = loop_opportunity(self.truth.positions(), k, self.cfg.tau_l, self.cfg.min_loop_gap)
            attempt.loop_rotation_deg = math.degrees(rotation_distance(gt, self.truth.cameras[loop_frame]))
            attempt.rotation_error_deg = math.degrees(rotation_distance(corrected, gt))
        self.attempts.append(attempt)
        log.debug(f"[Pipeline] loop attempt at {k}: {len(kept)} matches, score {kept.score:.3f}")
        return result

    def trajectory(self) -> Trajectory:
        frames = self.state.frames()
        return Trajectory(np.array([self.state.stamps[f] for f in frames]), [self.state.keyframes[f] for f in frames])

    def runtime(self) -> List[RuntimeRow]:
        return [RuntimeRow(stage=s, mean_ms=float(np.mean(v)) if v else 0.0, max_ms=float(np.max(v)) if v else 0.0)
                for s, v in self.timings.items()]


def _map(observations: Sequence[FrameObservation], cfg: PipelineConfig, initial_pose: Pose,
         truth: Optional[GroundTruth]) -> SemanticMapper:
    mapper = SemanticMapper(cfg, initial_pose, truth)
    for obs in observations:
        mapper.process(obs)
    return mapper


def _ate(est: Trajectory, gt: Trajectory, with_scale: bool) -> AteReport:
    try:
        return ate(est, gt, with_scale)
    except DegenerateGeometry as e:
        log.warning(f"[Pipeline] alignment degenerate ({e}), reporting unaligned ATE")
        return ate(est, gt, align=False)


def _trajectory_rows(traj: Trajectory) -> list:
    return [[float(s), *[float(x) for x in p.t], *[float(x) for x in p.R.ravel()]]
            for s, p in zip(traj.stamps, traj.poses)]


def run_pipeline(observations: Sequence[FrameObservation], cfg: Optional[PipelineConfig] = None,
                 initial_pose: Optional[Pose] = None, truth: Optional[GroundTruth] = None) -> PipelineResult:
    """
    Runs the back-end over an observation stream and evaluates it when ground truth is given.

    param observations: Keyframes in order
    type observations: Sequence[FrameObservation]
    param cfg: Pipeline settings, defaults when omitted
    type cfg: Optional[PipelineConfig]
    param initial_pose: Pose of the first keyframe, identity by default
    type initial_pose: Optional[Pose]
    param truth: Ground truth for ATE, loop diagnostics and map quality
    type truth: Optional[GroundTruth]
    return: Trajectories, map, loop logs, metrics and runtime table
    rtype: PipelineResult
    raises DataError: If there are no observations
    raises PipelineError: If a stage fails
    """
    cfg = cfg or PipelineConfig()
    if not observations:
        raise DataError("no observations to process")
    initial_pose = initial_pose or Pose.identity()

    mapper = _map(observations, cfg, initial_pose, truth)
    after = mapper.trajectory()
    before = after
    if mapper.closer.results:
        before = _map(observations, cfg.model_copy(update={"loop_closure": False}), initial_pose, None).trajectory()

    loops = [r.to_record() for r in mapper.closer.results]
    snapshot = mapper.state.snapshot()
    with mapper.state.lock:
        landmarks = list(mapper.state.landmarks.values())
    result = PipelineResult(
        trajectory=after, trajectory_before=before, snapshot=snapshot,
        graph=build_graph(landmarks, cfg.graph.knn).export(), loops=loops, attempts=mapper.attempts,
        events=[], runtime=mapper.runtime(), association_accuracy=mapper.tally.accuracy, state=mapper.state)

    if truth is not None:
        gt = Trajectory(np.array(truth.stamps), truth.cameras)
        result.ground_truth = gt
        result.events = opportunity_events(mapper.check_frames, truth.positions(), cfg.tau_l, cfg.min_loop_gap)
        index = event_index(result.events)
        for a in result.attempts:
            a.event = index.get(a.frame)
        result.ate_before = _ate(before, gt, cfg.align_scale)
        result.ate_after = _ate(after, gt, cfg.align_scale)
        result.rotation_error_deg = float(np.mean(rotation_errors(after, gt)))
        result.map_iou = map_iou_report(landmarks, truth.objects)

    result.digest = canonical_digest({
        "trajectory": _trajectory_rows(after),
        "trajectory_before": _trajectory_rows(before),
        "map": snapshot,
        "loops": [r.model_dump() for r in loops],
    })
    log.info(f"[Pipeline] {len(after)} frames, {len(snapshot['landmarks'])} landmarks, {len(loops)} loops"
             + (f", ATE {result.ate_before.rmse:.4f} -> {result.ate_after.rmse:.4f} m" if result.ate_after else ""))
    return result


def run_scenario(scenario: Scenario, cfg: Optional[PipelineConfig] = None) -> PipelineResult:
    """
    Runs the pipeline on a simulated scenario, starting from the true first pose.
    """
    return run_pipeline(scenario.observations, cfg, scenario.truth.cameras[0], scenario.truth)


def load_observations(detections_path: str, odometry_path: str) -> Tuple[List[FrameObservation], Pose]:
    """
    Builds the observation stream from a detection JSONL file and an odometry TUM trajectory.

    Keyframe i is the i-th odometry pose; its relative odometry is the motion
    from pose i - 1. Detections are grouped by frame id.

    param detections_path: Detection JSONL
    type detections_path: str
    param odometry_path: Dead-reckoned TUM trajectory
    type odometry_path: str
    return: Observations and the first keyframe pose
    rtype: Tuple[List[FrameObservation], Pose]
    raises DataError: If a detection refers to a frame without odometry
    """
    odom = read_tum(odometry_path)
    if len(odom) == 0:
        raise DataError(f"{odometry_path} holds no poses")
    frames = ingest_detections(detections_path)
    extra = [f for f in frames if f >= len(odom)]
    if extra:
        raise DataError(f"detections for frame {extra[0]} but only {len(odom)} odometry poses")
    observations = [
        FrameObservation(i, float(odom.stamps[i]), odom.poses[i - 1].inverse() @ odom.poses[i] if i else None,
                         frames.get(i, []))
        for i in range(len(odom))
    ]
    return observations, odom.poses[0]
