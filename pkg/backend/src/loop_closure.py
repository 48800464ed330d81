"""
Loop Closure and Drift Correction

Turns verified local/global object matches into a loop frame and a drift
transform, corrects the current camera pose, spreads the correction over the
trajectory since the loop frame with a camera-camera pose graph, and finally
re-anchors and fuses the affected landmarks.

Author: LunaLynx12
"""

from gauss_newton import GNReport, NLLSProblem, inv, solve_gauss_newton, var
from typing import Dict, List, Literal, Optional, Sequence, Set, Tuple
from geometry import Pose, rotation_distance, translation_distance
from models import LoopConfig, LoopRecord, SolverConfig
from scene_graph import MatchCandidate, MatchSet
from dataclasses import dataclass, field
from association import MapState
import numpy as np
import config
import logging
import math


log = logging.getLogger(__name__)


@dataclass
class ObjectConstraint:
    """
    A matched object seen in the local (drifted) map and in the global map.

    Attributes:
        T_l (Pose): Local world-from-object pose
        T_g (Pose): Global world-from-object pose
        info (np.ndarray): 6x6 information matrix
        s_l (float): Semantic similarity of the match
    """
    T_l: Pose
    T_g: Pose
    info: np.ndarray = field(default_factory=lambda: np.eye(6))
    s_l: float = 0.0

    def __post_init__(self):
        info = np.asarray(self.info, dtype=float)
        if info.shape != (6, 6) or not np.allclose(info, info.T) or np.linalg.eigvalsh(info).min() <= 0:
            raise ValueError("constraint information must be a symmetric positive definite 6x6 matrix")
        self.info = info


@dataclass
class LoopResult:
    loop_frame: int
    current_frame: int
    matches: MatchSet
    drift: Pose
    cost_before: float
    cost_after: float

    def to_record(self) -> LoopRecord:
        return LoopRecord(loop_frame=self.loop_frame, current_frame=self.current_frame,
                          n_matches=len(self.matches),
                          drift_translation=float(np.linalg.norm(self.drift.t)),
                          drift_rotation_deg=math.degrees(self.drift.rotation_angle()),
                          cost_before=self.cost_before, cost_after=self.cost_after)


def select_loop_frame(matches: MatchSet, state: MapState) -> int:
    """
    Earliest frame in which any matched global landmark was observed.

    raises ValueError: If there are no matches
    """
    if len(matches) == 0:
        raise ValueError("cannot select a loop frame without matches")
    return min(state.landmarks[p.glob].first_frame for p in matches.pairs)


def _drift_terms(c: ObjectConstraint, form: str, index: int) -> list:
    if form == "object":
        return [inv(index), c.T_l.inverse(), c.T_g]
    return [c.T_g.inverse(), inv(index), c.T_l]


def _drift_zero(c: ObjectConstraint, form: str) -> Pose:
    if form == "object":
        return c.T_l.inverse() @ c.T_g
    return c.T_l @ c.T_g.inverse()


def estimate_drift(constraints: Sequence[ObjectConstraint], form: Literal["world", "object"] = "world",
                   solver: Optional[SolverConfig] = None) -> Tuple[Pose, GNReport]:
    """
    Least-squares drift transform aligning local objects to their global matches.

    The "world" form minimizes log(T_g^-1 * D^-1 * T_l), zero at D = T_l * T_g^-1;
    the "object" form minimizes log(D^-1 * T_l^-1 * T_g), zero at D = T_l^-1 * T_g.
    The solve starts at the exact zero of the most similar match.

    param constraints: Matched object pairs
    type constraints: Sequence[ObjectConstraint]
    param form: Residual form
    type form: str
    param solver: Gauss-Newton settings
    type solver: Optional[SolverConfig]
    return: Drift transform and solve report
    rtype: Tuple[Pose, GNReport]
    raises ValueError: If no constraint is given
    raises NumericalError: Propagated from the solver
    """
    if not constraints:
        raise ValueError("drift estimation needs at least one constraint")
    best = max(range(len(constraints)), key=lambda i: (constraints[i].s_l, -i))
    problem = NLLSProblem("drift")
    d = problem.add_variable(_drift_zero(constraints[best], form))
    for c in constraints:
        problem.add_residual(_drift_terms(c, form, d), info=c.info)
    poses, report = solve_gauss_newton(problem, solver)
    return poses[d], report


def alignment_residuals(drift: Pose, constraints: Sequence[ObjectConstraint], form: str = "world") -> np.ndarray:
    """
    Translation misfit (m) of each constraint under a drift estimate.
    """
    if form == "object":
        return np.array([translation_distance(c.T_l @ drift, c.T_g) for c in constraints])
    return np.array([translation_distance(drift @ c.T_g, c.T_l) for c in constraints])


def rotation_residuals(drift: Pose, constraints: Sequence[ObjectConstraint], form: str = "world") -> np.ndarray:
    """
    Orientation misfit (rad) of each constraint under a drift estimate.
    """
    if form == "object":
        return np.array([rotation_distance(c.T_l @ drift, c.T_g) for c in constraints])
    return np.array([rotation_distance(drift @ c.T_g, c.T_l) for c in constraints])


def drift_is_plausible(drift: Pose, traveled: float, cfg: LoopConfig) -> bool:
    """
    Whether a drift could have accumulated over the given distance.

    Odometry error grows with the path, so a drift larger than the configured
    rate times the distance traveled since the loop frame (plus a floor) means
    the matches align the layout onto the wrong place.

    param drift: Drift estimate
    type drift: Pose
    param traveled: Odometry path length from the loop frame to the current frame, meters
    type traveled: float
    param cfg: Loop settings
    type cfg: LoopConfig
    return: True if both the translation and the rotation are within bounds
    rtype: bool
    """
    max_t = cfg.drift_floor + cfg.max_drift_rate * traveled
    max_r = cfg.drift_rotation_floor_deg + cfg.max_drift_rotation_rate_deg * traveled
    return float(np.linalg.norm(drift.t)) <= max_t and math.degrees(drift.rotation_angle()) <= max_r


def correct_current_pose(T_wc_k: Pose, drift: Pose) -> Pose:
    """
    Removes the drift from the current camera pose: T_drift^-1 * T_wc.
    """
    return drift.inverse() @ T_wc_k


def optimize_frame_graph(poses: Sequence[Pose], measurements: Sequence[Pose], anchors: Optional[Set[int]] = None,
                         information: Sequence[float] = config.ODOMETRY_INFORMATION,
                         solver: Optional[SolverConfig] = None) -> Tuple[List[Pose], GNReport]:
    """
    Camera-camera pose graph over a chain of keyframes.

    Minimizes the sum of log(T_{i,i+1}^-1 * T_wc_i^-1 * T_wc_{i+1}) weighted by the
    odometry information. Anchor poses are returned exactly as given.

    param poses: Initial chain poses c_1 ... c_M
    type poses: Sequence[Pose]
    param measurements: Relative poses T_{i,i+1}, M - 1 of them
    type measurements: Sequence[Pose]
    param anchors: Fixed indices, the two chain ends by default
    type anchors: Optional[Set[int]]
    param information: Information diagonal, rotation entries first
    type information: Sequence[float]
    param solver: Gauss-Newton settings
    type solver: Optional[SolverConfig]
    return: Optimized poses and the solve report
    rtype: Tuple[List[Pose], GNReport]
    raises ValueError: If fewer than 2 poses or a measurement count mismatch
    """
    if len(poses) < 2:
        raise ValueError("frame graph needs at least 2 poses")
    if len(measurements) != len(poses) - 1:
        raise ValueError(f"expected {len(poses) - 1} relative measurements, got {len(measurements)}")
    anchors = {0, len(poses) - 1} if anchors is None else set(anchors)

    problem = NLLSProblem("frame_graph")
    ids = [problem.add_variable(p, fixed=(i in anchors)) for i, p in enumerate(poses)]
    info = np.diag(information)
    for i, m in enumerate(measurements):
        problem.add_residual([m.inverse(), inv(ids[i]), var(ids[i + 1])], info=info)
    return solve_gauss_newton(problem, solver)


def propagate_correction(state: MapState, old_poses: Dict[int, Pose], new_poses: Dict[int, Pose],
                         matches: Optional[MatchSet] = None) -> MapState:
    """
    Writes corrected keyframes, re-anchors landmarks and fuses matched pairs.

    A landmark observed inside the optimized span moves with its first observing
    frame there: T_wo <- T_new * T_old^-1 * T_wo. Landmarks outside the span are
    untouched. Each matched local landmark is then absorbed by its global match
    and its id retired.

    param state: Global map
    type state: MapState
    param old_poses: Keyframe poses before optimization, by frame
    type old_poses: Dict[int, Pose]
    param new_poses: Keyframe poses after optimization, by frame
    type new_poses: Dict[int, Pose]
    param matches: Verified local/global pairs to fuse
    type matches: Optional[MatchSet]
    return: The updated map
    rtype: MapState
    """
    with state.lock:
        span = set(new_poses)
        for lm in state.landmarks.values():
            inside = [f for f in lm.observed_frames if f in span]
            if not inside:
                continue
            a = inside[0]
            lm.pose = new_poses[a] @ old_poses[a].inverse() @ lm.pose
        state.keyframes.update(new_poses)

        for pair in (matches.pairs if matches else []):
            _fuse(state, pair)
    return state


def _fuse(state: MapState, pair: MatchCandidate) -> None:
    local, glob = state.landmarks.get(pair.local), state.landmarks.get(pair.glob)
    if local is None or glob is None or local is glob:
        return
    for h in local.hists:
        glob.hists.append(h)
    for e in local.embs:
        glob.embs.append(e)
    glob.observed_frames = sorted(glob.observed_frames + local.observed_frames)
    glob.measurements.update(local.measurements)
    del state.landmarks[local.id]
    state.retired[local.id] = glob.id


class LoopCloser:
    """
    Applies loop closures to a map, each distinct match set at most once.
    """
    def __init__(self, cfg: Optional[LoopConfig] = None, min_matches: int = config.MIN_MATCHES):
        self.cfg = cfg or LoopConfig()
        self.min_matches = min_matches
        self.applied: Set[frozenset] = set()
        self.results: List[LoopResult] = []

    def constraints(self, state: MapState, matches: MatchSet) -> List[ObjectConstraint]:
        return [ObjectConstraint(state.landmarks[p.local].pose, state.landmarks[p.glob].pose, s_l=p.s_l)
                for p in matches.pairs]

    def estimate(self, state: MapState, matches: MatchSet) -> Tuple[MatchSet, Pose]:
        """
        Drift estimate with worst-first rejection of matches whose translation
        misfit exceeds max_residual or whose orientation misfit exceeds
        max_rotation_residual_deg.

        return: Surviving matches and their drift estimate
        rtype: Tuple[MatchSet, Pose]
        """
        kept = list(matches.pairs)
        while True:
            cons = self.constraints(state, MatchSet(kept))
            drift, _ = estimate_drift(cons, self.cfg.drift_form, self.cfg.solver)
            res_t = alignment_residuals(drift, cons, self.cfg.drift_form)
            res_r = np.degrees(rotation_residuals(drift, cons, self.cfg.drift_form))
            misfit = np.maximum(res_t / self.cfg.max_residual, res_r / self.cfg.max_rotation_residual_deg)
            worst = int(np.argmax(misfit))
            if misfit[worst] <= 1.0 or len(kept) <= 1:
                return MatchSet(kept), drift
            log.debug(f"[Loop] rejecting match {kept[worst].local}->{kept[worst].glob} "
                      f"(misfit {res_t[worst]:.3f} m, {res_r[worst]:.1f} deg)")
            del kept[worst]

    def close(self, state: MapState, frame: int, matches: MatchSet, drift: Pose) -> Optional[LoopResult]:
        """
        Corrects the current pose, optimizes the frame chain since the loop frame
        and propagates the correction. Holds the map lock throughout.

        param state: Global map
        type state: MapState
        param frame: Current keyframe id
        type frame: int
        param matches: Verified matches that survived rejection
        type matches: MatchSet
        param drift: Drift estimate for these matches
        type drift: Pose
        return: The applied loop, or None if gated or already applied
        rtype: Optional[LoopResult]
        """
        if len(matches) < self.min_matches or matches.key() in self.applied:
            return None
        with state.lock:
            loop_frame = select_loop_frame(matches, state)
            span = [f for f in state.frames() if loop_frame <= f <= frame]
            if loop_frame >= frame or any(f not in state.odometry for f in span[1:]):
                log.warning(f"[Loop] cannot optimize span {loop_frame}-{frame}")
                return None
            traveled = float(sum(np.linalg.norm(state.odometry[f].t) for f in span[1:]))
            if not drift_is_plausible(drift, traveled, self.cfg):
                log.warning(f"[Loop] rejecting {loop_frame} -> {frame}: drift {np.linalg.norm(drift.t):.2f} m / "
                            f"{math.degrees(drift.rotation_angle()):.1f} deg after {traveled:.1f} m")
                return None

            old = {f: state.keyframes[f] for f in span}
            initial = [old[f] for f in span[:-1]] + [correct_current_pose(old[frame], drift)]
            measurements = [state.odometry[f] for f in span[1:]]
            poses, report = optimize_frame_graph(initial, measurements, information=self.cfg.odometry_information,
                                                 solver=self.cfg.solver)
            propagate_correction(state, old, dict(zip(span, poses)), matches)

        self.applied.add(matches.key())
        result = LoopResult(loop_frame, frame, matches, drift, report.initial_cost, report.final_cost)
        self.results.append(result)
        log.info(f"[Loop] closed {loop_frame} -> {frame} with {len(matches)} matches, drift "
                 f"{np.linalg.norm(drift.t):.3f} m / {math.degrees(drift.rotation_angle()):.2f} deg")
        return result
