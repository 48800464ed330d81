"""
Sliding-Window Object Refinement

Jointly refines the camera poses of the most recent keyframes and the poses
of well-tracked objects they observe, using the object-camera measurement
residual log(T_wo^-1 * T_wc * T_co) and, optionally, odometry residuals
between consecutive window cameras.

Author: LunaLynx12
"""

from gauss_newton import GNReport, NLLSProblem, inv, solve_gauss_newton, var
from typing import Dict, List, Optional, Tuple
from geometry import Pose, se3_log
from association import MapState
from models import WindowConfig
import networkx as nx
import numpy as np
import logging


log = logging.getLogger(__name__)


def object_camera_residual(T_wo: Pose, T_wc: Pose, T_co: Pose) -> np.ndarray:
    """
    Measurement error between an object pose and its camera-frame observation.

    param T_wo: World-from-object pose
    type T_wo: Pose
    param T_wc: World-from-camera pose
    type T_wc: Pose
    param T_co: Measured camera-from-object pose
    type T_co: Pose
    return: Twist log(T_wo^-1 * T_wc * T_co)
    rtype: np.ndarray
    raises AngleNearPi: If the composite rotation is too close to pi
    """
    return se3_log(T_wo.inverse() @ T_wc @ T_co)


def camera_camera_residual(T_wc_i: Pose, T_wc_j: Pose, T_ij: Pose) -> np.ndarray:
    """
    Odometry error log(T_ij^-1 * T_wc_i^-1 * T_wc_j).
    """
    return se3_log(T_ij.inverse() @ T_wc_i.inverse() @ T_wc_j)


def _fix_gauge(problem: NLLSProblem, order: List[int]) -> None:
    """
    Fixes the first variable (in `order`) of every connected component that has no fixed variable.
    """
    graph = nx.Graph()
    graph.add_nodes_from(range(len(problem.poses)))
    for block in problem.blocks:
        vs = block.variables()
        graph.add_edges_from(zip(vs, vs[1:]))
    rank = {v: i for i, v in enumerate(order)}
    for component in nx.connected_components(graph):
        if not any(problem.fixed[v] for v in component):
            problem.fixed[min(component, key=lambda v: rank.get(v, len(rank) + v))] = True


def refine_window(state: MapState, frames: List[int], cfg: Optional[WindowConfig] = None) -> Tuple[MapState, Optional[GNReport]]:
    """
    Refines window cameras and eligible objects in place.

    Objects observed more than `min_track_count` times contribute one residual per
    observing window frame. The oldest window camera is fixed; any camera left
    disconnected from it is fixed as well. Refined objects also take the mean
    of their measured dims.

    param state: Global map
    type state: MapState
    param frames: Window keyframe ids
    type frames: List[int]
    param cfg: Window settings
    type cfg: Optional[WindowConfig]
    return: The updated map and the solve report (None when nothing was eligible)
    rtype: Tuple[MapState, Optional[GNReport]]
    raises ValueError: If the window holds fewer than 2 frames
    raises NumericalError: Propagated from the solver
    """
    cfg = cfg or WindowConfig()
    frames = sorted(frames)
    if len(frames) < 2:
        raise ValueError("refinement window needs at least 2 frames")
    window = set(frames)

    with state.lock:
        eligible = [lm for lm in state.landmarks.values()
                    if lm.obs_count > cfg.min_track_count and window.intersection(lm.measurements)]
        if not eligible:
            log.debug(f"[Refinement] no eligible objects in window {frames[0]}-{frames[-1]}")
            return state, None

        problem = NLLSProblem(f"window_{frames[-1]}")
        cams: Dict[int, int] = {f: problem.add_variable(state.keyframes[f], fixed=(f == frames[0])) for f in frames}
        objs: Dict[int, int] = {lm.id: problem.add_variable(lm.pose) for lm in eligible}

        for lm in eligible:
            for f in sorted(window.intersection(lm.measurements)):
                problem.add_residual([inv(objs[lm.id]), var(cams[f]), lm.measurements[f].T_co], tag=f"obj{lm.id}@{f}")

        if cfg.odometry_constraints:
            info = np.diag(cfg.odometry_information)
            for prev, cur in zip(frames, frames[1:]):
                if cur in state.odometry and cur == prev + 1:
                    problem.add_residual([state.odometry[cur].inverse(), inv(cams[prev]), var(cams[cur])],
                                         info=info, tag=f"odom{prev}-{cur}")

        _fix_gauge(problem, [cams[f] for f in frames] + [objs[lm.id] for lm in eligible])
        poses, report = solve_gauss_newton(problem, cfg.solver)

        for f in frames:
            state.keyframes[f] = poses[cams[f]]
        for lm in eligible:
            lm.pose = poses[objs[lm.id]]
            lm.dims = np.mean([m.dims for m in lm.measurements.values()], axis=0)

    log.debug(f"[Refinement] window {frames[0]}-{frames[-1]}: {len(eligible)} objects, "
              f"cost {report.initial_cost:.6g} -> {report.final_cost:.6g} in {report.iterations} iterations")
    return state, report
