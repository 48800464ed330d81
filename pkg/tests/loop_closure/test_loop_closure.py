from loop_closure import (LoopCloser, ObjectConstraint, correct_current_pose, drift_is_plausible, estimate_drift,
                          optimize_frame_graph, propagate_correction, rotation_residuals, select_loop_frame)
from geometry import BBox2D, Pose, camera_pose, rot_z, se3_exp, translation_distance
from scene_graph import MatchCandidate, MatchSet
from features import Detection
from association import MapState
from models import LoopConfig
import numpy as np
import pytest

DRIFT = se3_exp(np.array([0.0, 0.0, 0.15, 1.2, -0.8, 0.0]))
OBJECTS = [((4.0, 6.0, 0.75), 0.2), ((10.0, -5.0, 0.75), 1.0), ((16.0, 7.0, 0.75), -0.5), ((9.0, 9.0, 0.75), 2.0)]


def random_pose(rng, angle=0.5, spread=10.0):
    return se3_exp(np.concatenate([rng.uniform(-angle, angle, 3), rng.uniform(-spread, spread, 3)]))


def sighting(frame, T_wc, center, yaw):
    T_co = T_wc.inverse() @ Pose(rot_z(yaw), np.asarray(center, dtype=float))
    heading = np.arctan2(T_wc.R[1, 2], T_wc.R[0, 2])
    return Detection(frame=frame, stamp=0.1 * frame, label="car", bbox=BBox2D(0, 0, 10, 10),
                     hist=np.array([1.0]), emb=np.array([1.0]), t_co=T_co.t, yaw_co=yaw - heading,
                     dims=np.array([4.0, 1.8, 1.5]))


def revisit(n_frames=11):
    """
    Straight drive with exact odometry. The objects are mapped at frame 0 and
    mapped again as new landmarks at the last frame, whose pose carries DRIFT.
    """
    state = MapState()
    truth = [camera_pose(2.0 * f, 0.0, 0.0) for f in range(n_frames)]
    last = n_frames - 1
    for f, T in enumerate(truth):
        state.add_keyframe(f, DRIFT @ T if f == last else T, 0.1 * f, truth[f - 1].inverse() @ T if f else None)
    pairs = []
    for center, yaw in OBJECTS:
        g = state.spawn(0, sighting(0, truth[0], center, yaw))
        l = state.spawn(last, sighting(last, truth[last], center, yaw))
        pairs.append(MatchCandidate(l.id, g.id, 0.0, 2.0))
    return state, truth, MatchSet(pairs)


@pytest.mark.parametrize("form", ["world", "object"])
def test_planted_drift_is_recovered_exactly(form):
    rng = np.random.default_rng(1)
    for _ in range(20):
        D = random_pose(rng)
        globals_ = [random_pose(rng) for _ in range(5)]
        if form == "world":
            cons = [ObjectConstraint(D @ T_g, T_g) for T_g in globals_]
        else:
            cons = [ObjectConstraint(T_g @ D.inverse(), T_g) for T_g in globals_]
        est, _ = estimate_drift(cons, form)
        assert est.is_close(D, tol=1e-8)


def test_drift_error_statistics():
    sigma, n, trials = 0.05, 6, 200
    within = 0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        D = random_pose(rng)
        centers = rng.uniform(-10, 10, size=(n, 3))
        centers -= centers.mean(axis=0)
        truth = [Pose(rot_z(rng.uniform(-np.pi, np.pi)), c) for c in centers]
        noisy = [Pose(T.R, T.t + rng.normal(0, sigma, 3)) for T in truth]
        est, _ = estimate_drift([ObjectConstraint(D @ T, T_n) for T, T_n in zip(truth, noisy)])
        within += np.linalg.norm(est.t - D.t) <= 3 * sigma / np.sqrt(n)
    assert within >= 0.95 * trials


def test_estimate_drift_needs_constraints():
    with pytest.raises(ValueError):
        estimate_drift([])


def test_constraint_information_must_be_positive_definite():
    with pytest.raises(ValueError):
        ObjectConstraint(Pose.identity(), Pose.identity(), info=np.zeros((6, 6)))


def test_correct_current_pose_undoes_drift():
    T = camera_pose(3.0, 4.0, 0.7)
    assert correct_current_pose(DRIFT @ T, DRIFT).is_close(T, tol=1e-12)


def test_frame_graph_keeps_consistent_chain():
    poses = [camera_pose(2.0 * i, 0.0, 0.1 * i) for i in range(6)]
    rel = [a.inverse() @ b for a, b in zip(poses, poses[1:])]
    out, report = optimize_frame_graph(poses, rel)
    assert report.initial_cost == pytest.approx(0.0, abs=1e-20)
    assert all(o.is_close(p, tol=1e-9) for o, p in zip(out, poses))


def test_frame_graph_spreads_end_correction():
    poses = [camera_pose(2.0 * i, 0.0, 0.0) for i in range(6)]
    rel = [a.inverse() @ b for a, b in zip(poses, poses[1:])]
    moved = poses[:-1] + [camera_pose(10.0, 1.0, 0.0)]
    out, report = optimize_frame_graph(moved, rel)
    assert out[0] is moved[0] and out[-1] is moved[-1]
    assert report.final_cost < report.initial_cost
    lateral = [o.t[1] for o in out]
    assert all(a < b for a, b in zip(lateral, lateral[1:]))


def test_frame_graph_input_checks():
    with pytest.raises(ValueError):
        optimize_frame_graph([Pose.identity()], [])
    with pytest.raises(ValueError):
        optimize_frame_graph([Pose.identity(), Pose.identity()], [])


def test_select_loop_frame_uses_earliest_global_observation():
    state, _, matches = revisit()
    assert select_loop_frame(matches, state) == 0
    with pytest.raises(ValueError):
        select_loop_frame(MatchSet(), state)


def test_propagation_moves_landmarks_with_their_first_frame():
    state, truth, _ = revisit()
    outside = state.landmarks[0].pose
    shift = Pose.from_translation(0.0, 2.0, 0.0)
    old = {f: state.keyframes[f] for f in range(5, 11)}
    new = {f: shift @ p for f, p in old.items()}
    moving = state.landmarks[1].pose
    propagate_correction(state, old, new)
    assert state.landmarks[0].pose is outside
    assert state.landmarks[1].pose.is_close(shift @ moving, tol=1e-12)
    assert state.keyframes[7].is_close(shift @ truth[7], tol=1e-12)


def test_loop_removes_drift_and_fuses_duplicates():
    state, truth, matches = revisit()
    closer = LoopCloser(LoopConfig())
    kept, drift = closer.estimate(state, matches)
    assert len(kept) == len(OBJECTS)
    assert drift.is_close(DRIFT, tol=1e-8)

    result = closer.close(state, 10, kept, drift)
    assert result is not None and result.loop_frame == 0
    assert state.keyframes[10].is_close(truth[10], tol=1e-6)
    assert len(state.landmarks) == len(OBJECTS)
    assert state.retired == {p.local: p.glob for p in matches.pairs}
    for p in matches.pairs:
        assert state.landmarks[p.glob].observed_frames == [0, 10]
    assert result.to_record().n_matches == len(OBJECTS)


def test_same_loop_is_applied_once():
    state, _, matches = revisit()
    closer = LoopCloser()
    kept, drift = closer.estimate(state, matches)
    assert closer.close(state, 10, kept, drift) is not None
    assert closer.close(state, 10, kept, drift) is None
    assert len(closer.results) == 1


def test_too_few_matches_are_not_closed():
    state, _, matches = revisit()
    closer = LoopCloser(min_matches=5)
    kept, drift = closer.estimate(state, matches)
    assert closer.close(state, 10, kept, drift) is None
    assert 10 in state.keyframes and len(state.retired) == 0


def test_outlier_match_is_rejected():
    state, _, matches = revisit()
    outlier = matches.pairs[0].local
    state.landmarks[outlier].pose = Pose.from_translation(0.0, 8.0, 0.0) @ state.landmarks[outlier].pose
    kept, drift = LoopCloser().estimate(state, matches)
    assert outlier not in {p.local for p in kept.pairs}
    assert len(kept) == len(OBJECTS) - 1
    assert translation_distance(drift, DRIFT) < 1e-6


def test_misoriented_match_is_rejected():
    state, _, matches = revisit()
    outlier = matches.pairs[1].local
    lm = state.landmarks[outlier]
    lm.pose = Pose(lm.pose.R @ rot_z(np.pi / 2), lm.pose.t)
    closer = LoopCloser()
    res = rotation_residuals(DRIFT, closer.constraints(state, matches))
    assert np.allclose(np.delete(res, 1), 0.0, atol=1e-9) and res[1] == pytest.approx(np.pi / 2)

    kept, drift = closer.estimate(state, matches)
    assert outlier not in {p.local for p in kept.pairs}
    assert len(kept) == len(OBJECTS) - 1
    assert drift.is_close(DRIFT, tol=1e-6)


def test_drift_plausibility_grows_with_distance():
    cfg = LoopConfig()
    assert drift_is_plausible(Pose.identity(), 0.0, cfg)
    assert drift_is_plausible(DRIFT, 20.0, cfg)
    small = Pose(rot_z(np.radians(5.0)), np.array([3.0, 0.0, 0.0]))
    assert drift_is_plausible(small, 30.0, cfg)
    assert not drift_is_plausible(small, 10.0, cfg)
    # A layout matched onto the far side of a rectangle
    flipped = Pose(rot_z(np.radians(170.0)), np.array([80.0, 40.0, 0.0]))
    assert not drift_is_plausible(flipped, 110.0, cfg)


def test_implausible_drift_is_not_closed():
    state, truth, matches = revisit()
    closer = LoopCloser(LoopConfig(max_drift_rate=0.0, drift_floor=0.5))
    kept, drift = closer.estimate(state, matches)
    assert len(kept) == len(OBJECTS)
    assert closer.close(state, 10, kept, drift) is None
    assert closer.results == [] and state.retired == {}
    assert state.keyframes[10].is_close(DRIFT @ truth[10], tol=1e-12)
