from association import (MapState, apply_associations, assign_matches, associate_frame, build_similarity_matrix,
                         detection_similarity)
from geometry import CameraIntrinsics, camera_pose, object_in_camera, project_box
from features import Detection, normalize_embedding
from models import AssocConfig
from functools import lru_cache
import numpy as np
import pytest

K = CameraIntrinsics.default()


def detection(t_co, label="car", hist=(0.6, 0.4), emb=(1.0, 0.0, 0.0), frame=0, dims=(4.5, 1.8, 1.5)):
    dims = np.array(dims)
    bbox = project_box(object_in_camera(np.array(t_co, dtype=float), 0.0), dims, K)
    return Detection(frame=frame, stamp=0.1 * frame, label=label, bbox=bbox, hist=np.array(hist),
                     emb=normalize_embedding(emb), t_co=np.array(t_co, dtype=float), yaw_co=0.0, dims=dims)


def state_with(*dets, frame=0, T_wc=None):
    state = MapState()
    state.add_keyframe(frame, T_wc or camera_pose(0.0, 0.0, 0.0), 0.0)
    for d in dets:
        state.spawn(frame, d)
    return state


def brute_force(W, threshold):
    gated = np.where(W >= threshold, W, 0.0)

    @lru_cache(maxsize=None)
    def best(row, used):
        if row == gated.shape[0]:
            return 0.0
        options = [best(row + 1, used)]
        for c in range(gated.shape[1]):
            if not used & (1 << c):
                options.append(gated[row, c] + best(row + 1, used | (1 << c)))
        return max(options)

    return best(0, 0)


def test_label_gate():
    d = detection((0, 0, 10))
    state = state_with(detection((0, 0, 10), label="tree"))
    T_wc = state.keyframes[0]
    for lam in [0.0, 0.3, 1.0]:
        assert detection_similarity(d, state.landmarks[0], T_wc, K, lam) == 0.0


def test_exact_reprojection_with_iou_only():
    d = detection((1.0, 0.0, 12.0))
    state = state_with(d)
    assert detection_similarity(d, state.landmarks[0], state.keyframes[0], K, 1.0) == pytest.approx(1.0)


def test_balanced_similarity_arithmetic():
    d = detection((1.0, 0.0, 12.0), hist=(1.0, 0.0))
    state = state_with(d)
    assert detection_similarity(d, state.landmarks[0], state.keyframes[0], K, 0.5) == pytest.approx(1.0)


def test_negative_embedding_is_clamped():
    d = detection((0, 0, 10), hist=(1.0, 0.0), emb=(1.0, 0.0, 0.0))
    state = state_with(detection((0, 0, 10), hist=(1.0, 0.0), emb=(-1.0, 0.0, 0.0)))
    score = detection_similarity(d, state.landmarks[0], state.keyframes[0], K, 0.0)
    assert score == 0.0


def test_landmark_behind_camera_has_zero_iou():
    state = state_with(detection((0, 0, 10)))
    turned = camera_pose(0.0, 0.0, np.pi)
    d = detection((0, 0, 10))
    assert detection_similarity(d, state.landmarks[0], turned, K, 1.0) == 0.0


def test_similarity_matrix_shape_and_label_zeros():
    dets = [detection((0, 0, 10)), detection((3, 0, 15), label="tree")]
    state = state_with(detection((0, 0, 10)), detection((3, 0, 15), label="tree"), detection((-3, 0, 20)))
    W, ids = build_similarity_matrix(dets, list(state.landmarks.values()), state.keyframes[0], K, AssocConfig())
    assert W.shape == (2, 3) and ids == [0, 1, 2]
    assert W[0, 1] == 0.0 and W[1, 0] == 0.0 and W[1, 2] == 0.0
    assert W[0, 0] > W[0, 2] > 0.0

    W, ids = build_similarity_matrix(dets, [], state.keyframes[0], K, AssocConfig())
    assert W.shape == (2, 0) and ids == []


def test_assign_matches_examples():
    assert assign_matches(np.array([[0.9]]), [7], 0.3) == ([(0, 7)], [])
    assert assign_matches(np.array([[0.2]]), [7], 0.3) == ([], [0])
    matches, unmatched = assign_matches(np.array([[0.9, 0.8], [0.85, 0.1]]), [10, 11], 0.3)
    assert matches == [(0, 11), (1, 10)] and unmatched == []
    # Empty map: every detection spawns
    assert assign_matches(np.zeros((2, 0)), [], 0.3) == ([], [0, 1])
    assert assign_matches(np.zeros((0, 3)), [1, 2, 3], 0.3) == ([], [])


def test_assign_matches_equals_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n, m = rng.integers(1, 7, size=2)
        W = rng.uniform(0, 1, size=(n, m)) * (rng.uniform(size=(n, m)) > 0.3)
        matches, unmatched = assign_matches(W, list(range(m)), 0.35)
        total = sum(W[i, j] for i, j in matches)
        assert total == pytest.approx(brute_force(W, 0.35), abs=1e-12)
        assert sorted([i for i, _ in matches] + unmatched) == list(range(n))
        assert len({j for _, j in matches}) == len(matches)


def test_spawn_places_landmark_in_world():
    d = detection((0.0, 0.0, 5.0))
    state = state_with(d, T_wc=camera_pose(0.0, 0.0, 0.0))
    # Optical z is world x for a camera with heading 0
    assert np.allclose(state.landmarks[0].pose.t, [5.0, 0.0, 1.5])
    assert state.landmarks[0].first_frame == 0


def test_history_is_capped_fifo():
    state = MapState(history_cap=3)
    state.add_keyframe(0, camera_pose(0, 0, 0), 0.0)
    lm = state.spawn(0, detection((0, 0, 10), hist=(0.9, 0.1)))
    for f in range(1, 5):
        state.add_keyframe(f, camera_pose(0, 0, 0), 0.1 * f)
        apply_associations(state, f, [(0, lm.id)], [], [detection((0, 0, 10), hist=(0.5 + 0.1 * f, 0.5 - 0.1 * f), frame=f)])
    assert len(lm.hists) == 3
    assert lm.hists[0][0] == pytest.approx(0.7)
    assert lm.obs_count == 5


def test_replaying_a_frame_creates_no_landmarks():
    dets = [detection((0, 0, 10)), detection((4, 0, 20), label="tree", emb=(0.0, 1.0, 0.0))]
    state = MapState()
    state.add_keyframe(0, camera_pose(0, 0, 0), 0.0)
    first = associate_frame(state, 0, dets, K, AssocConfig())
    assert sorted(first.values()) == [0, 1]
    second = associate_frame(state, 0, dets, K, AssocConfig())
    assert second == first
    assert len(state.landmarks) == 2


def test_landmark_ids_are_never_reused():
    state = state_with(detection((0, 0, 10)), detection((2, 0, 10)))
    del state.landmarks[0]
    assert state.spawn(0, detection((0, 0, 12))).id == 2
