from scene_graph import (MatchCandidate, Vertex, build_graph, candidate_matches, detect_loop, layout_descriptor,
                         layout_difference, match_graphs, semantic_similarity, split_local_global, verify_matches)
from geometry import BBox2D, Pose, camera_pose, rot_z, se3_exp
from features import Detection, normalize_embedding
from association import MapState
from errors import DimMismatch
from models import GraphConfig
import numpy as np
import pytest


def vertex(vid, position, label="car", dims=(4.5, 1.8, 1.5), hist=(0.5, 0.5), emb=(1.0, 0.0)):
    return Vertex(id=vid, label=label, pose=Pose(np.eye(3), np.asarray(position, dtype=float)),
                  dims=np.asarray(dims, dtype=float), hist=np.asarray(hist, dtype=float),
                  emb=normalize_embedding(emb))


def random_scene(rng, n=8, offset=0):
    labels = ["car", "tree"]
    return [vertex(offset + i, [*rng.uniform(-20, 20, 2), 0.75], labels[i % 2],
                   rng.uniform(1, 5, 3), rng.dirichlet(np.ones(6)), rng.normal(size=8))
            for i in range(n)]


def moved(vertices, T, offset, scale=1.0):
    return [Vertex(id=v.id + offset, label=v.label, pose=Pose(T.R, T.R @ (scale * v.position) + T.t),
                   dims=v.dims, hist=v.hist, emb=v.emb)
            for v in vertices]


def test_knn_edges_on_a_line():
    g = build_graph([vertex(i, (x, 0, 0)) for i, x in enumerate([0.0, 1.0, 3.0, 7.0])], knn=1)
    assert g.export()["edges"] == [[0, 1, 1.0], [1, 2, 2.0], [2, 3, 4.0]]
    assert g.neighbors(3) == [(4.0, 2)]


def test_knn_ties_break_by_id():
    g = build_graph([vertex(i, p) for i, p in enumerate([(0, 0, 0), (1, 0, 0), (-1, 0, 0)])], knn=1)
    assert g.neighbors(0) == [(1.0, 1)]


def test_descriptor_is_sorted_and_normalized():
    g = build_graph([vertex(i, (x, 0, 0)) for i, x in enumerate([0.0, 1.0, 3.0, 7.0])], knn=3)
    assert np.allclose(layout_descriptor(g, 0), [1 / 11, 3 / 11, 7 / 11])


def test_descriptor_pads_small_graphs_and_zeroes_isolated_vertices():
    g = build_graph([vertex(0, (0, 0, 0)), vertex(1, (2, 0, 0))], knn=3)
    assert np.allclose(layout_descriptor(g, 0), [0, 0, 1])
    single = build_graph([vertex(0, (0, 0, 0))], knn=3)
    assert np.all(layout_descriptor(single, 0) == 0)


def test_descriptor_invariant_to_rigid_motion_and_scale():
    rng = np.random.default_rng(8)
    for _ in range(20):
        scene = random_scene(rng)
        T = se3_exp(np.concatenate([rng.uniform(-np.pi / 2, np.pi / 2, 3), rng.uniform(-50, 50, 3)]))
        copy = moved(scene, T, 100, scale=rng.uniform(0.2, 5))
        g, h = build_graph(scene, 4), build_graph(copy, 4)
        for v in scene:
            assert layout_difference(layout_descriptor(g, v.id), layout_descriptor(h, v.id + 100)) <= 1e-9


def test_layout_difference_needs_equal_lengths():
    assert layout_difference([0.2, 0.8], [0.2, 0.8]) == 0.0
    with pytest.raises(DimMismatch):
        layout_difference([0.2, 0.8], [0.1, 0.2, 0.7])


def test_semantic_similarity_cases():
    a = vertex(0, (1, 2, 0))
    assert semantic_similarity(a, vertex(1, (1, 2, 0)), 0.5) == pytest.approx(2.0)
    assert semantic_similarity(a, vertex(1, (1, 2, 0), label="tree"), 0.5) == 0.0
    far = vertex(1, (1, 2, 0), hist=(1.0, 0.0), emb=(0.0, 1.0))
    assert semantic_similarity(a, far, 1.0) == pytest.approx(2.0)
    expected = np.exp(-np.sqrt(0.5)) + np.exp(-np.sqrt(2.0))
    assert semantic_similarity(a, far, 0.0) == pytest.approx(expected)
    with pytest.raises(ValueError):
        semantic_similarity(a, far, 1.5)


def test_literal_appearance_uses_dot_products():
    a = vertex(0, (0, 0, 0), hist=(1.0, 0.0), emb=(1.0, 0.0))
    b = vertex(1, (0, 0, 0), hist=(0.0, 1.0), emb=(0.0, 1.0))
    assert semantic_similarity(a, b, 0.0, literal=True) == pytest.approx(2.0)
    assert semantic_similarity(a, a, 0.0, literal=True) == pytest.approx(2 * np.exp(-1.0))


def test_verification_is_one_to_one():
    local = build_graph([vertex(0, (0, 0, 0)), vertex(1, (3, 0, 0))], 1)
    glob = build_graph([vertex(10, (0, 0, 0)), vertex(11, (3, 0, 0), emb=(0.0, 1.0))], 1)
    candidates = [MatchCandidate(0, 10, 0.0), MatchCandidate(0, 11, 0.0),
                  MatchCandidate(1, 10, 0.01), MatchCandidate(1, 11, 0.0)]
    matches = verify_matches(candidates, local, glob, GraphConfig(tau=0.0, centroid_relative=False))
    assert [(p.local, p.glob) for p in matches.pairs] == [(0, 10), (1, 11)]
    assert len({p.glob for p in matches.pairs}) == len(matches)


def test_tau_gate_drops_weak_candidates():
    local = build_graph([vertex(0, (0, 0, 0)), vertex(1, (3, 0, 0))], 1)
    glob = build_graph([vertex(10, (0, 0, 0), label="tree"), vertex(11, (3, 0, 0))], 1)
    matches = verify_matches([MatchCandidate(0, 10, 0.0), MatchCandidate(1, 11, 0.0)], local, glob, GraphConfig())
    assert [(p.local, p.glob) for p in matches.pairs] == [(1, 11)]


def test_translated_copy_matches_every_vertex():
    rng = np.random.default_rng(21)
    scene = random_scene(rng)
    copy = moved(scene, Pose.from_translation(40.0, -12.0, 0.0), 100)
    matches = match_graphs(scene, copy, GraphConfig())
    assert [(p.local, p.glob) for p in matches.pairs] == [(v.id, v.id + 100) for v in scene]
    assert matches.score == pytest.approx(len(scene) + 1.0)


def test_rotated_copy_matches_on_appearance():
    rng = np.random.default_rng(22)
    scene = random_scene(rng)
    copy = moved(scene, Pose(rot_z(2.0), np.array([5.0, 60.0, 0.0])), 100)
    matches = match_graphs(scene, copy, GraphConfig(mu=0.0))
    assert [(p.local, p.glob) for p in matches.pairs] == [(v.id, v.id + 100) for v in scene]


def test_candidates_skip_empty_graphs():
    g = build_graph([vertex(0, (0, 0, 0)), vertex(1, (1, 0, 0))], 1)
    assert candidate_matches(g, build_graph([], 1), GraphConfig()) == []
    assert len(match_graphs([], [vertex(0, (0, 0, 0))], GraphConfig())) == 0


def test_detect_loop_applies_match_count_gate():
    rng = np.random.default_rng(23)
    scene = random_scene(rng, n=5)
    copy = moved(scene, Pose.from_translation(10.0, 0.0, 0.0), 100)
    assert detect_loop(scene, copy, GraphConfig(min_matches=5)) is not None
    assert detect_loop(scene, copy, GraphConfig(min_matches=6)) is None


def test_split_local_global_by_observation_frames():
    state = MapState()
    for f in range(30):
        state.add_keyframe(f, camera_pose(float(f), 0.0, 0.0), 0.1 * f)

    def seen(frames):
        det = Detection(frame=frames[0], stamp=0.0, label="car", bbox=BBox2D(0, 0, 10, 10),
                        hist=np.array([1.0]), emb=np.array([1.0]), t_co=np.array([0.0, 0.0, 8.0]),
                        yaw_co=0.0, dims=np.array([4.0, 1.8, 1.5]))
        lm = state.spawn(frames[0], det)
        for f in frames[1:]:
            lm.observe(f, det)
        return lm.id

    old = seen([0, 1, 2])
    straddling = seen([5, 20])
    recent = seen([18, 29])
    local, glob = split_local_global(state, 29, 15)
    assert [lm.id for lm in local] == [recent]
    assert [lm.id for lm in glob] == [old]
    assert straddling not in {lm.id for lm in local + glob}
