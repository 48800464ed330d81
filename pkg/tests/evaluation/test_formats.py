from formats import (canonical_digest, format_tum, load_model, parse_tum, read_jsonl, read_tum, trajectory_frame,
                     write_jsonl, write_tum)
from errors import ParseError, SchemaError
from geometry import Pose, camera_pose, se3_exp
from models import LoopAttempt, ScenarioConfig
from evaluation import Trajectory
import numpy as np
import pytest


def test_tum_file_keeps_nine_significant_digits(tmp_path):
    rng = np.random.default_rng(0)
    poses = [se3_exp(np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-50, 50, 3)])) for _ in range(10)]
    traj = Trajectory(np.arange(10) * 0.1 + 1.0, poses)
    write_tum(str(tmp_path / "t.tum"), traj)
    back = read_tum(str(tmp_path / "t.tum"))
    assert np.allclose(back.stamps, traj.stamps)
    for a, b in zip(back.poses, traj.poses):
        assert a.is_close(b, tol=1e-6)


def test_tum_lines_are_scalar_last():
    text = format_tum(Trajectory([0.0], [Pose.from_translation(1.0, 2.0, 0.0)]))
    assert text.split() == ["0", "1", "2", "0", "0", "0", "0", "1"]


def test_tum_parser_skips_comments_and_reports_lines():
    traj = parse_tum(["# stamp x y z qx qy qz qw", "", "0.5 1 2 3 0 0 0 1"])
    assert len(traj) == 1 and np.allclose(traj.positions[0], [1, 2, 3])
    with pytest.raises(ParseError) as e:
        parse_tum(["0.5 1 2 3 0 0 0 1", "0.6 1 2 3 0 0 0"])
    assert e.value.line == 2
    with pytest.raises(ParseError):
        parse_tum(["0.5 1 2 3 0 0 0 0"])
    with pytest.raises(ParseError):
        parse_tum(["0.5 1 2 x 0 0 0 1"])


def test_digest_ignores_key_order():
    assert canonical_digest({"a": 1, "b": [1.5, 2]}) == canonical_digest({"b": [1.5, 2], "a": 1})
    assert canonical_digest({"a": 1}) != canonical_digest({"a": 2})


def test_scenario_config_errors(tmp_path):
    good = tmp_path / "good.json"
    good.write_text('{"seed": 3, "n_objects": 12}')
    assert load_model(str(good), ScenarioConfig).n_objects == 12
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_objects": 0}')
    with pytest.raises(SchemaError) as e:
        load_model(str(bad), ScenarioConfig)
    assert e.value.field == "n_objects"
    broken = tmp_path / "broken.json"
    broken.write_text('{"seed": ')
    with pytest.raises(ParseError):
        load_model(str(broken), ScenarioConfig)


def test_attempt_log_lines(tmp_path):
    attempts = [LoopAttempt(frame=60, loop_frame=2, score=4.9, n_matches=4, declared=True,
                            est_position=[1.0, 2.0, 1.5], event=0)]
    write_jsonl(str(tmp_path / "attempts.jsonl"), attempts)
    assert read_jsonl(str(tmp_path / "attempts.jsonl"), LoopAttempt) == attempts
    (tmp_path / "bad.jsonl").write_text('{"frame": 1}\n')
    with pytest.raises(SchemaError) as e:
        read_jsonl(str(tmp_path / "bad.jsonl"), LoopAttempt)
    assert e.value.line == 1


def test_plot_table_headings():
    traj = Trajectory([0.0, 0.1], [camera_pose(0, 0, 0), camera_pose(1, 0, np.pi / 2)])
    df = trajectory_frame(traj)
    assert list(df.columns) == ["stamp", "x", "y", "z", "heading_deg"]
    assert df["heading_deg"].tolist() == pytest.approx([0.0, 90.0])
