"""
Seeded Monte-Carlo runs over whole scenarios. Deselected by default; run with -m slow.

Seeds run in a process pool, one scenario per task, the way the batch command does it.
"""

from models import AssocConfig, NoiseConfig, PipelineConfig, ScenarioConfig, TrajectoryConfig
from concurrent.futures import ProcessPoolExecutor
from evaluation import pr_curve
from pipeline import run_scenario
from simulation import simulate
import numpy as np
import pytest

pytestmark = pytest.mark.slow


def parallel(fn, jobs):
    with ProcessPoolExecutor() as pool:
        return list(pool.map(fn, jobs))


def loop_counts(job):
    """
    (tp, fp, fn) of the declared loops of one run at the given revisit offset.
    """
    seed, offset = job
    cfg = PipelineConfig()
    scenario = simulate(ScenarioConfig(seed=seed, noise=NoiseConfig.nominal(),
                                       trajectory=TrajectoryConfig(revisit_offset_deg=offset)))
    result = run_scenario(scenario, cfg)
    events = set(range(len(result.events)))
    declared = [a for a in result.attempts if a.declared]
    if not declared:
        return 0, 0, len(events)
    point = pr_curve(declared, cfg.tau_l, thresholds=[0.0], events=events)[0]
    return point.tp, point.fp, point.fn


def drift_ratio(seed):
    noise = NoiseConfig(odom_trans_sigma=0.01, odom_rot_sigma=0.002)
    result = run_scenario(simulate(ScenarioConfig(seed=seed, noise=noise)))
    return result.ate_after.rmse / result.ate_before.rmse


def association_accuracies(seed):
    labels = {"car": 0.4, "van": 0.15, "pedestrian": 0.2, "cyclist": 0.1, "tree": 0.15}
    scenario = simulate(ScenarioConfig(seed=seed, n_objects=40, labels=labels, noise=NoiseConfig.nominal()))
    return tuple(run_scenario(scenario, PipelineConfig(assoc=AssocConfig(lam=lam), loop_closure=False))
                 .association_accuracy for lam in (0.5, 1.0))


def test_loop_detection_is_viewpoint_independent():
    offsets = [30.0, 70.0, 110.0, 130.0]
    jobs = [(seed, offset) for offset in offsets for seed in range(50)]
    counts = np.array(parallel(loop_counts, jobs)).reshape(len(offsets), 50, 3).sum(axis=1)
    recalls = {}
    for offset, (tp, fp, fn) in zip(offsets, counts):
        recalls[offset] = tp / (tp + fn) if tp + fn else 0.0
        if offset == 130.0:
            assert fp == 0
            assert recalls[offset] >= 0.9
    assert max(recalls.values()) - min(recalls.values()) < 0.05


def test_loop_correction_reduces_drift():
    ratios = np.array(parallel(drift_ratio, range(20)))
    assert np.all(ratios < 1.0)
    assert np.mean(ratios <= 0.2) >= 0.9


def test_full_similarity_beats_box_overlap_alone():
    full, iou_only = np.array(parallel(association_accuracies, range(20))).T
    assert np.mean(full) >= np.mean(iou_only) + 0.02
