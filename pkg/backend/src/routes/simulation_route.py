"""
Routes for simulating scenarios and running the back-end on them

Author: LunaLynx12
"""


from models import RunRequest, ScenarioConfig
from errors import SemLoopError, http_status
from fastapi import APIRouter, HTTPException
from pipeline import run_scenario
from simulation import simulate
import numpy as np
import logging

router = APIRouter()
log = logging.getLogger(__name__)

@router.post("/simulate", tags=["Simulation"], summary="Generate a scenario and summarize it")
def simulate_endpoint(cfg: ScenarioConfig):
    """
    Generates the world, odometry and detections of a scenario.

    param cfg: Scenario settings
    type cfg: ScenarioConfig
    return: Frame, object and detection counts plus the terminal odometry drift in meters
    """
    try:
        scenario = simulate(cfg)
    except SemLoopError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))

    odom = scenario.odometry_trajectory()
    return {
        "frames": len(scenario.observations),
        "objects": len(scenario.truth.objects),
        "detections": sum(len(o.detections) for o in scenario.observations),
        "terminal_drift": float(np.linalg.norm(odom[-1].t - scenario.truth.cameras[-1].t)),
    }

@router.post("/run", tags=["Simulation"], summary="Simulate a scenario and run the pipeline on it")
def run_endpoint(request: RunRequest):
    """
    return: ATE before and after loop closure, loop log, runtime table and run digest
    """
    if request.pipeline.window.solver.trace_dir or request.pipeline.loop.solver.trace_dir:
        raise HTTPException(status_code=422, detail="solver traces are only written by the command line")
    try:
        result = run_scenario(simulate(request.scenario), request.pipeline)
    except SemLoopError as e:
        log.warning(f"[Service] run failed: {e}")
        raise HTTPException(status_code=http_status(e), detail=str(e))

    return {
        "summary": result.summary(),
        "loops": [r.model_dump() for r in result.loops],
        "attempts": [a.model_dump() for a in result.attempts],
    }
