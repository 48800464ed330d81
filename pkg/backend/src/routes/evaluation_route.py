"""
Route for trajectory error evaluation

Author: LunaLynx12
"""


from errors import SemLoopError, http_status
from fastapi import APIRouter, HTTPException
from formats import trajectory_from_rows
from models import AteRequest
from evaluation import ate

router = APIRouter()

@router.post("/ate", tags=["Evaluation"], summary="Absolute trajectory error of two TUM trajectories")
def ate_endpoint(request: AteRequest):
    """
    Aligns the estimate onto ground truth and reports the position error statistics.

    return: AteReport without the per-frame errors
    """
    try:
        report = ate(trajectory_from_rows(request.est), trajectory_from_rows(request.gt),
                     with_scale=request.with_scale, align=request.align)
    except SemLoopError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))
    return report.summary()
