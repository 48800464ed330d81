"""
File Formats

Readers and writers for the interchange files: TUM trajectories, JSON
documents, the loop log, CSV tables and the canonical run digest.

Author: LunaLynx12
"""

from typing import Any, Dict, Iterable, List, Sequence, Type, TypeVar
from geometry import CAMERA_FROM_BODY, Pose, yaw_of
from pydantic import BaseModel, ValidationError
from scipy.spatial.transform import Rotation
from errors import ParseError, SchemaError
from evaluation import Trajectory
from pathlib import Path
import pandas as pd
import numpy as np
import hashlib
import config
import json


M = TypeVar("M", bound=BaseModel)


def _g(x: float) -> str:
    return f"{x:.{config.SIGNIFICANT_DIGITS}g}"


def format_tum(traj: Trajectory) -> str:
    """
    TUM lines `timestamp tx ty tz qx qy qz qw` with scalar-last quaternions.
    """
    lines = []
    quats = Rotation.from_matrix(np.array([p.R for p in traj.poses])).as_quat() if len(traj) else []
    for stamp, pose, q in zip(traj.stamps, traj.poses, quats):
        lines.append(" ".join(_g(float(v)) for v in [stamp, *pose.t, *q]))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_tum(lines: Iterable[str]) -> Trajectory:
    """
    Parses TUM trajectory lines. Blank lines and lines starting with # are skipped.

    param lines: Text lines
    type lines: Iterable[str]
    return: Trajectory in file order
    rtype: Trajectory
    raises ParseError: If a line does not hold 8 numbers or a quaternion is zero
    """
    stamps, poses = [], []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", lineno)
        try:
            values = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(str(e), lineno) from e
        q = np.array(values[4:])
        if not np.all(np.isfinite(values)) or np.linalg.norm(q) == 0:
            raise ParseError("non-finite value or zero quaternion", lineno)
        stamps.append(values[0])
        poses.append(Pose(Rotation.from_quat(q).as_matrix(), np.array(values[1:4])))
    return Trajectory(np.array(stamps), poses)


def write_tum(path: str, traj: Trajectory) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_tum(traj), encoding="utf-8")


def read_tum(path: str) -> Trajectory:
    with open(path, "r", encoding="utf-8") as f:
        return parse_tum(f)


def write_json(path: str, data: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, e.lineno) from e


def load_model(path: str, model: Type[M]) -> M:
    """
    Validates a JSON file against a pydantic model.

    raises ParseError: If the file is not JSON
    raises SchemaError: If the content does not fit the model
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        err = e.errors()[0]
        if err["type"] == "json_invalid":
            raise ParseError(err["msg"], 1) from e
        raise SchemaError(err["msg"], 0, ".".join(str(p) for p in err["loc"]) or "?") from e


def write_jsonl(path: str, records: Iterable[BaseModel]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r.model_dump_json() + "\n")


def read_jsonl(path: str, model: Type[M]) -> List[M]:
    """
    One model per non-blank line.

    raises ParseError, SchemaError: On a malformed line
    """
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(model.model_validate_json(line))
            except ValidationError as e:
                err = e.errors()[0]
                if err["type"] == "json_invalid":
                    raise ParseError(err["msg"], lineno) from e
                raise SchemaError(err["msg"], lineno, ".".join(str(p) for p in err["loc"]) or "?") from e
    return out


def write_csv(path: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False)


def write_models_csv(path: str, records: Sequence[BaseModel], columns: Sequence[str]) -> None:
    write_csv(path, [r.model_dump(include=set(columns)) for r in records], columns)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """
    Plot-ready table: one row per pose with position and heading in degrees.
    """
    heading = [float(np.degrees(yaw_of(p.R @ CAMERA_FROM_BODY))) for p in traj.poses]
    pos = traj.positions
    return pd.DataFrame({"stamp": traj.stamps, "x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2], "heading_deg": heading})


def canonical_digest(data: Any) -> str:
    """
    SHA-256 of the canonical JSON rendering (sorted keys, compact separators).
    """
    payload = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode()).hexdigest()


def trajectory_from_rows(rows: Iterable[Sequence[float]]) -> Trajectory:
    return parse_tum(" ".join(repr(float(v)) for v in row) for row in rows)
