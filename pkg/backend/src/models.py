"""
Data Models Module

This module defines the Pydantic models used throughout the back-end:
configuration for every processing stage, the simulator scenario, and the
report records written by the evaluation harness.

Author: LunaLynx12
"""

from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional, Tuple
from geometry import CameraIntrinsics
import config


class FilterConfig(BaseModel):
    """
    Gates applied to raw object proposals.
    """
    max_dim: float = Field(config.MAX_OBJECT_DIM, gt=0)
    max_range: float = Field(config.MAX_OBJECT_RANGE, gt=0)
    min_score: float = Field(config.MIN_DETECTION_SCORE, ge=0, le=1)


class AssocConfig(BaseModel):
    """
    Data association parameters.

    Attributes:
        lam (float): Balance between box overlap, color and embedding terms
        threshold (float): Minimum similarity accepted by the assignment
        history_cap (int): Histories kept per landmark
        window (int): Landmarks seen within this many keyframes are candidates
    """
    lam: float = Field(config.ASSOC_LAMBDA, ge=0, le=1)
    threshold: float = Field(config.ASSOC_THRESHOLD, ge=0)
    history_cap: int = Field(config.HISTORY_CAP, ge=1)
    window: int = Field(config.ASSOC_WINDOW, ge=1)


class SolverConfig(BaseModel):
    """
    Gauss-Newton settings.
    """
    max_iter: int = Field(config.GN_MAX_ITER, ge=0)
    tol: float = Field(config.GN_TOL, gt=0)
    fd_step: float = Field(config.GN_FD_STEP, gt=0)
    max_halvings: int = Field(config.GN_MAX_HALVINGS, ge=0)
    max_condition: float = Field(config.GN_MAX_CONDITION, gt=1)
    trace_dir: Optional[str] = Field(None, description="Directory receiving one (iteration, cost, step_norm) CSV per solve")


class WindowConfig(BaseModel):
    """
    Sliding-window object and camera refinement.

    Attributes:
        size (int): Number of keyframes in the window
        min_track_count (int): Objects need more observations than this to be refined
        odometry_constraints (bool): Tie consecutive window cameras with odometry residuals
        odometry_information (Tuple[float, ...]): Diagonal information of those residuals
        solver (SolverConfig): Gauss-Newton settings
    """
    size: int = Field(config.WINDOW_SIZE, ge=2)
    min_track_count: int = Field(config.MIN_TRACK_COUNT, ge=1)
    odometry_constraints: bool = True
    odometry_information: Tuple[float, float, float, float, float, float] = config.ODOMETRY_INFORMATION
    solver: SolverConfig = Field(default_factory=SolverConfig)

    @field_validator('odometry_information')
    @classmethod
    def validate_information(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("information diagonal must be positive")
        return v


class GraphConfig(BaseModel):
    """
    Scene graph matching parameters.

    Attributes:
        knn (int): Neighbors per vertex
        delta (float): Layout difference threshold
        mu (float): Geometry versus appearance balance
        tau (float): Semantic similarity threshold
        min_matches (int): Verified matches needed to declare a loop
        loop_window (int): Keyframes spanned by the local map slice
        literal_appearance (bool): Use exp(-|h * h'|) instead of exp(-|h - h'|) for color and embedding terms
        centroid_relative (bool): Compare positions relative to each graph's centroid
    """
    knn: int = Field(config.KNN, ge=1)
    delta: float = Field(config.LAYOUT_THRESHOLD, ge=0)
    mu: float = Field(config.SEMANTIC_MU, ge=0, le=1)
    tau: float = Field(config.SEMANTIC_TAU, ge=0)
    min_matches: int = Field(config.MIN_MATCHES, ge=1)
    loop_window: int = Field(config.LOOP_WINDOW, ge=1)
    literal_appearance: bool = False
    centroid_relative: bool = True


class LoopConfig(BaseModel):
    """
    Drift estimation and correction parameters.

    Attributes:
        drift_form (str): "world" evaluates log(T_g^-1 D^-1 T_l); "object" evaluates log(D^-1 T_l^-1 T_g)
        max_residual (float): Matches whose post-fit translation residual exceeds this are dropped
        max_rotation_residual_deg (float): Matches whose post-fit orientation residual exceeds this are dropped
        max_drift_rate (float): Drift translation allowed per meter traveled over the loop span
        max_drift_rotation_rate_deg (float): Drift rotation in degrees allowed per meter traveled
        drift_floor (float): Drift translation always allowed, meters
        drift_rotation_floor_deg (float): Drift rotation always allowed, degrees
        odometry_information (Tuple[float, ...]): Camera-camera information diagonal
        solver (SolverConfig): Gauss-Newton settings
    """
    drift_form: Literal["world", "object"] = "world"
    max_residual: float = Field(config.MAX_LOOP_RESIDUAL, gt=0)
    max_rotation_residual_deg: float = Field(config.MAX_LOOP_ROTATION_RESIDUAL_DEG, gt=0, le=180)
    max_drift_rate: float = Field(config.MAX_DRIFT_RATE, ge=0)
    max_drift_rotation_rate_deg: float = Field(config.MAX_DRIFT_ROTATION_RATE_DEG, ge=0)
    drift_floor: float = Field(config.DRIFT_FLOOR, ge=0)
    drift_rotation_floor_deg: float = Field(config.DRIFT_ROTATION_FLOOR_DEG, ge=0)
    odometry_information: Tuple[float, float, float, float, float, float] = config.ODOMETRY_INFORMATION
    solver: SolverConfig = Field(default_factory=SolverConfig)


class PipelineConfig(BaseModel):
    """
    Full back-end configuration. A bare PipelineConfig() is the documented default run.
    """
    filter: FilterConfig = Field(default_factory=FilterConfig)
    assoc: AssocConfig = Field(default_factory=AssocConfig)
    window: WindowConfig = Field(default_factory=WindowConfig)
    graph: GraphConfig = Field(default_factory=GraphConfig)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    intrinsics: CameraIntrinsics = Field(default_factory=CameraIntrinsics.default)
    loop_check_interval: int = Field(config.LOOP_CHECK_INTERVAL, ge=1)
    loop_closure: bool = True
    refine: bool = True
    align_scale: bool = False
    tau_l: float = Field(config.TAU_L, gt=0)
    min_loop_gap: int = Field(config.LOOP_MIN_GAP, ge=0)


class NoiseConfig(BaseModel):
    """
    Simulator noise model. Every field defaults to a noiseless scenario.

    Attributes:
        odom_rot_sigma (float): Odometry rotation random walk in rad per meter
        odom_trans_sigma (float): Odometry translation random walk in m per meter
        det_trans_sigma (float): Detection translation noise in meters
        det_yaw_sigma (float): Detection yaw noise in radians
        dims_sigma (float): Detection dimension noise in meters
        label_flip_prob (float): Probability that a detection carries a wrong label
        hist_jitter (bool): Jitter histograms with a Dirichlet around the instance histogram
        emb_sigma (float): Per-detection embedding noise
        dropout (float): Probability that a visible object is missed
    """
    odom_rot_sigma: float = Field(0.0, ge=0)
    odom_trans_sigma: float = Field(0.0, ge=0)
    det_trans_sigma: float = Field(0.0, ge=0)
    det_yaw_sigma: float = Field(0.0, ge=0)
    dims_sigma: float = Field(0.0, ge=0)
    label_flip_prob: float = Field(0.0, ge=0, le=1)
    hist_jitter: bool = False
    emb_sigma: float = Field(0.0, ge=0)
    dropout: float = Field(0.0, ge=0, le=1)

    @classmethod
    def nominal(cls, **overrides) -> 'NoiseConfig':
        """
        Detection noise used by the statistical scenarios, odometry left noiseless.
        """
        values = dict(det_trans_sigma=0.1, det_yaw_sigma=0.05, dims_sigma=0.05,
                      label_flip_prob=0.02, hist_jitter=True, emb_sigma=0.025, dropout=0.1)
        values.update(overrides)
        return cls(**values)


class TrajectoryConfig(BaseModel):
    """
    Keyframe path.

    Attributes:
        shape (str): rectangle, line or curve
        length (float): Rectangle first side, line length or arc length in meters
        width (float): Rectangle second side in meters
        radius (float): Curve radius in meters
        spacing (float): Distance between keyframes in meters
        revisit_offset_deg (Optional[float]): Heading offset of the rectangle revisit pass, None disables it
    """
    shape: Literal["rectangle", "line", "curve"] = "rectangle"
    length: float = Field(40.0, gt=0)
    width: float = Field(20.0, gt=0)
    radius: float = Field(30.0, gt=0)
    spacing: float = Field(1.0, gt=0)
    revisit_offset_deg: Optional[float] = 0.0


class ScenarioConfig(BaseModel):
    """
    Human-editable scenario file that fully determines a simulated run.
    """
    seed: int = 0
    n_objects: int = Field(30, ge=1)
    labels: Dict[str, float] = Field(default_factory=lambda: {
        "car": 0.35, "van": 0.1, "truck": 0.1, "pedestrian": 0.15, "cyclist": 0.1, "tree": 0.2})
    margin: float = Field(15.0, ge=0)
    road_clearance: float = Field(3.0, ge=0)
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    intrinsics: CameraIntrinsics = Field(default_factory=CameraIntrinsics.default)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    hfov_deg: float = Field(config.HORIZONTAL_FOV_DEG, gt=0, lt=180)
    max_range: float = Field(config.MAX_DETECTION_RANGE, gt=0)
    emb_dim: int = Field(config.EMBEDDING_DIM, ge=2)
    hist_bins: int = Field(config.COLOR_CLUSTERS, ge=1)
    frame_dt: float = Field(0.1, gt=0)

    @field_validator('labels')
    @classmethod
    def validate_labels(cls, v):
        """
        Validates the label vocabulary and its sampling weights.

        param v: Label to weight mapping
        type v: dict
        return: The mapping unchanged
        raises ValueError: If empty or if any weight is negative or all are zero
        """
        if not v:
            raise ValueError("label vocabulary must not be empty")
        if any(w < 0 for w in v.values()) or sum(v.values()) <= 0:
            raise ValueError("label weights must be nonnegative with a positive sum")
        return v


class AteReport(BaseModel):
    """
    Absolute trajectory error after alignment.
    """
    mse: float = Field(..., ge=0)
    rmse: float = Field(..., ge=0)
    std: float = Field(..., ge=0)
    max: float = Field(..., ge=0)
    n: int = Field(..., ge=0)
    errors: List[float] = Field(default_factory=list)

    @model_validator(mode='after')
    def check_order(self) -> 'AteReport':
        if self.max + 1e-12 < self.rmse:
            raise ValueError(f"max {self.max} is below rmse {self.rmse}")
        return self

    def summary(self) -> dict:
        return self.model_dump(exclude={"errors"})


class PrPoint(BaseModel):
    threshold: float
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)


class LoopAttempt(BaseModel):
    """
    One loop check that produced at least one verified match.

    Attributes:
        frame (int): Query frame
        loop_frame (int): Candidate loop frame
        score (float): Match count plus half the mean semantic similarity
        n_matches (int): Verified matches
        declared (bool): Whether the loop was applied
        est_position (List[float]): Current position corrected by the attempt's drift
        gt_position (Optional[List[float]]): Ground-truth current position when known
        opportunity (bool): Whether a ground-truth loop opportunity exists at this frame
        loop_rotation_deg (Optional[float]): Ground-truth viewpoint rotation between frame and loop frame
        rotation_error_deg (Optional[float]): Rotation error of the corrected pose
        event (Optional[int]): Ground-truth loop opportunity this attempt falls in
    """
    frame: int
    loop_frame: int
    score: float
    n_matches: int
    declared: bool
    est_position: List[float]
    gt_position: Optional[List[float]] = None
    opportunity: bool = False
    loop_rotation_deg: Optional[float] = None
    rotation_error_deg: Optional[float] = None
    event: Optional[int] = None


class LoopRecord(BaseModel):
    """
    One applied loop closure, as written to the loop log.
    """
    loop_frame: int
    current_frame: int
    n_matches: int
    drift_translation: float
    drift_rotation_deg: float
    cost_before: float
    cost_after: float

    @model_validator(mode='after')
    def check_frames(self) -> 'LoopRecord':
        if self.loop_frame >= self.current_frame:
            raise ValueError("loop_frame must precede current_frame")
        return self


class RuntimeRow(BaseModel):
    stage: str
    mean_ms: float = Field(..., ge=0)
    max_ms: float = Field(..., ge=0)


class RunRequest(BaseModel):
    """
    Body of POST /run: a scenario to simulate and the pipeline settings to run it with.
    """
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)


class AteRequest(BaseModel):
    """
    Body of POST /ate: two trajectories as TUM rows `[t, tx, ty, tz, qx, qy, qz, qw]`.
    """
    est: List[List[float]]
    gt: List[List[float]]
    with_scale: bool = False
    align: bool = True

    @field_validator('est', 'gt')
    @classmethod
    def validate_rows(cls, v):
        for i, row in enumerate(v):
            if len(row) != 8:
                raise ValueError(f"row {i} holds {len(row)} values, expected 8")
        return v
