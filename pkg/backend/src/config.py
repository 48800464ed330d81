"""
Global configuration constants used across the mapping back-end.
Includes feature extraction, association, refinement, graph matching,
loop closure, simulation and evaluation defaults.

Author: LunaLynx12
"""

import math


# Features

COLOR_CLUSTERS = 8
"""
Number of K-means clusters (K_c) used to build an object color histogram.
"""

KMEANS_MAX_ITER = 50
"""
Lloyd iteration cap for color clustering.
"""

KMEANS_TOL = 1e-6
"""
Centroid shift below which color clustering is considered converged.
"""

HISTORY_CAP = 10
"""
Number of most recent histograms and embeddings (n) kept per landmark.

Older entries are evicted first-in first-out.
"""

EMBEDDING_DIM = 16
"""
Dimension of synthesized appearance embeddings.
"""

MAX_OBJECT_DIM = 6.0
"""
Proposals with any dimension above this many meters are discarded.
"""

MAX_OBJECT_RANGE = 40.0
"""
Proposals farther than this many meters from the camera are discarded.
"""

MIN_DETECTION_SCORE = 0.0
"""
Proposals with a detector score below this value are discarded.
"""


# Association

ASSOC_LAMBDA = 0.5
"""
Balance (lambda) between box overlap, color and embedding terms.
"""

ASSOC_THRESHOLD = 0.35
"""
Minimum similarity (theta_a) for a detection to be matched to a landmark.
"""

ASSOC_WINDOW = 15
"""
Landmarks last observed within this many keyframes are association candidates.
"""


# Refinement

WINDOW_SIZE = 10
"""
Number of keyframes (W) in the sliding refinement window.
"""

MIN_TRACK_COUNT = 4
"""
Objects must be observed more than this many times to be refined.
"""

GN_MAX_ITER = 50
"""
Gauss-Newton iteration cap.
"""

GN_TOL = 1e-8
"""
Gauss-Newton stops when the infinity norm of the update falls below this value.
"""

GN_FD_STEP = 1e-6
"""
Central finite-difference step used for residual Jacobians.
"""

GN_MAX_HALVINGS = 10
"""
Maximum number of step halvings per iteration when the cost would increase.
"""

GN_MAX_CONDITION = 1e14
"""
Normal equations with a larger condition number are treated as singular.
"""


# Scene graph and loop closure

KNN = 4
"""
Number of nearest neighbors (K) connected per scene graph vertex.
"""

LAYOUT_THRESHOLD = 0.15
"""
Maximum layout descriptor difference (delta) for a candidate pair.
"""

SEMANTIC_MU = 0.5
"""
Balance (mu) between geometric and appearance semantic terms.
"""

SEMANTIC_TAU = 1.2
"""
Minimum semantic similarity (tau) for a verified match.
"""

MIN_MATCHES = 3
"""
Minimum number of verified matches required to declare a loop.
"""

LOOP_WINDOW = 15
"""
The local map slice holds landmarks first observed within this many keyframes.
"""

LOOP_CHECK_INTERVAL = 5
"""
Loop detection runs every this many frames.
"""

MAX_LOOP_RESIDUAL = 1.0
"""
Matches whose post-alignment translation residual exceeds this many meters are rejected.
"""

MAX_LOOP_ROTATION_RESIDUAL_DEG = 15.0
"""
Matches whose post-alignment orientation residual exceeds this many degrees are rejected.
"""

MAX_DRIFT_RATE = 0.1
"""
Largest plausible drift translation per meter traveled between the loop frame and the current frame.
"""

MAX_DRIFT_ROTATION_RATE_DEG = 0.25
"""
Largest plausible drift rotation in degrees per meter traveled over the same span.
"""

DRIFT_FLOOR = 1.0
"""
Drift translation in meters accepted regardless of the distance traveled.
"""

DRIFT_ROTATION_FLOOR_DEG = 15.0
"""
Drift rotation in degrees accepted regardless of the distance traveled.
"""

ODOMETRY_INFORMATION = (100.0, 100.0, 100.0, 25.0, 25.0, 25.0)
"""
Diagonal of the camera-camera information matrix, rotation entries first.
"""


# Simulation

IMAGE_WIDTH = 1280
"""
Simulated image width in pixels.
"""

IMAGE_HEIGHT = 720
"""
Simulated image height in pixels.
"""

HORIZONTAL_FOV_DEG = 110.0
"""
Horizontal field of view of the simulated camera in degrees.
"""

FOCAL_LENGTH = (IMAGE_WIDTH / 2) / math.tan(math.radians(HORIZONTAL_FOV_DEG) / 2)
"""
Focal length in pixels matching the horizontal field of view.
"""

CAMERA_HEIGHT = 1.5
"""
Height of the simulated camera above the ground plane in meters.
"""

MAX_DETECTION_RANGE = 40.0
"""
Objects farther than this many meters are never detected.
"""

MIN_OBJECT_SEPARATION = 2.0
"""
Minimum distance between simulated object centers in meters.
"""

PLACEMENT_ATTEMPTS = 10_000
"""
Rejection sampling cap when placing simulated objects.
"""

ANCHOR_SEPARATION_DEG = 30.0
"""
Angle between label embedding anchors on the unit sphere.
"""


# Evaluation

TAU_L = 5.0
"""
A declared loop is a true positive if the corrected position is within this many meters.
"""

LOOP_MIN_GAP = 50
"""
Frame pairs must be more than this many frames apart to count as a loop opportunity.
"""

TIMESTAMP_TOLERANCE = 0.05
"""
Maximum timestamp difference in seconds when pairing trajectory samples.
"""

SIGNIFICANT_DIGITS = 9
"""
Significant digits written for every number in TUM trajectory files.
"""

RUNTIME_STAGES = ("data_association", "object_optimization", "loop_detection", "drift_correction")
"""
Pipeline stages reported in the runtime table, in order.
"""

api_port = 8000
"""
Port number used by the FastAPI service.
"""
