"""worldguide: 3D-consistent conditioning signals from single-view metric depth.

The toolkit unprojects a reference image through its metric depth into a
world-space point cloud, renders that cloud along generated camera
trajectories into guidance videos (plus per-view ray maps), aligns
human-space characters into the same world, and scores trajectories
against ground truth.
"""

from .camera import (
    DEFAULT_FRAME_COUNT,
    RESOLUTION_BUCKETS,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PluckerMap,
    PointCloud,
    Trajectory,
    compose,
    invert,
    pick_resolution_bucket,
    plucker_map,
    project,
    unproject,
)
from .depthalign import (
    DepthCorrespondences,
    RansacConfig,
    ScaleShift,
    apply_scale_shift,
    estimate_scale_shift,
)
from .errors import (
    AntiparallelGravity,
    CodecError,
    DegenerateConfiguration,
    DegenerateDepth,
    DegenerateTrajectory,
    DimensionMismatch,
    FewerThan3Valid,
    InsufficientInliers,
    NoValidDepth,
    PipelineStageError,
    WorldGuideError,
    ZeroLengthSpec,
)
from .evalmetrics import TrajectoryErrors, align_trajectories, compute_errors
from .humanalign import (
    CharacterSequence,
    KeypointSet2D,
    KeypointSet3D,
    SimilarityTransform,
    align_human_to_env,
    apply_transform,
    gravity_calibrate,
    lift_keypoints,
    weighted_umeyama,
)
from .pipeline import PipelineConfig, run_pipeline
from .raster import (
    GuidanceVideo,
    RenderConfig,
    RenderFrame,
    occlusion_mask,
    render_frame,
    render_trajectory,
    sample_mesh_surface,
)
from .trajgen import (
    Rotation,
    RotationCenter,
    TrajectorySpec,
    Translation,
    build_trajectory,
    follow_shot,
    rotation_center,
)

__version__ = "0.1.0"
