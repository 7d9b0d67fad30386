"""Frame-to-frame RGBD visual odometry with statistically derived covariance."""

from .alignment import (
    AlignmentResult,
    CorrespondenceSet,
    RansacConfig,
    count_inliers,
    ransac_align,
    refine_threshold,
    umeyama_align,
)
from .camera import (
    CameraIntrinsics,
    NoiseModel,
    RgbdFrame,
    back_project,
    noise_sigma,
    project,
    reconstruct_cloud,
)
from .covariance import CovarianceResult, estimate_covariance, perturb_cloud_pair
from .features import (
    DescriptorConfig,
    DetectorConfig,
    FeatureSet,
    Keypoint,
    describe,
    detect,
    extract,
    load_features,
    save_features,
)
from .geometry import (
    PoseTwist,
    RigidTransform,
    compose,
    invert,
    transform_of,
    twist_of,
)
from .evaluation import (
    SynthConfig,
    Trajectory,
    compare,
    coverage,
    integrate_trajectory,
    synth_scene,
)
from .matching import Match, MatchConfig, knn2, ratio_match, symmetric_ratio_match
from .pipeline import (
    OdometryEstimate,
    PipelineConfig,
    process_frame_pair,
    run_sequence,
)

__version__ = "0.1.0"
