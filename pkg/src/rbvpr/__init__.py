"""Cross-modal place retrieval: RGB queries against a LiDAR database.

Core pipeline: geometry turns scans and depth maps into range and BEV
rasters, descriptors over those rasters are searched in two phases (range
modality first, BEV re-ranking second), and similarity labels supervise
descriptor training with a generalized triplet loss.
"""

from .descio import (
    load_descriptor_set,
    load_raster,
    save_descriptor_set,
    save_raster,
)
from .evalharness import (
    AblationCell,
    RecallReport,
    SyntheticScenario,
    generate_synthetic_descriptors,
    recall_at_n,
    recall_at_percent,
    run_ablation,
)
from .geometry import (
    BevGrid,
    CameraModel,
    RangeProjection,
    backproject_depth,
    crop_cloud_to_fov,
    edge_noise_mask,
    project_to_range_image,
    rasterize_bev,
    remove_ground,
)
from .kitti import build_ground_truth, parse_calib, parse_poses, parse_velodyne
from .metriclearn import (
    EmbeddingBatch,
    LossParams,
    TripletSpec,
    gem_pool,
    generalized_triplet_loss,
    mine_relative_triplets,
    vanilla_triplet_loss,
)
from .retrieval import RankedList, RerankParams, SearchIndex, rerank, retrieve_full, search
from .simlabel import (
    LABEL_METHODS,
    SectorSpec,
    SimilarityParams,
    points_average_distance,
    sample_sector_points,
    sim_binary_pose_heading,
    sim_exp_neg_distance,
    sim_pointcloud_mnn,
    sim_points_avg,
    sim_sector_overlap,
)
from .types import (
    DataError,
    Descriptor,
    DescriptorSet,
    DimensionError,
    FormatError,
    Frame,
    Modality,
    PointCloud,
    Pose,
    RasterImage,
    RasterKind,
)

__all__ = [
    "AblationCell",
    "BevGrid",
    "CameraModel",
    "DataError",
    "Descriptor",
    "DescriptorSet",
    "DimensionError",
    "EmbeddingBatch",
    "FormatError",
    "Frame",
    "LABEL_METHODS",
    "LossParams",
    "Modality",
    "PointCloud",
    "Pose",
    "RangeProjection",
    "RankedList",
    "RasterImage",
    "RasterKind",
    "RecallReport",
    "RerankParams",
    "SearchIndex",
    "SectorSpec",
    "SimilarityParams",
    "SyntheticScenario",
    "TripletSpec",
    "backproject_depth",
    "build_ground_truth",
    "crop_cloud_to_fov",
    "edge_noise_mask",
    "gem_pool",
    "generalized_triplet_loss",
    "generate_synthetic_descriptors",
    "load_descriptor_set",
    "load_raster",
    "mine_relative_triplets",
    "parse_calib",
    "parse_poses",
    "parse_velodyne",
    "points_average_distance",
    "project_to_range_image",
    "rasterize_bev",
    "recall_at_n",
    "recall_at_percent",
    "remove_ground",
    "rerank",
    "retrieve_full",
    "run_ablation",
    "sample_sector_points",
    "save_descriptor_set",
    "save_raster",
    "search",
    "sim_binary_pose_heading",
    "sim_exp_neg_distance",
    "sim_pointcloud_mnn",
    "sim_points_avg",
    "sim_sector_overlap",
    "vanilla_triplet_loss",
]
