"""Limited-view emission tomography toolkit.

Synthetic multi-view projections of 3D intensity fields, a classic ART
baseline, and a co-trained reconstruction where voxel intensities are explicit
trainable parameters optimized jointly with a learned per-ray weight encoder
under a normalized voxel-gradient rule.
"""

from .art import ArtConfig, art_reconstruct
from .dataset import (
    PaddedInput,
    RayDataset,
    build_dataset,
    load_dataset,
    normalize_features,
    pad_sequence,
    save_dataset,
)
from .encoder import (
    EncoderParams,
    encoder_backward,
    encoder_forward,
    init_encoder,
    load_encoder,
    save_encoder,
)
from .errors import (
    CapacityError,
    ConfigError,
    FormatError,
    IndexRangeError,
    LvtomoError,
    MetricError,
    ParameterError,
    ReconstructionError,
    ShapeError,
    StateError,
    TrainingError,
)
from .experiments import (
    ExperimentConfig,
    NoiseSpec,
    PhantomSpec,
    derive_seed,
    export_cross_sections,
    layout_for_grid,
    load_config,
    parse_config,
    run_experiment,
)
from .geometry import CameraPose, LayoutSpec, Ray, build_layout, pixel_ray
from .grids import (
    CylinderSpec,
    VoxelGrid,
    load_grid,
    make_jet_flame,
    make_randomized_homogeneous,
    make_turbulent_flame,
    save_grid,
)
from .metrics import MetricRecord, cosine_distance, cosine_similarity
from .projection import Image, add_noise, forward_project, load_image, save_image
from .tracing import ImpactSequence, trace_impacting_voxels, trace_rays_bulk
from .training import (
    TrainConfig,
    TrainState,
    gradnorm_backward,
    init_state,
    lr_schedule,
    predict_pixel,
    train,
    transfer_train,
    voxel_pool,
)

__version__ = "0.1.0"
