"""2D / 2.5D / 3D super-resolution toolkit for volumetric CT-style data:
synthetic paired datasets, patch extraction, training, sliding-window
volumetric inference, and PSNR / defect-detection evaluation."""

__version__ = "0.1.0"

from .volume import (  # noqa: F401
    Volume,
    PatchPair,
    normalize_volume,
    resample_z,
    resample_xy,
    extract_training_windows,
    load_volume,
    save_volume,
)
from .models import (  # noqa: F401
    NetworkSpec,
    ParamReport,
    build_network,
    build_discriminator,
    count_parameters,
    first_layer_parameter_delta,
    save_checkpoint,
    load_checkpoint,
)
from .phantom import (  # noqa: F401
    PhantomSpec,
    DegradationSpec,
    DefectRecord,
    generate_phantom,
    sample_phantom_spec,
    degrade,
    make_dataset,
    load_manifest,
)
from .training import (  # noqa: F401
    TrainConfig,
    FeatureExtractorSpec,
    pixel_loss,
    ragan_losses,
    perceptual_loss,
    build_feature_extractor,
    train,
    train_patches,
)
from .inference import (  # noqa: F401
    TileSpec,
    MemoryEstimate,
    pad_volume_z,
    super_resolve_volume,
    embed_2d_as_25d,
    estimate_activation_memory,
)
from .evaluation import (  # noqa: F401
    SlicePSNRStats,
    DetectionMatch,
    BinnedDetectionReport,
    psnr,
    slice_psnr_stats,
    segment_defects,
    match_and_score,
)
