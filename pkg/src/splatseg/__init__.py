"""splatseg: object segmentation and interactive editing for Gaussian splat scenes."""

from . import errors
from .edits import EditOp, apply_edit, extract_object, recolor_object, remove_object
from .masks import (
    CleanConfig,
    LabelMap,
    close_binary,
    load_mask,
    morphological_close,
    preprocess,
    relabel_small_components,
    save_mask,
)
from .metrics import SegReport, miou_macc, psnr, rgb_loss, ssim
from .rasterizer import (
    ContributionMatrix,
    Framebuffer,
    Splat2D,
    TileBins,
    accumulate_contributions,
    backward_features,
    build_tile_lists,
    pixel_contributions,
    project_gaussian,
    render,
    view_weight_matrix,
)
from .reassign import (
    PriorScores,
    SegmentationMatrix,
    compute_priors,
    object_mask,
    query_point,
    reassign_labels,
)
from .scene import (
    Camera,
    Gaussian,
    Scene,
    camera_from_record,
    camera_project,
    camera_to_record,
    eval_sh_color,
    gaussian_density,
    load_cameras,
    load_scene,
    save_cameras,
    save_scene,
)
from .training import (
    AdamState,
    LinearClassifier,
    TrainConfig,
    adam_step,
    class_probabilities,
    cross_entropy,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)

__version__ = "0.1.0"
