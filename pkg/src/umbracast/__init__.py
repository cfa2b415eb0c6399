"""Shadow formation geometry from monocular point maps.

Forward path: angular-tolerance shadow estimates and exact ray-plane
casting with differentiable soft splatting. Inverse path: recovery of a
single dominant light direction from an observed shadow mask. Plus the
image/mask metric suite and scene I/O used by the CLI.
"""

from .casting import (
    CastReport,
    ShadowEstimate,
    ShadowRender,
    binarize_render,
    cast_hard,
    cast_points,
    estimate_shadow,
    estimate_shadow_bruteforce,
    soft_splat,
)
from .compositing import AffineParams, masked_affine, render_preview
from .errors import (
    BehindCameraError,
    CorruptPointMapError,
    DataError,
    DegenerateElevationError,
    DimensionMismatchError,
    EmptyMaskError,
    EmptyRegionError,
    GrazingLightError,
    InsufficientSupportError,
    ManifestError,
    NumericalError,
    PointMapFormatError,
    SingularFitError,
    UmbracastError,
)
from .fitting import (
    FitConfig,
    FitObjectiveValue,
    FitResult,
    SweepResult,
    coarse_sweep,
    fit_light,
    fit_objective,
    fit_result_to_dict,
    refine,
    sweep_argmin,
)
from .geometry import (
    BinaryMask,
    PinholeModel,
    PointMap,
    ReceiverPlane,
    UnitLightDirection,
    angles_from_vector,
    downsample_mask,
    downsample_pointmap,
    fit_pinhole,
    fit_receiver_plane,
    light_from_angles,
    project,
    project_points,
    scale_model,
)
from .metrics import (
    AngularSummary,
    ConfusionCounts,
    EvalItem,
    MetricReport,
    angular_error,
    angular_report,
    batch_report,
    bce,
    ber,
    confusion_counts,
    dice_coefficient,
    dice_loss,
    item_metrics,
    rmse,
    ssim,
    ssim_map,
)
from .scene_io import (
    LoadedScene,
    SceneTuple,
    SynthScene,
    SynthSpec,
    load_manifest,
    load_mask,
    load_image,
    load_scene,
    random_scene_spec,
    read_pointmap,
    save_image,
    save_mask,
    scene_from_entry,
    synthesize,
    write_pointmap,
    write_scene,
)

__version__ = "0.1.0"
