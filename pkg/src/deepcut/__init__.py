"""Per-image GNN clustering over patch-feature graphs.

Workflow: load or synthesize a feature field, build an affinity graph,
optimize the small model under a normalized-cut or correlation-clustering
loss, read off hard labels, evaluate.
"""

from .affinity import (
    CC,
    NCUT,
    AffinityConfig,
    AffinityMatrix,
    build_cc_affinity,
    build_ncut_affinity,
    degree_vector,
    dump_weights,
    induced_subfield,
)
from .errors import (
    ArgumentError,
    ContractError,
    DeepCutError,
    DegenerateFeatureError,
    DegenerateGraphError,
    DegeneratePartitionError,
    FormatError,
    InsufficientForegroundError,
    NoObjectError,
    NumericError,
    OptimizationError,
    SizeError,
    UnsupportedVersionError,
)
from .evaluation import (
    MetricReport,
    ari,
    cc_components_baseline,
    corloc,
    iou_bbox,
    miou_mask,
    nmi,
    purity,
    spectral_baseline,
)
from .feature_io import (
    FeatureField,
    GeometryMeta,
    PlantedField,
    l2_normalize,
    read_feature_field,
    rect_region_labels,
    synth_from_labels,
    synth_planted_features,
    synth_planted_object,
    write_feature_field,
)
from .masks import BBox, LabelMask, mask_from_json, mask_to_json, read_pgm, write_mask_pgm
from .nn_core import (
    ActivationCache,
    ClusterAssignment,
    ModelParams,
    OptState,
    adam_step,
    backward,
    forward,
    gcn_propagate,
    init_params,
    load_params,
    propagation_matrix,
    save_params,
)
from .objectives import (
    LossValue,
    Partition,
    brute_force_cc,
    brute_force_ncut,
    cc_loss,
    discrete_cc,
    discrete_ncut,
    ncut_loss,
)
from .pipeline import (
    LocalizationResult,
    TrainConfig,
    identify_background,
    kless_cluster,
    localize,
    nearest_patch_index,
    segment,
    sequence_segment,
    two_stage_segment,
    upsample_mask,
)

__version__ = "0.1.0"
