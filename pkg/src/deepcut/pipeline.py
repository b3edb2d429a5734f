"""Per-image optimization workflows.

One image is one graph is one batch: `segment` builds the affinity graph,
fits a freshly initialized model for a fixed number of Adam steps under the
configured clustering loss, and reads hard labels off an eval-mode forward
pass (dropout disabled, so the reported mask is reproducible).

On top of that live localization (background detection by border contact,
largest-component boxing), two-stage segmentation (foreground/background
split, then finer clustering inside the foreground), k-less clustering, and
the weight-carrying sequence mode that makes cluster ids comparable across
images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .affinity import (
    AffinityConfig,
    AffinityMatrix,
    build_cc_affinity,
    build_ncut_affinity,
    induced_subfield,
)
from .errors import (
    ArgumentError,
    InsufficientForegroundError,
    NoObjectError,
    NumericError,
    OptimizationError,
)
from .feature_io import FeatureField, GeometryMeta
from .kernels import grid_components
from .masks import BBox, LabelMask
from .nn_core import (
    ModelParams,
    OptState,
    adam_step,
    backward,
    forward,
    init_params,
    propagation_matrix,
)
from .objectives import LossValue, cc_loss, ncut_loss

NCUT_LOSS = "ncut"
CC_LOSS = "cc"


@dataclass(frozen=True)
class TrainConfig:
    """Everything a segmentation run depends on, seeds included."""

    loss: str = NCUT_LOSS
    k: int = 2  # target clusters for the ncut head
    k_max: int = 10  # assignment width for the k-less cc head
    alpha: float | None = 3.0  # k sensitivity; None or inf disables the shift
    epochs: int = 10
    hidden: int = 64
    seed: int = 0
    lr: float = 3e-2
    ncut_sign: str = "default"
    reset_weights: bool = True
    normalize_features: bool = False

    def __post_init__(self):
        if self.loss not in (NCUT_LOSS, CC_LOSS):
            raise ArgumentError(f"loss must be 'ncut' or 'cc', got {self.loss!r}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss == NCUT_LOSS and self.k < 2:
            raise ArgumentError(f"ncut clustering needs k >= 2, got {self.k}")
        if self.k_max < 2:
            raise ArgumentError(f"k_max must be >= 2, got {self.k_max}")
        if self.alpha is not None and not (
            math.isinf(self.alpha) or self.alpha >= 1.0
        ):
            raise ArgumentError(f"alpha must be >= 1 or infinite, got {self.alpha}")
        if self.hidden < 2 or self.hidden % 2 != 0:
            raise ArgumentError(f"hidden must be even and >= 2, got {self.hidden}")
        if not self.lr > 0.0:
            raise ArgumentError(f"lr must be positive, got {self.lr}")
        if self.ncut_sign not in ("default", "literal"):
            raise ArgumentError(
                f"ncut_sign must be 'default' or 'literal', got {self.ncut_sign!r}"
            )

    @property
    def k_out(self) -> int:
        return self.k if self.loss == NCUT_LOSS else self.k_max


@dataclass(frozen=True)
class LocalizationResult:
    patch_box: BBox
    pixel_box: BBox
    background_label: int
    mask: LabelMask


def _affinity_config(cfg: TrainConfig) -> AffinityConfig:
    return AffinityConfig(alpha=cfg.alpha, normalize_features=cfg.normalize_features)


def build_graph(field: FeatureField, cfg: TrainConfig) -> AffinityMatrix:
    if cfg.loss == NCUT_LOSS:
        return build_ncut_affinity(field, _affinity_config(cfg))
    return build_cc_affinity(field, _affinity_config(cfg))


def _loss_of(s: np.ndarray, w: AffinityMatrix, cfg: TrainConfig) -> LossValue:
    if cfg.loss == NCUT_LOSS:
        return ncut_loss(s, w, literal_sign=cfg.ncut_sign == "literal")
    return cc_loss(s, w)


def _dropout_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence((seed, step)).generate_state(1)[0])


def _run_steps(
    w: AffinityMatrix,
    feats: np.ndarray,
    cfg: TrainConfig,
    params: ModelParams,
    opt: OptState,
    epochs: int,
) -> tuple[np.ndarray, list[float], ModelParams, OptState]:
    propagated = propagation_matrix(w) @ feats
    trace: list[float] = []
    for epoch in range(epochs):
        assignment, cache = forward(
            params,
            w,
            feats,
            mode="train",
            dropout_seed=_dropout_seed(cfg.seed, opt.step),
            propagated=propagated,
        )
        try:
            loss = _loss_of(assignment.S, w, cfg)
        except NumericError as exc:
            raise OptimizationError(
                f"non-finite loss at epoch {epoch}: {exc}", epoch=epoch
            ) from exc
        grads = backward(params, cache, loss.dL_dS)
        params, opt = adam_step(params, grads, opt)
        trace.append(loss.value)
    final, _ = forward(params, w, feats, mode="eval", propagated=propagated)
    return final.hard_labels(), trace, params, opt


def _fresh_model(field: FeatureField, cfg: TrainConfig) -> tuple[ModelParams, OptState]:
    params = init_params(field.embed_dim, cfg.hidden, cfg.k_out, cfg.seed)
    return params, OptState.for_params(params, lr=cfg.lr)


def segment(field: FeatureField, cfg: TrainConfig) -> tuple[LabelMask, list[float]]:
    """Optimize a fresh model on one field and return the argmax mask.

    Deterministic in (field, cfg); the trace has one loss value per step.
    """
    w = build_graph(field, cfg)
    params, opt = _fresh_model(field, cfg)
    labels, trace, _, _ = _run_steps(
        w, field.feature_matrix(), cfg, params, opt, cfg.epochs
    )
    mask = LabelMask.from_labels(labels.reshape(field.grid_h, field.grid_w))
    return mask, trace


def kless_cluster(field: FeatureField, cfg: TrainConfig) -> tuple[np.ndarray, int]:
    """Cluster arbitrary items (rows of the field) without choosing k.

    The signed-graph head has width k_max; the discovered k is the number of
    argmax clusters actually used.
    """
    if cfg.loss != CC_LOSS:
        raise ArgumentError("k-less clustering requires the correlation loss")
    mask, _ = segment(field, cfg)
    return mask.flat(), mask.k_found


def identify_background(mask: LabelMask) -> int:
    """Cluster touching the most image borders.

    Ties go to the cluster with more cells, then to the smaller label id;
    a single-cluster mask returns its only label.
    """
    labels = mask.labels
    borders = (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1])
    best_label = -1
    best_key = None
    for label in np.unique(labels):
        touches = sum(1 for side in borders if (side == label).any())
        cells = int((labels == label).sum())
        key = (-touches, -cells, int(label))
        if best_key is None or key < best_key:
            best_key = key
            best_label = int(label)
    return best_label


def nearest_patch_index(
    n_pixels: int, n_patches: int, patch_size: int, stride: int
) -> np.ndarray:
    """For each pixel coordinate, the patch whose center is nearest.

    Ties go to the smaller patch index. Monotone nondecreasing, and every
    patch owns at least one pixel.
    """
    centers = np.arange(n_patches) * stride + (patch_size - 1) / 2.0
    midpoints = (centers[:-1] + centers[1:]) / 2.0
    return np.searchsorted(midpoints, np.arange(n_pixels), side="left")


def upsample_mask(mask: LabelMask, meta: GeometryMeta) -> LabelMask:
    """Nearest-patch upsampling of a patch mask to the pixel grid."""
    if meta.token_grid() != (mask.grid_h, mask.grid_w):
        raise ArgumentError(
            f"mask grid {mask.grid_h}x{mask.grid_w} inconsistent with geometry "
            f"token grid {meta.token_grid()}"
        )
    rows = nearest_patch_index(meta.image_h, mask.grid_h, meta.patch_size, meta.stride)
    cols = nearest_patch_index(meta.image_w, mask.grid_w, meta.patch_size, meta.stride)
    return LabelMask.from_labels(mask.labels[np.ix_(rows, cols)])


def _pixel_box(patch_box: BBox, meta: GeometryMeta, grid: tuple[int, int]) -> BBox:
    grid_h, grid_w = grid
    rows = nearest_patch_index(meta.image_h, grid_h, meta.patch_size, meta.stride)
    cols = nearest_patch_index(meta.image_w, grid_w, meta.patch_size, meta.stride)
    return BBox(
        row0=int(np.searchsorted(rows, patch_box.row0, side="left")),
        col0=int(np.searchsorted(cols, patch_box.col0, side="left")),
        row1=int(np.searchsorted(rows, patch_box.row1, side="right")) - 1,
        col1=int(np.searchsorted(cols, patch_box.col1, side="right")) - 1,
    )


def _tight_box(cells: np.ndarray) -> BBox:
    rows, cols = np.nonzero(cells)
    return BBox(
        row0=int(rows.min()),
        col0=int(cols.min()),
        row1=int(rows.max()),
        col1=int(cols.max()),
    )


def localize(
    field: FeatureField, cfg: TrainConfig, box_mode: str = "largest"
) -> LocalizationResult:
    """Two-cluster segmentation, background removal, and a tight object box.

    With box_mode="largest" the box covers the largest 4-connected foreground
    component; "all" boxes every foreground cell. A single-cluster mask
    degenerates to boxing the whole grid.
    """
    if box_mode not in ("largest", "all"):
        raise ArgumentError(f"box_mode must be 'largest' or 'all', got {box_mode!r}")
    run_cfg = replace(cfg, k=2) if cfg.loss == NCUT_LOSS else cfg
    mask, _ = segment(field, run_cfg)
    background = identify_background(mask)
    if mask.k_found == 1:
        foreground = np.ones_like(mask.labels, dtype=bool)
    else:
        foreground = mask.labels != background
    if not foreground.any():
        raise NoObjectError("no foreground cells to box")
    if box_mode == "largest":
        comp, count = grid_components(foreground)
        sizes = np.bincount(comp[comp >= 0].ravel(), minlength=count)
        keep = comp == int(np.argmax(sizes))
    else:
        keep = foreground
    patch_box = _tight_box(keep)
    return LocalizationResult(
        patch_box=patch_box,
        pixel_box=_pixel_box(patch_box, field.meta, (field.grid_h, field.grid_w)),
        background_label=background,
        mask=mask,
    )


def _compose_two_stage(
    stage1: LabelMask, background: int, keep: np.ndarray, fg_labels: np.ndarray
) -> LabelMask:
    out = np.zeros(stage1.grid_h * stage1.grid_w, dtype=np.int64)
    distinct = np.unique(fg_labels)
    out[keep] = np.searchsorted(distinct, fg_labels) + 1
    return LabelMask.from_labels(out.reshape(stage1.grid_h, stage1.grid_w))


def two_stage_segment(
    field: FeatureField, cfg: TrainConfig, k_fg: int = 4
) -> LabelMask:
    """Foreground/background split, then finer clustering of the foreground.

    Background cells keep label 0; foreground parts get labels 1..m. The
    second stage rebuilds its graph from the foreground sub-field with fresh
    seeded parameters. A degenerate single-cluster first stage falls back to
    single-stage segmentation with k_fg clusters.
    """
    if k_fg < 2:
        raise ArgumentError(f"k_fg must be >= 2, got {k_fg}")
    stage2_cfg = replace(cfg, k=k_fg)
    stage1_cfg = replace(cfg, k=2) if cfg.loss == NCUT_LOSS else cfg
    stage1, _ = segment(field, stage1_cfg)
    if stage1.k_found == 1:
        mask, _ = segment(field, stage2_cfg)
        return mask
    background = identify_background(stage1)
    fg_idx = np.flatnonzero(stage1.flat() != background)
    if fg_idx.size < k_fg:
        raise InsufficientForegroundError(
            f"foreground has {fg_idx.size} cells, need at least k_fg={k_fg}"
        )
    subfield, keep = induced_subfield(field, fg_idx)
    stage2, _ = segment(subfield, stage2_cfg)
    return _compose_two_stage(stage1, background, keep, stage2.flat())


def sequence_segment(
    fields: Sequence[FeatureField],
    cfg: TrainConfig,
    two_stage: bool = False,
    k_fg: int = 4,
) -> list[LabelMask]:
    """Segment an ordered image sequence with one persistent model.

    Weights (and optimizer state) carry over between images unless
    cfg.reset_weights is set, in which case results match independent
    per-image runs. Because the same head assigns every image, cluster ids
    are directly comparable across the sequence.
    """
    fields = list(fields)
    if not fields:
        raise ArgumentError("sequence needs at least one field")
    dims = {f.embed_dim for f in fields}
    if len(dims) != 1:
        raise ArgumentError(f"fields disagree on embed_dim: {sorted(dims)}")

    if cfg.reset_weights:
        if two_stage:
            return [two_stage_segment(f, cfg, k_fg=k_fg) for f in fields]
        return [segment(f, cfg)[0] for f in fields]

    if two_stage:
        return _sequence_two_stage(fields, cfg, k_fg)

    params, opt = _fresh_model(fields[0], cfg)
    masks = []
    for field in fields:
        w = build_graph(field, cfg)
        labels, _, params, opt = _run_steps(
            w, field.feature_matrix(), cfg, params, opt, cfg.epochs
        )
        masks.append(
            LabelMask.from_labels(labels.reshape(field.grid_h, field.grid_w))
        )
    return masks


def _sequence_two_stage(
    fields: list[FeatureField], cfg: TrainConfig, k_fg: int
) -> list[LabelMask]:
    split_cfg = replace(cfg, k=2) if cfg.loss == NCUT_LOSS else cfg
    parts_cfg = replace(cfg, k=k_fg)
    split_params, split_opt = _fresh_model(fields[0], split_cfg)
    parts_params, parts_opt = _fresh_model(fields[0], parts_cfg)
    masks = []
    for field in fields:
        w = build_graph(field, split_cfg)
        labels, _, split_params, split_opt = _run_steps(
            w, field.feature_matrix(), split_cfg, split_params, split_opt, cfg.epochs
        )
        stage1 = LabelMask.from_labels(labels.reshape(field.grid_h, field.grid_w))
        if stage1.k_found == 1:
            target_field, keep = field, None
        else:
            background = identify_background(stage1)
            fg_idx = np.flatnonzero(stage1.flat() != background)
            if fg_idx.size < k_fg:
                raise InsufficientForegroundError(
                    f"foreground has {fg_idx.size} cells, need k_fg={k_fg}"
                )
            target_field, keep = induced_subfield(field, fg_idx)
        w2 = build_graph(target_field, parts_cfg)
        fg_labels, _, parts_params, parts_opt = _run_steps(
            w2,
            target_field.feature_matrix(),
            parts_cfg,
            parts_params,
            parts_opt,
            cfg.epochs,
        )
        if keep is None:
            masks.append(
                LabelMask.from_labels(fg_labels.reshape(field.grid_h, field.grid_w))
            )
        else:
            masks.append(_compose_two_stage(stage1, background, keep, fg_labels))
    return masks
