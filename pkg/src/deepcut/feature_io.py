"""Patch-feature tensors: the DCUT container and synthetic planted fields.

DCUT layout, all integers little-endian:

    magic "DCUT" (4 bytes ASCII)
    u32 version = 1
    u32 grid_h, u32 grid_w, u32 embed_dim
    u32 meta_len
    meta_len bytes of UTF-8 JSON:
        {"image_h": int, "image_w": int, "patch_size": int,
         "stride": int, "source_id": str}
    grid_h * grid_w * embed_dim little-endian float32, row-major
    (patch index = row * grid_w + col)

A feature field is immutable after construction and safe to share across
threads. Planted fields give tests a ground truth without any transformer:
each planted region gets a distinct unit basis vector plus optional isotropic
Gaussian noise.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArgumentError,
    DegenerateFeatureError,
    FormatError,
    UnsupportedVersionError,
)
from .masks import LabelMask

MAGIC = b"DCUT"
VERSION = 1

_META_KEYS = ("image_h", "image_w", "patch_size", "stride", "source_id")


@dataclass(frozen=True)
class GeometryMeta:
    """Image/patch geometry a feature grid was extracted with."""

    image_h: int
    image_w: int
    patch_size: int
    stride: int
    source_id: str = ""

    def __post_init__(self):
        if not (1 <= self.stride <= self.patch_size):
            raise ArgumentError(
                f"stride must satisfy 1 <= stride <= patch_size, "
                f"got stride={self.stride}, patch_size={self.patch_size}"
            )
        if self.image_h < self.patch_size or self.image_w < self.patch_size:
            raise ArgumentError(
                f"image {self.image_h}x{self.image_w} smaller than patch "
                f"size {self.patch_size}"
            )

    def token_grid(self) -> tuple[int, int]:
        """Token-grid shape: floor((dim - patch) / stride) + 1 per axis."""
        gh = (self.image_h - self.patch_size) // self.stride + 1
        gw = (self.image_w - self.patch_size) // self.stride + 1
        return gh, gw

    def to_json(self) -> dict:
        return {
            "image_h": self.image_h,
            "image_w": self.image_w,
            "patch_size": self.patch_size,
            "stride": self.stride,
            "source_id": self.source_id,
        }


def _meta_for_grid(grid_h: int, grid_w: int, source_id: str) -> GeometryMeta:
    # Unit patch/stride makes the token formula hold for any synthetic grid.
    return GeometryMeta(
        image_h=grid_h, image_w=grid_w, patch_size=1, stride=1, source_id=source_id
    )


@dataclass(frozen=True)
class FeatureField:
    """Grid of per-patch feature vectors plus the geometry they came from."""

    grid_h: int
    grid_w: int
    embed_dim: int
    features: np.ndarray  # (grid_h * grid_w, embed_dim) float32
    meta: GeometryMeta

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1 or self.embed_dim < 1:
            raise ArgumentError(
                f"grid {self.grid_h}x{self.grid_w}, embed_dim {self.embed_dim}: "
                "all dimensions must be >= 1"
            )
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.shape != (self.grid_h * self.grid_w, self.embed_dim):
            raise ArgumentError(
                f"features shape {self.features.shape} does not match "
                f"grid {self.grid_h}x{self.grid_w} x embed_dim {self.embed_dim}"
            )
        bad = ~np.isfinite(feats)
        if bad.any():
            patch, dim = np.argwhere(bad)[0]
            raise ArgumentError(
                f"non-finite feature at patch {patch}, dim {dim}"
            )
        gh, gw = self.meta.token_grid()
        if (gh, gw) != (self.grid_h, self.grid_w):
            raise ArgumentError(
                f"grid {self.grid_h}x{self.grid_w} inconsistent with geometry "
                f"(token formula gives {gh}x{gw})"
            )
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    def features_grid(self) -> np.ndarray:
        """Features reshaped to (grid_h, grid_w, embed_dim)."""
        return self.features.reshape(self.grid_h, self.grid_w, self.embed_dim)

    def feature_matrix(self) -> np.ndarray:
        """float64 copy of the (n, c) feature matrix for numeric work."""
        return self.features.astype(np.float64)


@dataclass(frozen=True)
class PlantedField:
    """A synthetic field together with the labels it was planted from."""

    field: FeatureField
    truth: LabelMask

    def __post_init__(self):
        if (self.truth.grid_h, self.truth.grid_w) != (
            self.field.grid_h,
            self.field.grid_w,
        ):
            raise ArgumentError("truth mask dimensions differ from field grid")


def _write(sink, payload: bytes, offset: int) -> int:
    try:
        sink.write(payload)
    except OSError as exc:
        raise OSError(f"write failed at byte offset {offset}: {exc}") from exc
    return offset + len(payload)


def write_feature_field(field: FeatureField, sink) -> int:
    """Serialize `field` to a binary sink. Returns the byte count written."""
    meta_bytes = json.dumps(field.meta.to_json(), separators=(",", ":")).encode(
        "utf-8"
    )
    header = MAGIC + struct.pack(
        "<5I", VERSION, field.grid_h, field.grid_w, field.embed_dim, len(meta_bytes)
    )
    offset = _write(sink, header, 0)
    offset = _write(sink, meta_bytes, offset)
    payload = np.ascontiguousarray(field.features, dtype="<f4").tobytes()
    offset = _write(sink, payload, offset)
    return offset


def _read_exact(source, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def read_feature_field(source) -> FeatureField:
    """Parse a DCUT stream, validating geometry and payload exhaustively."""
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, grid_h, grid_w, embed_dim, meta_len = struct.unpack(
        "<5I", _read_exact(source, 20, "header")
    )
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}, expected 1")
    if grid_h < 1 or grid_w < 1 or embed_dim < 1:
        raise FormatError(
            f"invalid dimensions grid {grid_h}x{grid_w}, embed_dim {embed_dim}"
        )
    meta_bytes = _read_exact(source, meta_len, "metadata")
    try:
        meta_obj = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(meta_obj, dict) or set(meta_obj) != set(_META_KEYS):
        raise FormatError(
            f"metadata keys {sorted(meta_obj) if isinstance(meta_obj, dict) else meta_obj!r}"
            f" do not match required {sorted(_META_KEYS)}"
        )
    for key in _META_KEYS[:-1]:
        if not isinstance(meta_obj[key], int) or isinstance(meta_obj[key], bool):
            raise FormatError(f"metadata field {key!r} must be an integer")
    if not isinstance(meta_obj["source_id"], str):
        raise FormatError("metadata field 'source_id' must be a string")
    try:
        meta = GeometryMeta(**meta_obj)
    except ArgumentError as exc:
        raise FormatError(f"invalid geometry metadata: {exc}") from exc

    n_values = grid_h * grid_w * embed_dim
    expected = n_values * 4
    payload = source.read(expected)
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}"
        )
    trailing = source.read(1)
    if trailing:
        raise FormatError("trailing data after payload")
    feats = np.frombuffer(payload, dtype="<f4").reshape(
        grid_h * grid_w, embed_dim
    )
    bad = ~np.isfinite(feats)
    if bad.any():
        patch, dim = np.argwhere(bad)[0]
        raise FormatError(f"non-finite payload value at patch {patch}, dim {dim}")
    try:
        return FeatureField(
            grid_h=grid_h,
            grid_w=grid_w,
            embed_dim=embed_dim,
            features=feats.astype(np.float32),
            meta=meta,
        )
    except ArgumentError as exc:
        raise FormatError(str(exc)) from exc


def rect_region_labels(grid_h: int, grid_w: int, k: int) -> np.ndarray:
    """Tile the grid with k contiguous rectangles, labelled in raster order.

    Rows are cut into ceil(k / grid_w) bands and each band into near-equal
    vertical slabs, so every label is a nonempty rectangle for any k <= n.
    """
    n = grid_h * grid_w
    if not 1 <= k <= n:
        raise ArgumentError(f"k={k} outside [1, {n}] for a {grid_h}x{grid_w} grid")
    bands = max(1, math.ceil(k / grid_w))
    labels = np.zeros((grid_h, grid_w), dtype=np.int64)
    base, rem = divmod(k, bands)
    label = 0
    for t in range(bands):
        r0 = round(t * grid_h / bands)
        r1 = round((t + 1) * grid_h / bands)
        k_t = base + (1 if t < rem else 0)
        for j in range(k_t):
            c0 = round(j * grid_w / k_t)
            c1 = round((j + 1) * grid_w / k_t)
            labels[r0:r1, c0:c1] = label
            label += 1
    return labels


def synth_from_labels(
    labels: np.ndarray,
    noise_sigma: float,
    seed: int,
    embed_dim: int | None = None,
    source_id: str | None = None,
) -> PlantedField:
    """Plant a field from an arbitrary label map.

    Cells with label L get the L-th unit basis vector (after compacting the
    distinct labels in sorted order) plus N(0, noise_sigma^2) noise. Pure in
    its arguments.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 2:
        raise ArgumentError(f"label map must be 2-D, got shape {labels.shape}")
    if noise_sigma < 0:
        raise ArgumentError(f"noise_sigma must be >= 0, got {noise_sigma}")
    grid_h, grid_w = labels.shape
    distinct = np.unique(labels)
    index = np.searchsorted(distinct, labels.ravel())
    dim = embed_dim if embed_dim is not None else max(len(distinct), 8)
    if dim < len(distinct):
        raise ArgumentError(
            f"embed_dim {dim} too small for {len(distinct)} planted regions"
        )
    feats = np.zeros((grid_h * grid_w, dim), dtype=np.float64)
    feats[np.arange(feats.shape[0]), index] = 1.0
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        feats = feats + rng.normal(0.0, noise_sigma, size=feats.shape)
    if source_id is None:
        source_id = f"planted:k={len(distinct)}:sigma={noise_sigma}:seed={seed}"
    field = FeatureField(
        grid_h=grid_h,
        grid_w=grid_w,
        embed_dim=dim,
        features=feats.astype(np.float32),
        meta=_meta_for_grid(grid_h, grid_w, source_id),
    )
    truth = LabelMask.from_labels(index.reshape(grid_h, grid_w))
    return PlantedField(field=field, truth=truth)


def synth_planted_features(
    grid_h: int,
    grid_w: int,
    k: int,
    noise_sigma: float,
    seed: int,
    embed_dim: int | None = None,
) -> PlantedField:
    """k rectangular regions with orthonormal centers; see synth_from_labels."""
    labels = rect_region_labels(grid_h, grid_w, k)
    return synth_from_labels(
        labels,
        noise_sigma,
        seed,
        embed_dim=embed_dim,
        source_id=f"synth:k={k}:sigma={noise_sigma}:seed={seed}",
    )


def synth_planted_object(
    grid_h: int,
    grid_w: int,
    box: tuple[int, int, int, int],
    noise_sigma: float,
    seed: int,
    embed_dim: int | None = None,
) -> PlantedField:
    """Background (label 0) with one rectangular object (label 1).

    `box` is (row0, col0, row1, col1), inclusive.
    """
    r0, c0, r1, c1 = box
    if not (0 <= r0 <= r1 < grid_h and 0 <= c0 <= c1 < grid_w):
        raise ArgumentError(f"object box {box} outside {grid_h}x{grid_w} grid")
    if (r1 - r0 + 1) * (c1 - c0 + 1) == grid_h * grid_w:
        raise ArgumentError("object box covers the whole grid; no background left")
    labels = np.zeros((grid_h, grid_w), dtype=np.int64)
    labels[r0 : r1 + 1, c0 : c1 + 1] = 1
    return synth_from_labels(
        labels,
        noise_sigma,
        seed,
        embed_dim=embed_dim,
        source_id=f"synth-object:box={box}:sigma={noise_sigma}:seed={seed}",
    )


def l2_normalize(field: FeatureField) -> FeatureField:
    """Scale every feature row to unit Euclidean norm. Off by default upstream."""
    feats = field.features.astype(np.float64)
    norms = np.linalg.norm(feats, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateFeatureError(
            f"cannot normalize all-zero feature row at patch {zero[0]}"
        )
    out = (feats / norms[:, None]).astype(np.float32)
    return FeatureField(
        grid_h=field.grid_h,
        grid_w=field.grid_w,
        embed_dim=field.embed_dim,
        features=out,
        meta=field.meta,
    )
