"""Label masks and boxes, plus their on-disk forms (binary PGM + JSON sidecar)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError


@dataclass(frozen=True)
class LabelMask:
    """Integer labeling of a patch (or pixel) grid."""

    grid_h: int
    grid_w: int
    labels: np.ndarray  # (grid_h, grid_w) int64
    k_found: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.shape != (self.grid_h, self.grid_w):
            raise ArgumentError(
                f"labels shape {self.labels.shape} != grid "
                f"{self.grid_h}x{self.grid_w}"
            )
        if labels.size and labels.min() < 0:
            raise ArgumentError("labels must be nonnegative")
        if self.k_found != len(np.unique(labels)):
            raise ArgumentError(
                f"k_found={self.k_found} but {len(np.unique(labels))} distinct labels"
            )
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "LabelMask":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ArgumentError(f"label map must be 2-D, got shape {labels.shape}")
        return cls(
            grid_h=labels.shape[0],
            grid_w=labels.shape[1],
            labels=labels,
            k_found=len(np.unique(labels)),
        )

    def flat(self) -> np.ndarray:
        return self.labels.ravel()


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with inclusive integer coordinates."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self):
        if self.row0 < 0 or self.col0 < 0:
            raise ArgumentError(f"box {self} has negative coordinates")
        if self.row0 > self.row1 or self.col0 > self.col1:
            raise ArgumentError(f"box {self} has inverted corners")

    @property
    def area(self) -> int:
        return (self.row1 - self.row0 + 1) * (self.col1 - self.col0 + 1)

    def to_json(self) -> dict:
        return {
            "row0": self.row0,
            "col0": self.col0,
            "row1": self.row1,
            "col1": self.col1,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BBox":
        try:
            return cls(
                row0=int(obj["row0"]),
                col0=int(obj["col0"]),
                row1=int(obj["row1"]),
                col1=int(obj["col1"]),
            )
        except KeyError as exc:
            raise FormatError(f"box record missing key {exc}") from exc


def write_mask_pgm(mask: LabelMask, sink) -> None:
    """Emit the mask as binary PGM (P5, maxval 255).

    Distinct labels are compacted to ranks 0..k_found-1 and scaled by
    floor(255 / max(1, k_found - 1)) so any labeling fits the 8-bit range;
    the JSON sidecar keeps the raw label ids.
    """
    distinct = np.unique(mask.labels)
    ranks = np.searchsorted(distinct, mask.labels)
    scale = 255 // max(1, mask.k_found - 1)
    gray = (ranks * scale).astype(np.uint8)
    sink.write(f"P5\n{mask.grid_w} {mask.grid_h}\n255\n".encode("ascii"))
    sink.write(gray.tobytes())


def read_pgm(source) -> np.ndarray:
    """Read a binary PGM into an int array of raw gray values."""
    data = source.read()
    if not data.startswith(b"P5"):
        raise FormatError("not a binary PGM (missing P5 magic)")
    # Header = 4 whitespace-separated tokens (magic, width, height, maxval),
    # with '#' comment lines allowed.
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"bad PGM header: {exc}") from exc
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    expected = width * height
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise FormatError(
            f"truncated PGM raster: expected {expected} bytes, got {len(raster)}"
        )
    return (
        np.frombuffer(raster, dtype=np.uint8).astype(np.int64).reshape(height, width)
    )


def mask_to_json(
    mask: LabelMask,
    bbox: BBox | None = None,
    loss_trace: list[float] | None = None,
) -> dict:
    obj = {
        "grid_h": mask.grid_h,
        "grid_w": mask.grid_w,
        "k_found": mask.k_found,
        "labels": [int(v) for v in mask.flat()],
    }
    if bbox is not None:
        obj["bbox"] = bbox.to_json()
    if loss_trace is not None:
        obj["loss_trace"] = [float(v) for v in loss_trace]
    return obj


def mask_from_json(obj: dict) -> LabelMask:
    try:
        grid_h, grid_w = int(obj["grid_h"]), int(obj["grid_w"])
        labels = np.asarray(obj["labels"], dtype=np.int64).reshape(grid_h, grid_w)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad mask JSON: {exc}") from exc
    return LabelMask.from_labels(labels)
