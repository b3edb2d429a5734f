import numpy as np
import pytest

import deepcut as dc


def make_field(features: np.ndarray, grid_h: int, grid_w: int) -> dc.FeatureField:
    """Wrap an (n, c) feature matrix in a field with unit patch geometry."""
    features = np.asarray(features, dtype=np.float32)
    return dc.FeatureField(
        grid_h=grid_h,
        grid_w=grid_w,
        embed_dim=features.shape[1],
        features=features,
        meta=dc.GeometryMeta(
            image_h=grid_h, image_w=grid_w, patch_size=1, stride=1, source_id="test"
        ),
    )


def random_field(grid_h: int, grid_w: int, embed_dim: int, seed: int) -> dc.FeatureField:
    rng = np.random.default_rng(seed)
    return make_field(
        rng.normal(size=(grid_h * grid_w, embed_dim)), grid_h, grid_w
    )


def random_ncut_affinity(n: int, seed: int) -> dc.AffinityMatrix:
    """Random nonnegative symmetric weights with a positive diagonal."""
    rng = np.random.default_rng(seed)
    w = np.abs(rng.normal(size=(n, n)))
    w = (w + w.T) / 2
    np.fill_diagonal(w, np.abs(rng.normal(size=n)) + 0.5)
    return dc.AffinityMatrix.from_weights(w, dc.NCUT)


def random_cc_affinity(n: int, seed: int) -> dc.AffinityMatrix:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, n))
    w = (w + w.T) / 2
    return dc.AffinityMatrix.from_weights(w, dc.CC)


def hierarchical_field(
    noise: float, data_seed: int, grid: int = 16
) -> tuple[dc.FeatureField, dc.LabelMask]:
    """Background plus two foreground parts that share a common component.

    The parts are positively correlated with each other (shared dimension)
    and orthogonal to the background, so a 2-way split groups them together
    and a second pass can still tell them apart.
    """
    labels = np.zeros((grid, grid), np.int64)
    labels[grid // 4 : 3 * grid // 4, 2 : grid // 2] = 1
    labels[grid // 4 : 3 * grid // 4, grid // 2 : grid - 2] = 2
    centers = np.zeros((3, 8))
    centers[0, 0] = 1.0
    centers[1, 1] = 1.0
    centers[1, 2] = 0.7
    centers[2, 1] = 1.0
    centers[2, 2] = -0.7
    rng = np.random.default_rng(data_seed)
    feats = centers[labels.ravel()] + rng.normal(0, noise, (labels.size, 8))
    return make_field(feats, grid, grid), dc.LabelMask.from_labels(labels)


def partitions_by_block_growth(n: int):
    """All set partitions of range(n), built recursively block by block.

    Independent of the restricted-growth-string iteration used by the
    library: items are appended to existing blocks or opened as new blocks.
    Yields canonical label arrays (blocks numbered by first occurrence).
    """

    def grow(item: int, blocks: list[list[int]]):
        if item == n:
            yield [list(b) for b in blocks]
            return
        for i in range(len(blocks)):
            blocks[i].append(item)
            yield from grow(item + 1, blocks)
            blocks[i].pop()
        blocks.append([item])
        yield from grow(item + 1, blocks)
        blocks.pop()

    for blocks in grow(0, []):
        labels = np.empty(n, dtype=np.int64)
        for idx, block in enumerate(blocks):
            for member in block:
                labels[member] = idx
        yield labels


def central_difference(fn, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Coordinate-wise central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(x)
        flat[i] = orig - eps
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


@pytest.fixture
def planted_two_block() -> dc.PlantedField:
    return dc.synth_planted_features(16, 16, 2, 0.0, 123)


@pytest.fixture
def planted_three_block() -> dc.PlantedField:
    return dc.synth_planted_features(16, 16, 3, 0.1, 7)
