"""The per-image model: one graph-convolution layer, ELU, a two-layer MLP
with dropout, and a row softmax. Gradients are hand-derived for this fixed
architecture; there is no autodiff here.

Propagation uses row-normalized weighted aggregation P = D^-1 W, which
reduces to a plain neighbour mean when all kept weights are equal. Signed
graphs normalize by the absolute row sum instead so the operator stays
bounded when degrees can be negative.

The whole image is one batch: an "epoch" downstream is a single Adam step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .affinity import NCUT, AffinityMatrix
from .errors import ArgumentError, ContractError, DegenerateGraphError, NumericError

DROPOUT_RATE = 0.25

_FIELDS = ("gcn_weight", "mlp1_weight", "mlp1_bias", "mlp2_weight", "mlp2_bias")


@dataclass(frozen=True)
class ModelParams:
    gcn_weight: np.ndarray  # (c, h)
    mlp1_weight: np.ndarray  # (h, h // 2)
    mlp1_bias: np.ndarray  # (h // 2,)
    mlp2_weight: np.ndarray  # (h // 2, k_out)
    mlp2_bias: np.ndarray  # (k_out,)

    def tensors(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in _FIELDS)

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors())

    def map(self, fn) -> "ModelParams":
        return ModelParams(*(fn(t) for t in self.tensors()))

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return other.map(np.zeros_like)


# Gradients share the per-tensor layout of the parameters they refer to.
ParamGradients = ModelParams


@dataclass(frozen=True)
class ClusterAssignment:
    """Row-stochastic soft assignment; hard labels via per-row argmax."""

    S: np.ndarray  # (n, k_out)

    def __post_init__(self):
        s = np.asarray(self.S, dtype=np.float64)
        if s.ndim != 2:
            raise ArgumentError("assignment must be a 2-D matrix")
        if (s < 0.0).any() or (s > 1.0).any():
            raise NumericError("assignment entries outside [0, 1]")
        if np.abs(s.sum(axis=1) - 1.0).max(initial=0.0) > 1e-5:
            raise NumericError("assignment rows do not sum to 1")

    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.S, axis=1)


@dataclass(frozen=True)
class ActivationCache:
    """Intermediates of one forward pass, enough to run backward."""

    propagated: np.ndarray  # P N, before the trainable projection
    gcn_act: np.ndarray  # ELU(P N Theta)
    mlp1_act: np.ndarray  # ELU of first MLP layer
    dropout_scale: np.ndarray | None  # mask / keep_prob, None in eval mode
    mlp2_input: np.ndarray  # mlp1_act after dropout
    softmax_out: np.ndarray
    train_mode: bool


@dataclass(frozen=True)
class OptState:
    m: ModelParams
    v: ModelParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, lr: float = 1e-3) -> "OptState":
        return cls(
            m=ModelParams.zeros_like(params),
            v=ModelParams.zeros_like(params),
            lr=lr,
        )


def init_params(c: int, hidden: int, k_out: int, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    if c < 1 or hidden < 1 or k_out < 1:
        raise ArgumentError("c, hidden and k_out must all be >= 1")
    if hidden % 2 != 0:
        raise ArgumentError(f"hidden size must be even, got {hidden}")
    rng = np.random.default_rng(seed)

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    half = hidden // 2
    return ModelParams(
        gcn_weight=glorot(c, hidden),
        mlp1_weight=glorot(hidden, half),
        mlp1_bias=np.zeros(half),
        mlp2_weight=glorot(half, k_out),
        mlp2_bias=np.zeros(k_out),
    )


def propagation_matrix(w: AffinityMatrix) -> np.ndarray:
    """Row-normalized aggregation operator P.

    Rows are divided by the degree for nonnegative graphs and by the absolute
    row sum for signed graphs.
    """
    if w.kind == NCUT:
        norm = w.degree
    else:
        norm = np.abs(w.weights).sum(axis=1)
    if (norm <= 0.0).any():
        node = int(np.argmax(norm <= 0.0))
        raise DegenerateGraphError(f"node {node} has zero aggregation mass")
    return w.weights / norm[:, None]


def gcn_propagate(
    w: AffinityMatrix, node_feats: np.ndarray, theta: np.ndarray
) -> np.ndarray:
    """Weighted-mean aggregation followed by the trainable projection."""
    node_feats = np.asarray(node_feats, dtype=np.float64)
    if node_feats.shape[0] != w.n:
        raise ArgumentError(
            f"node features have {node_feats.shape[0]} rows, graph has n={w.n}"
        )
    return (propagation_matrix(w) @ node_feats) @ theta


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(x))


def _elu_grad_from_output(a: np.ndarray) -> np.ndarray:
    # For x <= 0, ELU'(x) = exp(x) = ELU(x) + 1; reusing the forward value
    # keeps forward and backward consistent at the joint.
    return np.where(a > 0.0, 1.0, a + 1.0)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_finite(x: np.ndarray, layer: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values after layer {layer!r}")
    return x


def forward(
    params: ModelParams,
    w: AffinityMatrix,
    node_feats: np.ndarray,
    mode: str = "eval",
    dropout_seed: int | None = None,
    dropout_rate: float = DROPOUT_RATE,
    propagated: np.ndarray | None = None,
) -> tuple[ClusterAssignment, ActivationCache]:
    """One forward pass.

    `propagated` may carry a precomputed P @ N so the optimization loop pays
    the n^2 propagation once per image instead of once per step. Train mode
    applies inverted dropout between the MLP layers and needs a dropout_seed
    whenever the rate is nonzero.
    """
    if mode not in ("train", "eval"):
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if propagated is None:
        node_feats = np.asarray(node_feats, dtype=np.float64)
        if node_feats.shape[0] != w.n:
            raise ArgumentError(
                f"node features have {node_feats.shape[0]} rows, graph n={w.n}"
            )
        propagated = propagation_matrix(w) @ node_feats

    x = _check_finite(propagated @ params.gcn_weight, "gcn")
    a1 = _elu(x)
    z1 = _check_finite(a1 @ params.mlp1_weight + params.mlp1_bias, "mlp1")
    a2 = _elu(z1)
    if train and dropout_rate > 0.0:
        if dropout_seed is None:
            raise ArgumentError("train-mode forward with dropout needs a seed")
        keep = 1.0 - dropout_rate
        rng = np.random.default_rng(dropout_seed)
        scale = (rng.random(a2.shape) >= dropout_rate) / keep
        a2d = a2 * scale
    else:
        scale = None
        a2d = a2
    z2 = _check_finite(a2d @ params.mlp2_weight + params.mlp2_bias, "mlp2")
    s = _check_finite(_softmax_rows(z2), "softmax")
    cache = ActivationCache(
        propagated=propagated,
        gcn_act=a1,
        mlp1_act=a2,
        dropout_scale=scale,
        mlp2_input=a2d,
        softmax_out=s,
        train_mode=train,
    )
    return ClusterAssignment(S=s), cache


def backward(
    params: ModelParams, cache: ActivationCache, dL_dS: np.ndarray
) -> ParamGradients:
    """Exact gradients of a scalar loss w.r.t. all five parameter tensors."""
    if not cache.train_mode:
        raise ContractError("backward needs a cache from a train-mode forward")
    s = cache.softmax_out
    dL_dS = np.asarray(dL_dS, dtype=np.float64)
    if dL_dS.shape != s.shape:
        raise ArgumentError(
            f"upstream gradient shape {dL_dS.shape} != assignment {s.shape}"
        )

    dz2 = s * (dL_dS - (dL_dS * s).sum(axis=1, keepdims=True))
    d_mlp2_w = cache.mlp2_input.T @ dz2
    d_mlp2_b = dz2.sum(axis=0)
    da2d = dz2 @ params.mlp2_weight.T
    da2 = da2d if cache.dropout_scale is None else da2d * cache.dropout_scale
    dz1 = da2 * _elu_grad_from_output(cache.mlp1_act)
    d_mlp1_w = cache.gcn_act.T @ dz1
    d_mlp1_b = dz1.sum(axis=0)
    da1 = dz1 @ params.mlp1_weight.T
    dx = da1 * _elu_grad_from_output(cache.gcn_act)
    d_gcn = cache.propagated.T @ dx
    return ModelParams(
        gcn_weight=d_gcn,
        mlp1_weight=d_mlp1_w,
        mlp1_bias=d_mlp1_b,
        mlp2_weight=d_mlp2_w,
        mlp2_bias=d_mlp2_b,
    )


PARAMS_MAGIC = b"DCWT"
PARAMS_VERSION = 1


def save_params(params: ModelParams, sink) -> int:
    """Binary checkpoint of the five tensors (magic, version, shapes, f64).

    Same header discipline as the feature container: little-endian integers,
    magic-tagged, versioned. Round-trips bit-exactly.
    """
    import struct

    tensors = params.tensors()
    sink.write(PARAMS_MAGIC)
    sink.write(struct.pack("<2I", PARAMS_VERSION, len(tensors)))
    written = 12
    for t in tensors:
        t = np.ascontiguousarray(t, dtype="<f8")
        sink.write(struct.pack("<I", t.ndim))
        sink.write(struct.pack(f"<{t.ndim}I", *t.shape))
        payload = t.tobytes()
        sink.write(payload)
        written += 4 + 4 * t.ndim + len(payload)
    return written


def load_params(source) -> ModelParams:
    """Read a checkpoint written by save_params."""
    import struct

    from .errors import FormatError

    def read_exact(n: int, what: str) -> bytes:
        data = source.read(n)
        if len(data) != n:
            raise FormatError(f"truncated {what}: expected {n} bytes, got {len(data)}")
        return data

    if read_exact(4, "magic") != PARAMS_MAGIC:
        raise FormatError("not a parameter checkpoint (bad magic)")
    version, count = struct.unpack("<2I", read_exact(8, "header"))
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if count != len(_FIELDS):
        raise FormatError(f"checkpoint has {count} tensors, expected {len(_FIELDS)}")
    tensors = []
    for name in _FIELDS:
        (rank,) = struct.unpack("<I", read_exact(4, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", read_exact(4 * rank, f"{name} shape"))
        n_values = int(np.prod(shape)) if rank else 1
        raw = read_exact(8 * n_values, f"{name} payload")
        tensors.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    params = ModelParams(*tensors)
    for t in params.tensors():
        if not np.isfinite(t).all():
            raise FormatError("checkpoint holds non-finite values")
    return params


def adam_step(
    params: ModelParams, grads: ParamGradients, opt: OptState
) -> tuple[ModelParams, OptState]:
    """Bias-corrected Adam update; returns fresh params and state."""
    t = opt.step + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(
        params.tensors(), grads.tensors(), opt.m.tensors(), opt.v.tensors()
    ):
        if p.shape != g.shape:
            raise ArgumentError(f"gradient shape {g.shape} != parameter {p.shape}")
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        m_hat = m / (1.0 - opt.beta1**t)
        v_hat = v / (1.0 - opt.beta2**t)
        new_p.append(p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps))
        new_m.append(m)
        new_v.append(v)
    return (
        ModelParams(*new_p),
        replace(opt, m=ModelParams(*new_m), v=ModelParams(*new_v), step=t),
    )
