"""A small attention stack over geotokens with hand-written backprop.

Each layer projects tokens to queries/keys/values, rotates queries and keys
with the configured position encoder, runs multi-head scaled dot-product
attention and adds the result back onto its input. An optional tanh
feed-forward sublayer (also residual) follows. There are no biases.

All arrays are batched: features ``(B, n, d)``, positions ``(B, n)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import RopeVariant, rope_blocks, rope_schedule, rotate_pairs, sinusoidal_table
from .geo import GeoPosition, Geotoken
from .spherical import EncodingConfig, Mode, PadPolicy, encoding_blocks, pad_to, rotate_blocks


class ModelError(ValueError):
    pass


class EncoderKind(str, enum.Enum):
    NONE = "none"
    SINUSOIDAL = "sinusoidal"
    ROPE = "rope"
    SPHERICAL = "spherical"


# -- position encoders ------------------------------------------------------


class NoEncoder:
    kind = EncoderKind.NONE

    def __init__(self, dim: int):
        self.dim = dim

    def input_offset(self, n: int) -> Optional[np.ndarray]:
        return None

    def rotations(self, lat: np.ndarray, lon: np.ndarray) -> Optional[np.ndarray]:
        return None

    def rotate(self, rot: Optional[np.ndarray], y: np.ndarray, transpose: bool = False) -> np.ndarray:
        return y


class SinusoidalEncoder(NoEncoder):
    """Adds the sinusoidal table (indexed by list position) to the inputs."""

    kind = EncoderKind.SINUSOIDAL

    def __init__(self, dim: int, base: float = 10000.0):
        super().__init__(dim)
        self.base = base

    def input_offset(self, n: int) -> np.ndarray:
        return sinusoidal_table(n, self.dim, self.base).values


class RopeEncoder(NoEncoder):
    """Rotates query/key pairs by list position times the per-pair frequency."""

    kind = EncoderKind.ROPE

    def __init__(self, dim: int, variant: RopeVariant = RopeVariant.PRINTED, base: float = 10000.0):
        super().__init__(dim)
        self.schedule = rope_schedule(dim, variant, base)

    def rotations(self, lat, lon):
        m = np.broadcast_to(np.arange(lat.shape[-1], dtype=np.float64), lat.shape)
        return rope_blocks(m, self.schedule)

    def rotate(self, rot, y, transpose=False):
        return rotate_pairs(rot, y, transpose)


class SphericalEncoder(NoEncoder):
    """Rotates 3-wide query/key slices by the geotoken's latitude/longitude."""

    kind = EncoderKind.SPHERICAL

    def __init__(self, config: EncodingConfig):
        super().__init__(config.dim)
        self.config = config

    def rotations(self, lat, lon):
        return encoding_blocks(lat, lon, self.config)

    def rotate(self, rot, y, transpose=False):
        return rotate_blocks(rot, pad_to(y, self.config.padded_dim), transpose)[..., : self.dim]


# -- configuration and parameters ------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 12
    heads: int = 1
    layers: int = 1
    ff_width: int = 0
    seed: int = 0
    encoder: EncoderKind = EncoderKind.SPHERICAL
    mode: Mode = Mode.UNIFORM
    base: float = 10000.0
    pad: bool = False
    rope_variant: RopeVariant = RopeVariant.PRINTED

    def __post_init__(self):
        object.__setattr__(self, "encoder", EncoderKind(self.encoder))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "rope_variant", RopeVariant(self.rope_variant))
        if self.dim < 1 or self.heads < 1 or self.layers < 1 or self.ff_width < 0:
            raise ModelError(f"invalid model sizes in {self}")
        if self.dim % self.heads:
            raise ModelError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if self.encoder in (EncoderKind.SINUSOIDAL, EncoderKind.ROPE) and self.dim % 2:
            raise ModelError(f"{self.encoder.value} encoder needs an even dim, got {self.dim}")
        self.encoding_config()  # validates dim % 3 for the spherical encoder

    def encoding_config(self) -> Optional[EncodingConfig]:
        if self.encoder is not EncoderKind.SPHERICAL:
            return None
        pad = PadPolicy.ZERO if self.pad else PadPolicy.REJECT
        try:
            return EncodingConfig(self.dim, self.mode, self.base, pad)
        except ValueError as exc:
            raise ModelError(str(exc)) from exc


def make_encoder(config: ModelConfig) -> NoEncoder:
    if config.encoder is EncoderKind.SINUSOIDAL:
        return SinusoidalEncoder(config.dim, config.base)
    if config.encoder is EncoderKind.ROPE:
        return RopeEncoder(config.dim, config.rope_variant, config.base)
    if config.encoder is EncoderKind.SPHERICAL:
        return SphericalEncoder(config.encoding_config())
    return NoEncoder(config.dim)


@dataclass(eq=False)
class AttentionLayer:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    heads: int
    encoder: NoEncoder

    def __post_init__(self):
        d = self.W_q.shape[0]
        for w in (self.W_q, self.W_k, self.W_v):
            if w.shape != (d, d):
                raise ModelError(f"projection weights must be {d}x{d}, got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ModelError("non-finite projection weight")
        if d % self.heads:
            raise ModelError(f"dim={d} is not divisible by heads={self.heads}")

    @property
    def dim(self) -> int:
        return self.W_q.shape[0]


@dataclass(eq=False)
class FeedForward:
    W_1: np.ndarray  # (ff, d)
    W_2: np.ndarray  # (d, ff)


@dataclass
class Batch:
    features: np.ndarray  # (B, n, d)
    lat: np.ndarray  # (B, n)
    lon: np.ndarray  # (B, n)

    @classmethod
    def from_tokens(cls, tokens: Sequence[Geotoken]) -> "Batch":
        if not tokens:
            raise ModelError("attention needs at least one geotoken")
        d = tokens[0].dim
        for t in tokens:
            t.check_dim(d)
        return cls(
            np.stack([t.features for t in tokens])[None],
            np.array([[t.position.lat for t in tokens]]),
            np.array([[t.position.lon for t in tokens]]),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.features.shape


class GeoTransformer:
    """Stack of residual attention layers (plus optional feed-forward sublayers)."""

    def __init__(self, config: ModelConfig, params: Optional[dict[str, np.ndarray]] = None):
        self.config = config
        self.encoder = make_encoder(config)
        if params is None:
            params = init_params(config)
        expected = param_shapes(config)
        if set(params) != set(expected):
            raise ModelError(f"parameter names {sorted(params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ModelError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in expected}

    def layer(self, i: int) -> AttentionLayer:
        p = self.params
        return AttentionLayer(p[f"attn{i}.W_q"], p[f"attn{i}.W_k"], p[f"attn{i}.W_v"], self.config.heads, self.encoder)

    def ffn(self, i: int) -> Optional[FeedForward]:
        if not self.config.ff_width:
            return None
        return FeedForward(self.params[f"ffn{i}.W_1"], self.params[f"ffn{i}.W_2"])

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, batch: Batch, self_mask: bool = False) -> "ForwardResult":
        return forward(self, batch, self_mask)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.dim, config.ff_width
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(config.layers):
        for w in ("W_q", "W_k", "W_v"):
            shapes[f"attn{i}.{w}"] = (d, d)
        if f:
            shapes[f"ffn{i}.W_1"] = (f, d)
            shapes[f"ffn{i}.W_2"] = (d, f)
    return shapes


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) in a fixed parameter order."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        bound = 1.0 / math.sqrt(shape[1])
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# -- single-vector operations -----------------------------------------------


def project_qkv(layer: AttentionLayer, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.dim:
        raise ModelError(f"input length {x.shape[-1]} does not match layer dim {layer.dim}")
    return x @ layer.W_q.T, x @ layer.W_k.T, x @ layer.W_v.T


def encode_qk(
    q,
    k,
    pos_q: GeoPosition,
    pos_k: GeoPosition,
    encoder: NoEncoder,
    index_q: int = 0,
    index_k: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a query and a key for their positions. Values are never rotated.

    ``index_q``/``index_k`` are list positions, only read by the RoPE baseline.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != encoder.dim or k.shape[-1] != encoder.dim:
        raise ModelError(f"encoder dim {encoder.dim} does not match vectors of length {q.shape[-1]}/{k.shape[-1]}")
    lat = np.array([pos_q.lat, pos_k.lat])
    lon = np.array([pos_q.lon, pos_k.lon])
    rot = encoder.rotations(lat, lon)
    if rot is None:
        return q, k
    if isinstance(encoder, RopeEncoder):
        rot = rope_blocks(np.array([index_q, index_k], dtype=np.float64), encoder.schedule)
    return encoder.rotate(rot[0], q), encoder.rotate(rot[1], k)


# -- forward / backward ------------------------------------------------------


def softmax(s: np.ndarray) -> np.ndarray:
    z = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _split(x: np.ndarray, heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


@dataclass
class LayerCache:
    H: np.ndarray
    Qh: np.ndarray  # rotated, split
    Kh: np.ndarray
    Vh: np.ndarray
    logits: np.ndarray  # (B, h, n, n), masked entries are -inf
    weights: np.ndarray  # (B, h, n, n)
    H1: np.ndarray
    G: Optional[np.ndarray]


@dataclass
class ForwardResult:
    output: np.ndarray
    caches: list[LayerCache]
    rot: Optional[np.ndarray] = field(repr=False)

    @property
    def weights(self) -> list[np.ndarray]:
        return [c.weights for c in self.caches]


def _layer_forward(layer: AttentionLayer, H, rot, self_mask: bool):
    Q = H @ layer.W_q.T
    K = H @ layer.W_k.T
    V = H @ layer.W_v.T
    if rot is not None:
        Q = layer.encoder.rotate(rot, Q)
        K = layer.encoder.rotate(rot, K)
    Qh, Kh, Vh = _split(Q, layer.heads), _split(K, layer.heads), _split(V, layer.heads)
    scale = 1.0 / math.sqrt(layer.dim // layer.heads)
    S = (Qh @ Kh.transpose(0, 1, 3, 2)) * scale
    n = H.shape[1]
    if self_mask and n > 1:
        S = np.where(np.eye(n, dtype=bool), -np.inf, S)
    A = softmax(S)
    O = _merge(A @ Vh)
    return O, Qh, Kh, Vh, S, A


def attention_forward(layer: AttentionLayer, tokens: Sequence[Geotoken]) -> tuple[np.ndarray, np.ndarray]:
    """One attention layer (no residual) over a list of geotokens.

    Returns the attended outputs ``(n, d)`` and the weights ``(heads, n, n)``.
    """
    batch = Batch.from_tokens(tokens)
    if batch.shape[2] != layer.dim:
        raise ModelError(f"geotokens have {batch.shape[2]} features, layer dim is {layer.dim}")
    X = batch.features
    offset = layer.encoder.input_offset(X.shape[1])
    if offset is not None:
        X = X + offset
    rot = layer.encoder.rotations(batch.lat, batch.lon)
    O, *_, A = _layer_forward(layer, X, rot, self_mask=False)
    return O[0], A[0]


def forward(model: GeoTransformer, batch: Batch, self_mask: bool = False) -> ForwardResult:
    """Full stack forward pass, keeping what backward needs.

    With ``self_mask`` every token attends only to the other tokens.
    """
    X = batch.features
    if X.ndim != 3 or X.shape[2] != model.config.dim:
        raise ModelError(f"batch features {X.shape} do not match model dim {model.config.dim}")
    if X.shape[1] < 1:
        raise ModelError("attention needs at least one geotoken")
    offset = model.encoder.input_offset(X.shape[1])
    H = X + offset if offset is not None else X
    rot = model.encoder.rotations(batch.lat, batch.lon)
    caches = []
    for i in range(model.config.layers):
        O, Qh, Kh, Vh, S, A = _layer_forward(model.layer(i), H, rot, self_mask)
        H1 = H + O
        ff = model.ffn(i)
        G = None
        H2 = H1
        if ff is not None:
            G = np.tanh(H1 @ ff.W_1.T)
            H2 = H1 + G @ ff.W_2.T
        caches.append(LayerCache(H, Qh, Kh, Vh, S, A, H1, G))
        H = H2
    return ForwardResult(H, caches, rot)


def backward_pass(
    model: GeoTransformer,
    fwd: ForwardResult,
    d_output: Optional[np.ndarray],
    d_weights: Optional[dict[int, np.ndarray]] = None,
) -> dict[str, np.ndarray]:
    """Gradients of every parameter given upstream gradients.

    ``d_output`` is dL/d(output); ``d_weights`` maps a layer index to dL/dA for
    that layer's attention weights.
    """
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    d_weights = d_weights or {}
    heads = model.config.heads
    dim = model.config.dim
    scale = 1.0 / math.sqrt(dim // heads)
    dH = np.zeros_like(fwd.output) if d_output is None else d_output
    for i in reversed(range(model.config.layers)):
        c = fwd.caches[i]
        layer = model.layer(i)
        ff = model.ffn(i)
        if ff is not None:
            grads[f"ffn{i}.W_2"] = np.einsum("bnd,bnf->df", dH, c.G)
            dZ = (dH @ ff.W_2) * (1.0 - c.G**2)
            grads[f"ffn{i}.W_1"] = np.einsum("bnf,bnd->fd", dZ, c.H1)
            dH1 = dH + dZ @ ff.W_1
        else:
            dH1 = dH
        dOh = _split(dH1, heads)
        A = c.weights
        dA = dOh @ c.Vh.transpose(0, 1, 3, 2)
        if i in d_weights:
            dA = dA + d_weights[i]
        dVh = A.transpose(0, 1, 3, 2) @ dOh
        dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True))
        dQ = _merge(dS @ c.Kh) * scale
        dK = _merge(dS.transpose(0, 1, 3, 2) @ c.Qh) * scale
        dV = _merge(dVh)
        if fwd.rot is not None:
            dQ = layer.encoder.rotate(fwd.rot, dQ, transpose=True)
            dK = layer.encoder.rotate(fwd.rot, dK, transpose=True)
        grads[f"attn{i}.W_q"] = np.einsum("bni,bnj->ij", dQ, c.H)
        grads[f"attn{i}.W_k"] = np.einsum("bni,bnj->ij", dK, c.H)
        grads[f"attn{i}.W_v"] = np.einsum("bni,bnj->ij", dV, c.H)
        dH = dH1 + dQ @ layer.W_q + dK @ layer.W_k + dV @ layer.W_v
    return grads


# -- losses ------------------------------------------------------------------

LossFn = Callable[[GeoTransformer, ForwardResult], tuple[float, Optional[np.ndarray], dict[int, np.ndarray]]]


@dataclass
class MSELoss:
    """``0.5 * sum((output - target)^2) / B``."""

    targets: np.ndarray
    self_mask: bool = False

    def __call__(self, model, fwd):
        diff = fwd.output - self.targets
        b = diff.shape[0]
        return 0.5 * float(np.sum(diff * diff)) / b, diff / b, {}


@dataclass
class AnchorCrossEntropy:
    """Cross-entropy between the last layer's anchor attention row and a target distribution.

    Heads are averaged before the log. Tokens never attend to themselves here.
    """

    anchors: np.ndarray  # (B,)
    targets: np.ndarray  # (B, n)
    self_mask: bool = True

    def __call__(self, model, fwd):
        A = fwd.caches[-1].weights
        b, h, n, _ = A.shape
        rows = A[np.arange(b), :, self.anchors, :]  # (B, h, n)
        P = rows.mean(axis=1)
        t = self.targets
        pos = t > 0
        safe_p = np.where(pos, P, 1.0)
        value = -float(np.sum(np.where(pos, t * np.log(safe_p), 0.0))) / b
        dP = np.where(pos, -t / safe_p, 0.0) / b
        dA = np.zeros_like(A)
        dA[np.arange(b), :, self.anchors, :] = dP[:, None, :] / h
        return value, None, {model.config.layers - 1: dA}


def backward(model: GeoTransformer, batch: Batch, loss: LossFn) -> tuple[float, dict[str, np.ndarray]]:
    """Forward, loss and exact gradients for every parameter."""
    fwd = forward(model, batch, getattr(loss, "self_mask", False))
    value, d_out, d_w = loss(model, fwd)
    return value, backward_pass(model, fwd, d_out, d_w)


def loss_value(model: GeoTransformer, batch: Batch, loss: LossFn) -> float:
    fwd = forward(model, batch, getattr(loss, "self_mask", False))
    return loss(model, fwd)[0]


# -- gradient checking -------------------------------------------------------


@dataclass
class GradientReport:
    step: float
    max_rel_error: dict[str, float]
    abs_floor: float = 1e-8

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst < tol


def gradient_check(model: GeoTransformer, batch: Batch, loss: LossFn, step: float = 1e-5) -> GradientReport:
    """Compare analytic gradients with central differences, entry by entry.

    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``.
    """
    _, grads = backward(model, batch, loss)
    report = GradientReport(step, {})
    for name, p in model.params.items():
        worst = 0.0
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_value(model, batch, loss)
            flat[j] = orig - step
            down = loss_value(model, batch, loss)
            flat[j] = orig
            num = (up - down) / (2.0 * step)
            denom = max(abs(num), abs(g[j]), report.abs_floor)
            worst = max(worst, abs(num - g[j]) / denom)
        report.max_rel_error[name] = worst
    return report
