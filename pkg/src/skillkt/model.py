"""Encoder-decoder attention model for next-answer prediction.

The encoder consumes problem embeddings, the decoder consumes shifted
interaction embeddings (start token first), and causal masks are applied in
all three attention sites so position i only ever sees positions <= i.  A
separate affine projection maps raw problem embeddings into the skill-vector
space for the projection loss; the skill vectors themselves are constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import Batch, start_token_id
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class ModelConfig:
    d_model: int = 100
    n_heads: int = 1
    n_encoder_layers: int = 4
    n_decoder_layers: int = 4
    dropout: float = 0.05
    skill_dim: int = 25
    max_len: int = 200
    ffn_dim: int | None = None

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.d_model
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} must be a positive multiple "
                              f"of n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if min(self.n_encoder_layers, self.n_decoder_layers) < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if self.skill_dim < 1 or self.max_len < 1 or self.ffn_dim < 1:
            raise ConfigError("skill_dim, max_len and ffn_dim must be positive")


@dataclass
class KTModel:
    config: ModelConfig
    n_problems: int
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def start_token(self) -> int:
        return start_token_id(self.n_problems)

    def parameter_list(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_names(self) -> list[str]:
        return list(self.params.keys())

    def export_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) - set(arrays)
            extra = set(arrays) - set(self.params)
            raise ShapeError(f"parameter name mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, arr in arrays.items():
            if arr.shape != self.params[name].shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != "
                                 f"{self.params[name].shape}")
            self.params[name].data = arr.astype(self.params[name].dtype, copy=True)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.params.values())


@dataclass
class PredictionOutput:
    r_hat: Tensor                  # (batch, length), strictly in (0, 1)
    projected: Tensor | None       # (batch, length, skill_dim) or None


def parameter_count(config: ModelConfig, n_problems: int) -> int:
    """Closed-form trainable parameter count for a given configuration."""
    d, f, s = config.d_model, config.ffn_dim, config.skill_dim
    attn = 4 * d * d + 4 * d
    ln = 2 * d
    ffn = d * f + f + f * d + d
    enc = config.n_encoder_layers * (attn + ln + ffn + ln)
    dec = config.n_decoder_layers * (2 * (attn + ln) + ffn + ln)
    tables = n_problems * d + (2 * n_problems + 1) * d + config.max_len * d
    proj = d * s + s
    head = d + 1
    return tables + enc + dec + proj + head


def init_parameters(config: ModelConfig, n_problems: int, seed: int) -> KTModel:
    """Deterministic init: embedding tables ~ Normal(0, 1/sqrt(d_model)),
    linear weights Xavier-uniform, norm gains 1, all other biases 0."""
    if n_problems < 1:
        raise ConfigError(f"n_problems must be >= 1, got {n_problems}")
    rng = np.random.default_rng([seed, 0])
    dt = T.default_dtype()
    d, f = config.d_model, config.ffn_dim
    params: dict[str, Tensor] = {}

    def table(name, rows):
        std = 1.0 / np.sqrt(d)
        params[name] = Tensor(rng.normal(0.0, std, size=(rows, d)), requires_grad=True, dtype=dt)

    def linear(name, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                          requires_grad=True, dtype=dt)
        params[f"{name}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True, dtype=dt)

    def norm(name):
        params[f"{name}.gain"] = Tensor(np.ones(d), requires_grad=True, dtype=dt)
        params[f"{name}.bias"] = Tensor(np.zeros(d), requires_grad=True, dtype=dt)

    def attention(name):
        for piece in ("wq", "wk", "wv", "wo"):
            linear(f"{name}.{piece}", d, d)

    table("problem_embedding", n_problems)
    table("interaction_embedding", 2 * n_problems + 1)
    table("positional", config.max_len)
    for i in range(config.n_encoder_layers):
        attention(f"encoder.{i}.attn")
        norm(f"encoder.{i}.norm1")
        linear(f"encoder.{i}.ffn.w1", d, f)
        linear(f"encoder.{i}.ffn.w2", f, d)
        norm(f"encoder.{i}.norm2")
    for i in range(config.n_decoder_layers):
        attention(f"decoder.{i}.self_attn")
        norm(f"decoder.{i}.norm1")
        attention(f"decoder.{i}.cross_attn")
        norm(f"decoder.{i}.norm2")
        linear(f"decoder.{i}.ffn.w1", d, f)
        linear(f"decoder.{i}.ffn.w2", f, d)
        norm(f"decoder.{i}.norm3")
    linear("projection", d, config.skill_dim)
    linear("head", d, 1)
    return KTModel(config=config, n_problems=n_problems, params=params)


def causal_mask(length: int, dtype=np.float64) -> np.ndarray:
    """(L, L) additive mask: 0 at j <= i, -inf above the diagonal."""
    m = np.zeros((length, length), dtype=dtype)
    m[np.triu_indices(length, k=1)] = -np.inf
    return m


def _linear(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return T.add(T.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, l, d = x.shape
    return T.transpose(T.reshape(x, (b, l, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, l, h * dh))


def _attention(q_in: Tensor, kv_in: Tensor, params: dict[str, Tensor], name: str,
               mask: np.ndarray, n_heads: int) -> Tensor:
    q = _linear(q_in, params, f"{name}.wq")
    k = _linear(kv_in, params, f"{name}.wk")
    v = _linear(kv_in, params, f"{name}.wv")
    if n_heads > 1:
        q, k, v = (_split_heads(t, n_heads) for t in (q, k, v))
    d_head = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d_head))
    weights = T.softmax(scores, mask=mask)
    ctx = T.matmul(weights, v)
    if n_heads > 1:
        ctx = _merge_heads(ctx)
    return _linear(ctx, params, f"{name}.wo")


def _ffn(x: Tensor, params: dict[str, Tensor], name: str, drop, train: bool) -> Tensor:
    h = T.relu(_linear(x, params, f"{name}.w1"))
    if train:
        h = drop(h)
    out = _linear(h, params, f"{name}.w2")
    return drop(out) if train else out


def forward(model: KTModel, batch: Batch, mode: str = "train",
            rng: np.random.Generator | None = None,
            with_projection: bool = True) -> PredictionOutput:
    """Run the model over a batch.

    mode "train" enables dropout (rng required); "eval" disables it.  Padded
    positions are replaced by safe in-range ids before the embedding gather;
    tail padding plus the causal masks guarantee they cannot reach any valid
    position's prediction.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    cfg = model.config
    if train and cfg.dropout > 0 and rng is None:
        raise ConfigError("train mode with dropout needs an rng")
    b, length = batch.encoder_ids.shape
    if length > cfg.max_len:
        raise ShapeError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    valid = batch.valid_mask > 0
    enc_ids = np.where(valid, batch.encoder_ids, 0)
    dec_ids = np.where(valid, batch.decoder_ids, model.start_token)
    if enc_ids.min() < 0 or enc_ids.max() >= model.n_problems:
        raise ShapeError(f"encoder ids outside [0, {model.n_problems})")
    if dec_ids.min() < 0 or dec_ids.max() > model.start_token:
        raise ShapeError(f"decoder ids outside [0, {model.start_token}]")

    params = model.params
    dt = params["problem_embedding"].dtype

    def drop(x: Tensor) -> Tensor:
        return T.dropout(x, cfg.dropout, rng) if cfg.dropout > 0 else x

    mask = causal_mask(length, dtype=dt)
    pos = T.gather(params["positional"], np.arange(length))
    p_emb = T.gather(params["problem_embedding"], enc_ids)

    x = T.add(p_emb, pos)
    if train:
        x = drop(x)
    for i in range(cfg.n_encoder_layers):
        base = f"encoder.{i}"
        a = _attention(x, x, params, f"{base}.attn", mask, cfg.n_heads)
        if train:
            a = drop(a)
        x = T.layer_norm(T.add(x, a), params[f"{base}.norm1.gain"], params[f"{base}.norm1.bias"])
        h = _ffn(x, params, f"{base}.ffn", drop, train)
        x = T.layer_norm(T.add(x, h), params[f"{base}.norm2.gain"], params[f"{base}.norm2.bias"])
    memory = x

    y = T.add(T.gather(params["interaction_embedding"], dec_ids), pos)
    if train:
        y = drop(y)
    for i in range(cfg.n_decoder_layers):
        base = f"decoder.{i}"
        a = _attention(y, y, params, f"{base}.self_attn", mask, cfg.n_heads)
        if train:
            a = drop(a)
        y = T.layer_norm(T.add(y, a), params[f"{base}.norm1.gain"], params[f"{base}.norm1.bias"])
        a = _attention(y, memory, params, f"{base}.cross_attn", mask, cfg.n_heads)
        if train:
            a = drop(a)
        y = T.layer_norm(T.add(y, a), params[f"{base}.norm2.gain"], params[f"{base}.norm2.bias"])
        h = _ffn(y, params, f"{base}.ffn", drop, train)
        y = T.layer_norm(T.add(y, h), params[f"{base}.norm3.gain"], params[f"{base}.norm3.bias"])

    logits = T.reshape(_linear(y, params, "head"), (b, length))
    r_hat = T.sigmoid(logits)

    projected = None
    if with_projection:
        projected = _linear(p_emb, params, "projection")
    return PredictionOutput(r_hat=r_hat, projected=projected)


def projection_loss(projected: Tensor, skill_vectors: np.ndarray,
                    encoder_ids: np.ndarray, valid_mask: np.ndarray) -> Tensor:
    """Mean squared distance between projected problem embeddings and their
    (constant) skill vectors, averaged over valid positions and normalized by
    the skill dimension.  Defined as 0 when every position is masked."""
    skill_vectors = np.asarray(skill_vectors)
    s_dim = projected.shape[-1]
    if skill_vectors.ndim != 2 or skill_vectors.shape[1] != s_dim:
        raise ShapeError(f"skill vectors shape {skill_vectors.shape} does not match "
                         f"projection dim {s_dim}")
    valid = valid_mask > 0
    n_valid = int(valid.sum())
    dt = projected.dtype
    if n_valid == 0:
        return Tensor(np.asarray(0.0, dtype=dt), dtype=dt)
    ids = np.where(valid, encoder_ids, 0)
    if ids.max() >= skill_vectors.shape[0]:
        raise ShapeError(f"encoder id {ids.max()} outside skill table "
                         f"({skill_vectors.shape[0]} rows)")
    targets = Tensor(skill_vectors[ids], dtype=dt)
    diff = T.sub(projected, targets)
    sq = T.mul(diff, diff)
    ones = Tensor(np.ones((s_dim, 1)), dtype=dt)
    per_pos = T.reshape(T.matmul(sq, ones), projected.shape[:-1])
    masked = T.mul(per_pos, Tensor(valid_mask, dtype=dt))
    return T.scale(T.reduce_sum(masked), 1.0 / (n_valid * s_dim))


def kt_loss(r_hat: Tensor, labels: np.ndarray, valid_mask: np.ndarray) -> Tensor:
    """Masked mean binary cross-entropy between predictions and correctness."""
    return T.bce(r_hat, labels, mask=valid_mask)


def total_loss(l_k: Tensor, l_p: Tensor | None, lam: float) -> Tensor:
    """Final objective: kt loss plus lam times the projection loss."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if l_p is None or lam == 0.0:
        return l_k
    return T.add(l_k, T.scale(l_p, lam))
