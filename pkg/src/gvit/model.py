"""GViT: chain-GCN feature extractor, uniform pooling, class token,
transformer encoder, and a two-output concentration head.

A model handles graphs of any length: the GCN runs over the full chain,
pooling maps N nodes onto a fixed M slots, and the class token's encoder
output feeds the head. Parameter count therefore never depends on N.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .graph import (
    SensorGraph,
    build_chain_adjacency,
    normalize_adjacency,
    gcn_stack,
)
from .tensor import (
    Tensor,
    add,
    concat_cols,
    concat_rows,
    from_op,
    gelu,
    layer_norm_rows,
    matmul,
    mul,
    no_grad,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose,
)
from . import kernels

CHECKPOINT_FORMAT = 1


@dataclass
class GViTConfig:
    """Architecture hyperparameters; model width D = gcn_layers * gcn_filters."""

    in_features: int = 16
    gcn_layers: int = 3
    gcn_filters: int = 16
    d_model: int = 48
    pooled_nodes: int = 300
    encoder_blocks: int = 18
    attention_heads: int = 4
    mlp_hidden: int = 0  # 0 means 4 * d_model
    out_gases: int = 2
    positional_embedding: bool = True
    adjacency_mode: str = "symmetric"
    encoder_norm: str = "pre"
    seed: int = 0

    def __post_init__(self):
        if self.mlp_hidden == 0:
            self.mlp_hidden = 4 * self.d_model

    def validate(self) -> "GViTConfig":
        if self.gcn_layers * self.gcn_filters != self.d_model:
            raise ConfigError(
                f"gcn_layers * gcn_filters must equal d_model: "
                f"{self.gcn_layers} * {self.gcn_filters} != {self.d_model}"
            )
        if self.d_model % self.attention_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by "
                f"{self.attention_heads} attention heads"
            )
        if self.pooled_nodes < 1:
            raise ConfigError(f"pooled_nodes must be >= 1, got {self.pooled_nodes}")
        if self.encoder_blocks < 1:
            raise ConfigError(f"encoder_blocks must be >= 1, got {self.encoder_blocks}")
        if self.in_features < 1 or self.mlp_hidden < 1:
            raise ConfigError("in_features and mlp_hidden must be positive")
        if self.out_gases != 2:
            raise ConfigError("the model predicts exactly two gases per group")
        if self.adjacency_mode not in ("symmetric", "row"):
            raise ConfigError(f"unknown adjacency mode {self.adjacency_mode!r}")
        if self.encoder_norm not in ("pre", "post"):
            raise ConfigError(f"unknown encoder_norm {self.encoder_norm!r}")
        return self

    @property
    def tokens(self) -> int:
        """Token count after pooling and class-token concatenation (M + 1)."""
        return self.pooled_nodes + 1


def pool_segments(n: int, m: int):
    """Index ranges [starts[j], ends[j]) pooled into output row j.

    Row j covers input rows floor(j*n/m) .. floor((j+1)*n/m), widened to at
    least one row, clamped to [0, n). With n >= m this is the contiguous
    segment partition; with n < m it degenerates to index replication.
    """
    if m < 1:
        raise DomainError(f"pooled node count must be >= 1, got {m}")
    j = np.arange(m, dtype=np.int64)
    starts = (j * n) // m
    ends = np.minimum(np.maximum(((j + 1) * n) // m, starts + 1), n)
    return starts, ends


def uniform_pool(x: Tensor, m: int) -> Tensor:
    """Average N input rows into exactly m output rows (differentiable)."""
    n = x.shape[0]
    if n < 1:
        raise DomainError("cannot pool an empty graph")
    starts, ends = pool_segments(n, m)
    out_data = kernels.pool_forward(x.data, starts, ends)

    def bwd(out):
        x.grad += kernels.pool_backward(out.grad, starts, ends, n)

    return from_op(out_data, (x,), bwd)


def prepend_class_token(xp: Tensor, v_class: Tensor) -> Tensor:
    """Stack the trainable class token on top of the pooled node matrix."""
    if v_class.shape != (1, xp.shape[1]):
        raise DimensionError(
            f"class token shape {v_class.shape} does not match width {xp.shape[1]}"
        )
    return concat_rows([v_class, xp])


def mha(x: Tensor, weights: dict, heads: int) -> Tensor:
    """Multi-head self-attention over all tokens, no masking.

    Per head: scores = Q K^T / sqrt(D/heads), softmax over keys, weighted
    sum of V; heads are concatenated and output-projected.
    """
    d = x.shape[1]
    if d % heads != 0:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    q = add(matmul(x, weights["wq"]), weights["bq"])
    k = add(matmul(x, weights["wk"]), weights["bk"])
    v = add(matmul(x, weights["wv"]), weights["bv"])
    scale = 1.0 / np.sqrt(dh)
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        scores = mul(matmul(qh, transpose(kh)), scale)
        attn = softmax_rows(scores)
        outs.append(matmul(attn, vh))
    cat = outs[0] if heads == 1 else concat_cols(outs)
    return add(matmul(cat, weights["wo"]), weights["bo"])


def mlp(x: Tensor, weights: dict) -> Tensor:
    h = gelu(add(matmul(x, weights["w1"]), weights["b1"]))
    return add(matmul(h, weights["w2"]), weights["b2"])


def encoder_block(x: Tensor, block: dict, heads: int, norm: str = "pre") -> Tensor:
    """One transformer block; pre-norm keeps the residual path clean, so an
    all-zero block is the identity map."""
    if norm == "pre":
        x = add(x, mha(layer_norm_rows(x, block["ln1_g"], block["ln1_b"]), block, heads))
        x = add(x, mlp(layer_norm_rows(x, block["ln2_g"], block["ln2_b"]), block))
        return x
    x = layer_norm_rows(add(x, mha(x, block, heads)), block["ln1_g"], block["ln1_b"])
    x = layer_norm_rows(add(x, mlp(x, block)), block["ln2_g"], block["ln2_b"])
    return x


def predict_composition(conc, threshold: float = 0.01) -> str:
    """Map two normalized concentrations to a composition label.

    A gas is present iff its concentration is >= threshold. Neither present
    yields "none", an anomaly class excluded from the confusion matrix.
    """
    a, b = float(conc[0]), float(conc[1])
    if a >= threshold and b >= threshold:
        return "A+B"
    if a >= threshold:
        return "A"
    if b >= threshold:
        return "B"
    return "none"


class GViTModel:
    """The full trainable parameter set plus forward/predict entry points."""

    def __init__(self, config: GViTConfig, group: str | None = None,
                 target_scale=None):
        self.config = config.validate()
        self.group = group
        # per-gas ppm maxima used to denormalize predictions
        self.target_scale = None if target_scale is None else np.asarray(
            target_scale, dtype=np.float64)
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(config.seed))

    # -- parameters -----------------------------------------------------------

    def _param(self, name: str, data) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng):
        cfg = self.config
        std = 0.02
        width = cfg.in_features
        for i in range(cfg.gcn_layers):
            self._param(f"gcn.{i}.w", rng.normal(0.0, std, (width, cfg.gcn_filters)))
            width = cfg.gcn_filters
        self._param("class_token", rng.normal(0.0, std, (1, cfg.d_model)))
        if cfg.positional_embedding:
            self._param("pos_embed", rng.normal(0.0, std, (cfg.tokens, cfg.d_model)))
        d, h = cfg.d_model, cfg.mlp_hidden
        for i in range(cfg.encoder_blocks):
            p = f"blocks.{i}."
            self._param(p + "ln1_g", np.ones(d))
            self._param(p + "ln1_b", np.zeros(d))
            for w in ("wq", "wk", "wv", "wo"):
                self._param(p + w, rng.normal(0.0, std, (d, d)))
            for b in ("bq", "bk", "bv", "bo"):
                self._param(p + b, np.zeros(d))
            self._param(p + "ln2_g", np.ones(d))
            self._param(p + "ln2_b", np.zeros(d))
            self._param(p + "w1", rng.normal(0.0, std, (d, h)))
            self._param(p + "b1", np.zeros(h))
            self._param(p + "w2", rng.normal(0.0, std, (h, d)))
            self._param(p + "b2", np.zeros(d))
        self._param("head.w", rng.normal(0.0, std, (d, cfg.out_gases)))
        self._param("head.b", np.zeros(cfg.out_gases))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def _block(self, i: int) -> dict:
        p = f"blocks.{i}."
        return {k: self.params[p + k] for k in (
            "ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo",
            "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")}

    def snapshot(self) -> dict:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict):
        for name, p in self.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name}: stored shape {arr.shape} != {p.data.shape}"
                )
            p.data = arr.copy()
            p.grad = np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- forward --------------------------------------------------------------

    def forward(self, graph: SensorGraph) -> Tensor:
        """Raw (unclamped) 1 x 2 concentration prediction for one graph."""
        cfg = self.config
        n = graph.features.shape[0]
        if n < 1:
            raise DomainError("forward on an empty graph")
        if graph.features.shape[1] != cfg.in_features:
            raise DimensionError(
                f"graph has {graph.features.shape[1]} features, model expects "
                f"{cfg.in_features}"
            )
        a_hat = normalize_adjacency(build_chain_adjacency(n), cfg.adjacency_mode)
        x = Tensor(graph.features)
        gcn_w = [self.params[f"gcn.{i}.w"] for i in range(cfg.gcn_layers)]
        xg = gcn_stack(x, a_hat, gcn_w)
        xp = uniform_pool(xg, cfg.pooled_nodes)
        xc = prepend_class_token(xp, self.params["class_token"])
        if cfg.positional_embedding:
            xc = add(xc, self.params["pos_embed"])
        for i in range(cfg.encoder_blocks):
            xc = encoder_block(xc, self._block(i), cfg.attention_heads,
                               cfg.encoder_norm)
        cls = slice_rows(xc, 0, 1)
        return add(matmul(cls, self.params["head.w"]), self.params["head.b"])

    def predict(self, graph: SensorGraph) -> np.ndarray:
        """Inference: forward without recording, clamped to [0, 1]."""
        with no_grad():
            out = self.forward(graph)
        return np.clip(out.data[0], 0.0, 1.0)

    # -- checkpoint container ---------------------------------------------------

    def save(self, path):
        meta = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "group": self.group,
            "target_scale": None if self.target_scale is None
            else self.target_scale.tolist(),
        }
        arrays = {name: p.data for name, p in self.params.items()}
        np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "GViTModel":
        with np.load(path, allow_pickle=False) as npz:
            if "__meta__" not in npz:
                raise ConfigError(f"{path}: not a model checkpoint (missing header)")
            meta = json.loads(str(npz["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ConfigError(f"{path}: unsupported checkpoint format")
            config = GViTConfig(**meta["config"])
            model = cls(config, group=meta.get("group"),
                        target_scale=meta.get("target_scale"))
            state = {name: npz[name] for name in model.params}
            model.load_state(state)
        return model
