"""Trainable encoders: text transformer, graph-attention variant, patch image.

Every encoder produces a ModelOutput with class probabilities `p` and a
classification feature vector `f`. Layers are built on the autodiff
Tensor, so exact parameter gradients are available for any scalar loss.
The graph-attention layer reweights each attention head output with a
per-document normalized adjacency block before the output projection;
with an identity block it degenerates to a plain transformer layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, parameter, rows


class NumericError(ArithmeticError):
    """A forward or backward pass produced non-finite values."""


@dataclass
class AttentionConfig:
    d_att: int = 32
    n_heads: int = 4
    n_layers: int = 3
    dropout: float = 0.5

    @property
    def d_k(self) -> int:
        if self.d_att % self.n_heads:
            raise ValueError("head count must divide the attention dimension")
        return self.d_att // self.n_heads


# hyperparameters used at full scale; the toy defaults above keep the same
# topology at desk-scale capacity
FULL_SCALE = AttentionConfig(d_att=1024, n_heads=8, n_layers=3)


@dataclass
class ModelOutput:
    p: Tensor  # (B, n) class probabilities, each strictly in (0, 1)
    f: Tensor  # (B, d) classification features


def assert_finite(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite values in {name}")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x W^T + b."""
    return x @ weight.transpose_last() + bias


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rng is None (eval mode)."""
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


def multi_head_attention(x: Tensor, params: dict[str, Tensor], prefix: str,
                         cfg: AttentionConfig) -> Tensor:
    """Self-attention head outputs, shape (B, h, L, d_k).

    Queries, keys, and values are all the layer input; logits are scaled
    by 1/sqrt(d_k) and softmaxed row-wise over the sequence.
    """
    b, seq_len, _ = x.shape

    def split_heads(proj: Tensor) -> Tensor:
        return proj.reshape(b, seq_len, cfg.n_heads, cfg.d_k).swapaxes(1, 2)

    q = split_heads(x @ params[f"{prefix}.wq"].transpose_last())
    k = split_heads(x @ params[f"{prefix}.wk"].transpose_last())
    v = split_heads(x @ params[f"{prefix}.wv"].transpose_last())
    logits = (q @ k.transpose_last()) * (1.0 / np.sqrt(cfg.d_k))
    assert_finite("attention logits", logits)
    return logits.softmax() @ v


def gcan_layer(x: Tensor, adj: Tensor | None, params: dict[str, Tensor],
               prefix: str, cfg: AttentionConfig, is_last: bool) -> Tensor:
    """One graph-attention layer with residual connection and layer norm.

    Head outputs are left-multiplied by the document adjacency block (when
    given), then fused by concatenation (inner layers) or head averaging
    (last layer) and projected back to d_att inside the residual branch.
    """
    if adj is not None and adj.shape[-1] != x.shape[-2]:
        raise ValueError("adjacency block size does not match sequence length")
    heads = multi_head_attention(x, params, prefix, cfg)
    if adj is not None:
        heads = adj.reshape(adj.shape[0], 1, *adj.shape[1:]) @ heads
    stacked = heads.swapaxes(1, 2)  # (B, L, h, d_k)
    if is_last:
        fused = stacked.mean(axis=2)
    else:
        fused = stacked.reshape(x.shape[0], x.shape[1], cfg.d_att)
    branch = linear(fused, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    return layer_norm(x + branch, params[f"{prefix}.ln_g"],
                      params[f"{prefix}.ln_b"])


def classifier_head(f: Tensor, params: dict[str, Tensor], prefix: str,
                    drop_rate: float = 0.5,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Half-width hidden layer, ReLU, dropout, then a sigmoid output layer."""
    hidden = linear(f, params[f"{prefix}.w1"], params[f"{prefix}.b1"]).relu()
    hidden = dropout(hidden, drop_rate, rng)
    return linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"]).sigmoid()


def sinusoidal_positions(seq_len: int, dim: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    idx = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / dim)
    enc = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def _init_layer(params: dict[str, Tensor], prefix: str, cfg: AttentionConfig,
                rng: np.random.Generator, is_last: bool) -> None:
    scale = 1.0 / np.sqrt(cfg.d_att)
    for name in ("wq", "wk", "wv"):
        params[f"{prefix}.{name}"] = parameter((cfg.d_att, cfg.d_att), rng, scale)
    in_dim = cfg.d_k if is_last else cfg.d_att
    params[f"{prefix}.wo"] = parameter((cfg.d_att, in_dim), rng,
                                       1.0 / np.sqrt(in_dim))
    params[f"{prefix}.bo"] = parameter(np.zeros(cfg.d_att))
    params[f"{prefix}.ln_g"] = parameter(np.ones(cfg.d_att))
    params[f"{prefix}.ln_b"] = parameter(np.zeros(cfg.d_att))


def _init_head(params: dict[str, Tensor], prefix: str, in_dim: int,
               n_classes: int, rng: np.random.Generator) -> None:
    hidden = max(1, in_dim // 2)
    params[f"{prefix}.w1"] = parameter((hidden, in_dim), rng,
                                       1.0 / np.sqrt(in_dim))
    params[f"{prefix}.b1"] = parameter(np.zeros(hidden))
    params[f"{prefix}.w2"] = parameter((n_classes, hidden), rng,
                                       1.0 / np.sqrt(hidden))
    params[f"{prefix}.b2"] = parameter(np.zeros(n_classes))


def _encoder_stack(x: Tensor, adj: Tensor | None, params: dict[str, Tensor],
                   cfg: AttentionConfig) -> Tensor:
    for layer in range(cfg.n_layers):
        x = gcan_layer(x, adj, params, f"layer{layer}", cfg,
                       is_last=layer == cfg.n_layers - 1)
    return x


class TextEncoder:
    """Transformer-encoder classifier; the [cls] row is the feature vector."""

    kind = "text"

    def __init__(self, vocab_size: int, seq_len: int, n_classes: int,
                 cfg: AttentionConfig, seed: int = 0):
        self.cfg = cfg
        self.seq_len = seq_len
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {
            "embed": parameter((vocab_size, cfg.d_att), rng, 0.1)}
        for layer in range(cfg.n_layers):
            _init_layer(self.params, f"layer{layer}", cfg, rng,
                        is_last=layer == cfg.n_layers - 1)
        _init_head(self.params, "head", cfg.d_att, n_classes, rng)
        self.positions = sinusoidal_positions(seq_len, cfg.d_att)

    def embed(self, ids: np.ndarray) -> Tensor:
        return rows(self.params["embed"], ids) + Tensor(self.positions)

    def stack(self, ids: np.ndarray) -> Tensor:
        return _encoder_stack(self.embed(ids), None, self.params, self.cfg)

    def forward(self, ids: np.ndarray,
                rng: np.random.Generator | None = None) -> ModelOutput:
        out = self.stack(ids)
        f = out[:, 0, :]
        p = classifier_head(f, self.params, "head", self.cfg.dropout, rng)
        assert_finite("text encoder output", p, f)
        return ModelOutput(p=p, f=f)


class GcanEncoder:
    """Graph-attention text classifier; features are the node-sum pooling."""

    kind = "gcan"

    def __init__(self, vocab_size: int, seq_len: int, n_classes: int,
                 cfg: AttentionConfig, seed: int = 0):
        self._inner = TextEncoder(vocab_size, seq_len, n_classes, cfg, seed)
        self.cfg = cfg
        self.seq_len = seq_len
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.params = self._inner.params

    def stack(self, ids: np.ndarray, adj: np.ndarray) -> Tensor:
        if adj.shape[-1] != ids.shape[-1]:
            raise ValueError("adjacency blocks do not match the sequence")
        return _encoder_stack(self._inner.embed(ids), Tensor(adj),
                              self.params, self.cfg)

    def forward(self, ids: np.ndarray, adj: np.ndarray,
                rng: np.random.Generator | None = None) -> ModelOutput:
        out = self.stack(ids, adj)
        f = out.sum(axis=1)
        p = classifier_head(f, self.params, "head", self.cfg.dropout, rng)
        assert_finite("gcan encoder output", p, f)
        return ModelOutput(p=p, f=f)


class ImageEncoder:
    """Patch-embedding transformer over non-overlapping image patches."""

    kind = "image"

    def __init__(self, crop: int, patch: int, n_classes: int,
                 cfg: AttentionConfig, seed: int = 0):
        if crop % patch:
            raise ValueError(f"patch size {patch} must divide crop {crop}")
        self.cfg = cfg
        self.crop = crop
        self.patch = patch
        self.n_classes = n_classes
        self.n_patches = (crop // patch) ** 2
        self.seq_len = self.n_patches + 1
        rng = np.random.default_rng(seed)
        patch_dim = 3 * patch * patch
        self.params: dict[str, Tensor] = {
            "proj_w": parameter((cfg.d_att, patch_dim), rng,
                                1.0 / np.sqrt(patch_dim)),
            "proj_b": parameter(np.zeros(cfg.d_att)),
            "cls": parameter((cfg.d_att,), rng, 0.1),
        }
        for layer in range(cfg.n_layers):
            _init_layer(self.params, f"layer{layer}", cfg, rng,
                        is_last=layer == cfg.n_layers - 1)
        _init_head(self.params, "head", cfg.d_att, n_classes, rng)
        self.positions = sinusoidal_positions(self.seq_len, cfg.d_att)

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """(B, 3, C, C) -> (B, n_patches, 3 P^2), row-major patch order."""
        b = images.shape[0]
        g = self.crop // self.patch
        x = images.reshape(b, 3, g, self.patch, g, self.patch)
        x = x.transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(b, self.n_patches, -1)

    def stack(self, images: np.ndarray) -> Tensor:
        b = images.shape[0]
        emb = linear(Tensor(self.patchify(images)),
                     self.params["proj_w"], self.params["proj_b"])
        cls_row = Tensor(np.zeros((b, 1, self.cfg.d_att))) + \
            self.params["cls"].reshape(1, 1, self.cfg.d_att)
        x = concat([cls_row, emb], axis=1) + Tensor(self.positions)
        return _encoder_stack(x, None, self.params, self.cfg)

    def forward(self, images: np.ndarray,
                rng: np.random.Generator | None = None) -> ModelOutput:
        out = self.stack(images)
        f = out[:, 0, :]
        p = classifier_head(f, self.params, "head", self.cfg.dropout, rng)
        assert_finite("image encoder output", p, f)
        return ModelOutput(p=p, f=f)
