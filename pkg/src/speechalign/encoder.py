"""Trainable audio encoder: strided subsampler, conformer stack, CTC head,
frame stacking, and projection into the LM embedding space.

The subsampler is two strided depthwise-separable convolution blocks whose
strides multiply to ``subsample_factor`` (default 8: 10 ms features in,
80 ms frames out). Each conformer block runs half-step FFN, bidirectional
self-attention, a depthwise-convolution module, a second half-step FFN,
then a closing layernorm. The CTC projection exists only for pretraining
and the cascade baseline; the alignment stage never touches it.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from . import numerics as nm
from .audio import FeatureSequence
from .errors import ConfigError
from .lm import EmbeddingSequence, audio_embeddings

SUBSAMPLER_BLOCKS = 2


@dataclass(frozen=True)
class EncoderConfig:
    ctc_vocab_size: int
    input_dim: int = 80
    subsample_factor: int = 8
    conformer_dim: int = 64
    num_layers: int = 2
    ffn_dim: int = 256
    kernel_size: int = 11
    num_heads: int = 4
    stack_n: int = 1
    lm_dim: int = 64

    def __post_init__(self):
        if self.subsample_factor < 1 or self.stack_n < 1:
            raise ConfigError("subsample_factor and stack_n must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.conformer_dim % self.num_heads != 0:
            raise ConfigError("conformer_dim must be divisible by num_heads")

    @property
    def strides(self) -> tuple[int, int]:
        f = self.subsample_factor
        a = 1
        while a * a < f:
            a *= 2
        if f % a != 0:
            raise ConfigError(f"subsample_factor {f} must be a power of two")
        return (a, f // a)


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, nm.Tensor]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}


def encoder_tensor_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    c, f = config.conformer_dim, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {}
    dim_in = config.input_dim
    for b, stride in enumerate(config.strides):
        shapes[f"sub{b}.dw"] = (2 * stride - 1, dim_in)
        shapes[f"sub{b}.pw"] = (dim_in, c)
        shapes[f"sub{b}.b"] = (c,)
        dim_in = c
    for i in range(config.num_layers):
        p = f"conf{i}."
        for half in ("ffn1", "ffn2"):
            shapes[p + half + ".ln.g"] = (c,)
            shapes[p + half + ".ln.b"] = (c,)
            shapes[p + half + ".w1"] = (c, f)
            shapes[p + half + ".b1"] = (f,)
            shapes[p + half + ".w2"] = (f, c)
            shapes[p + half + ".b2"] = (c,)
        shapes[p + "attn.ln.g"] = (c,)
        shapes[p + "attn.ln.b"] = (c,)
        shapes[p + "attn.wq"] = (c, c)
        shapes[p + "attn.wk"] = (c, c)
        shapes[p + "attn.wv"] = (c, c)
        shapes[p + "attn.wo"] = (c, c)
        shapes[p + "conv.ln.g"] = (c,)
        shapes[p + "conv.ln.b"] = (c,)
        shapes[p + "conv.pw1"] = (c, 2 * c)
        shapes[p + "conv.pb1"] = (2 * c,)
        shapes[p + "conv.dw"] = (config.kernel_size, c)
        shapes[p + "conv.mid_ln.g"] = (c,)
        shapes[p + "conv.mid_ln.b"] = (c,)
        shapes[p + "conv.pw2"] = (c, c)
        shapes[p + "conv.pb2"] = (c,)
        shapes[p + "final_ln.g"] = (c,)
        shapes[p + "final_ln.b"] = (c,)
    shapes["ctc.w"] = (c, config.ctc_vocab_size + 1)
    shapes["ctc.b"] = (config.ctc_vocab_size + 1,)
    shapes["proj.w"] = (config.stack_n * c, config.lm_dim)
    shapes["proj.b"] = (config.lm_dim,)
    return shapes


def init_encoder_params(config: EncoderConfig, seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    tensors: dict[str, nm.Tensor] = {}
    for name, shape in encoder_tensor_shapes(config).items():
        if name.endswith("ln.g"):
            tensors[name] = nn.init_ones(shape)
        elif name.endswith("ln.b") or name.endswith(".b") or ".pb" in name or ".b1" in name or ".b2" in name:
            tensors[name] = nn.init_zeros(shape)
        elif name.endswith(".dw"):
            tensors[name] = nn.init_normal(rng, shape, std=1.0 / shape[0])
        else:
            fan_in = shape[0]
            tensors[name] = nn.init_normal(rng, shape, std=1.0 / np.sqrt(fan_in))
    return EncoderParams(config, tensors)


def output_length(config: EncoderConfig, num_frames: int) -> int:
    """ceil(T / subsample_factor): the conformer-rate frame count."""
    return -(-num_frames // config.subsample_factor)


def embedding_length(config: EncoderConfig, num_frames: int) -> int:
    """ceil(ceil(T / subsample_factor) / stack_n): the LM-rate length law."""
    return -(-output_length(config, num_frames) // config.stack_n)


def _subsample(t: dict[str, nm.Tensor], cfg: EncoderConfig, x: nm.Tensor) -> nm.Tensor:
    for b, stride in enumerate(cfg.strides):
        x = nm.conv1d_depthwise(x, t[f"sub{b}.dw"], stride=stride)
        x = nm.swish(nm.linear(x, t[f"sub{b}.pw"], t[f"sub{b}.b"]))
    return x


def _half_ffn(t, p: str, x: nm.Tensor) -> nm.Tensor:
    h = nm.layer_norm(x, t[p + ".ln.g"], t[p + ".ln.b"])
    h = nn.feed_forward(h, t[p + ".w1"], t[p + ".b1"], t[p + ".w2"], t[p + ".b2"], nm.swish)
    return nm.add_scaled(x, h, 0.5)


def _conv_module(t, p: str, x: nm.Tensor) -> nm.Tensor:
    h = nm.layer_norm(x, t[p + "ln.g"], t[p + "ln.b"])
    h = nm.glu(nm.linear(h, t[p + "pw1"], t[p + "pb1"]))
    h = nm.conv1d_depthwise(h, t[p + "dw"])
    # layernorm where the reference design uses batchnorm: no batch statistics here
    h = nm.layer_norm(h, t[p + "mid_ln.g"], t[p + "mid_ln.b"])
    h = nm.linear(nm.swish(h), t[p + "pw2"], t[p + "pb2"])
    return nm.add(x, h)


def encode(
    params: EncoderParams, cfg: EncoderConfig, feats: FeatureSequence, with_ctc: bool = True
) -> tuple[nm.Tensor, nm.Tensor | None]:
    """Features (T, input_dim) -> conformer frames (T', dim) and CTC logits.

    T' = ceil(T / subsample_factor). The CTC logits carry one blank column
    at index 0 and share the whole trunk with the embedding path; pass
    ``with_ctc=False`` to skip the head (the alignment stage does).
    """
    if feats.feature_dim != cfg.input_dim:
        raise ConfigError(f"feature dim {feats.feature_dim} != encoder input_dim {cfg.input_dim}")
    t = params.tensors
    x = nm.Tensor(feats.frames.astype(nm.default_dtype()))
    x = _subsample(t, cfg, x)
    for i in range(cfg.num_layers):
        p = f"conf{i}."
        x = _half_ffn(t, p + "ffn1", x)
        h = nm.layer_norm(x, t[p + "attn.ln.g"], t[p + "attn.ln.b"])
        a = nn.multi_head_self_attention(
            h, t[p + "attn.wq"], t[p + "attn.wk"], t[p + "attn.wv"], t[p + "attn.wo"],
            cfg.num_heads, mask=None,
        )
        x = nm.add(x, a)
        x = _conv_module(t, p + "conv.", x)
        x = _half_ffn(t, p + "ffn2", x)
        x = nm.layer_norm(x, t[p + "final_ln.g"], t[p + "final_ln.b"])
    ctc_logits = None
    if with_ctc:
        ctc_logits = nm.linear(x, t["ctc.w"], t["ctc.b"])
    return x, ctc_logits


def to_lm_embeddings(params: EncoderParams, cfg: EncoderConfig, frames: nm.Tensor) -> EmbeddingSequence:
    """Group stack_n consecutive frames (zero-padding the last group),
    concatenate each group, and project to the LM dimension (AUDIO-tagged)."""
    T = frames.shape[0]
    n = cfg.stack_n
    groups = -(-T // n)
    x = frames
    if groups * n != T:
        x = nm.pad_rows(x, groups * n - T)
    x = nm.reshape(x, (groups, n * cfg.conformer_dim))
    out = nm.linear(x, params.tensors["proj.w"], params.tensors["proj.b"])
    return audio_embeddings(out)


def encode_to_embeddings(
    params: EncoderParams, cfg: EncoderConfig, feats: FeatureSequence
) -> EmbeddingSequence:
    frames, _ = encode(params, cfg, feats, with_ctc=False)
    return to_lm_embeddings(params, cfg, frames)


def ctc_trainable_names(config: EncoderConfig) -> list[str]:
    """Everything but the LM projection (untouched during CTC pretraining)."""
    return [n for n in encoder_tensor_shapes(config) if not n.startswith("proj.")]


def alignment_trainable_names(config: EncoderConfig) -> list[str]:
    """Everything but the CTC head (discarded by the end-to-end path)."""
    return [n for n in encoder_tensor_shapes(config) if not n.startswith("ctc.")]
