"""Model-layer building blocks shared by the LM and the audio encoder.

Attention is composed from matmul + softmax + masking primitives so the
same gradient checks cover it; masking is additive with a large negative
constant, which underflows to exact zeros after the max-subtracted
softmax (this is what makes the causality invariant bit-exact).
"""

import math

import numpy as np

from . import numerics as nm

MASK_VALUE = -1e9

_causal_masks: dict[int, nm.Tensor] = {}


def causal_mask(length: int) -> nm.Tensor:
    """Additive (L, L) mask: 0 on/below the diagonal, MASK_VALUE above."""
    cached = _causal_masks.get(length)
    if cached is None:
        arr = np.triu(np.full((length, length), MASK_VALUE), k=1)
        cached = _causal_masks[length] = nm.Tensor(arr)
    return cached


def multi_head_self_attention(
    x: nm.Tensor,
    wq: nm.Tensor,
    wk: nm.Tensor,
    wv: nm.Tensor,
    wo: nm.Tensor,
    num_heads: int,
    mask: nm.Tensor | None = None,
) -> nm.Tensor:
    """Standard scaled dot-product self-attention over an (L, d) sequence.

    All heads run in one batched score/softmax/context pass; the additive
    mask (if any) broadcasts across heads.
    """
    d = wq.shape[1]
    inv_sqrt = 1.0 / math.sqrt(d // num_heads)
    q = nm.linear(x, wq)
    k = nm.linear(x, wk)
    v = nm.linear(x, wv)
    scores = nm.attention_scores(q, k, num_heads, inv_sqrt)
    if mask is not None:
        scores = nm.add(scores, mask)
    ctx = nm.attention_context(nm.softmax(scores, axis=-1), v, num_heads)
    return nm.linear(ctx, wo)


def feed_forward(x, w1, b1, w2, b2, activation) -> nm.Tensor:
    return nm.linear(activation(nm.linear(x, w1, b1)), w2, b2)


def init_normal(rng: np.random.Generator, shape, std: float = 0.02) -> nm.Tensor:
    return nm.Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def init_zeros(shape) -> nm.Tensor:
    return nm.Tensor(np.zeros(shape), requires_grad=True)


def init_ones(shape) -> nm.Tensor:
    return nm.Tensor(np.ones(shape), requires_grad=True)
