"""A tiny decoder-only transformer LM that consumes embedding sequences.

The model stands in for a large instruction-tuned chat LM: it scores and
generates text, and crucially it accepts any sequence of model-dimension
vectors as its prompt, whether they came from the token embedding table or
from the audio encoder. Pre-LN blocks, learned absolute positions,
GELU feed-forward.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import numerics as nm
from . import optim, text
from .errors import CapacityError, ConfigError, TrainingDivergenceError, UsageError

TEXT_SOURCE = "TEXT"
AUDIO_SOURCE = "AUDIO"


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    model_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_context: int = 512
    positional: str = "learned"

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.positional != "learned":
            raise ConfigError(f"unsupported positional scheme {self.positional!r}")


@dataclass
class LMParams:
    config: LMConfig
    tensors: dict[str, nm.Tensor]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}


@dataclass(frozen=True)
class EmbeddingSequence:
    """Ordered model-dimension vectors, each tagged TEXT or AUDIO."""

    vectors: nm.Tensor  # (L, model_dim)
    sources: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = self.vectors.shape[0]
        sources = self.sources or (TEXT_SOURCE,) * n
        if len(sources) != n:
            raise UsageError(f"{len(sources)} source tags for {n} vectors")
        object.__setattr__(self, "sources", tuple(sources))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def text_embeddings(vectors: nm.Tensor) -> EmbeddingSequence:
    return EmbeddingSequence(vectors, (TEXT_SOURCE,) * vectors.shape[0])


def audio_embeddings(vectors: nm.Tensor) -> EmbeddingSequence:
    return EmbeddingSequence(vectors, (AUDIO_SOURCE,) * vectors.shape[0])


def concat_embeddings(parts: list[EmbeddingSequence]) -> EmbeddingSequence:
    vectors = nm.concat_rows([p.vectors for p in parts])
    sources = tuple(s for p in parts for s in p.sources)
    return EmbeddingSequence(vectors, sources)


def lm_tensor_shapes(config: LMConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = config.model_dim, config.ffn_dim, config.vocab_size
    shapes = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_context, d),
        "final_ln.g": (d,),
        "final_ln.b": (d,),
        "out.w": (d, v),
        "out.b": (v,),
    }
    for i in range(config.num_layers):
        p = f"layer{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
    return shapes


def init_lm_params(config: LMConfig, seed: int = 0) -> LMParams:
    rng = np.random.default_rng(seed)
    tensors: dict[str, nm.Tensor] = {}
    for name, shape in lm_tensor_shapes(config).items():
        if name.endswith("ln.g") or name.endswith("ln1.g") or name.endswith("ln2.g"):
            tensors[name] = nn.init_ones(shape)
        elif name.endswith(".b") or name.endswith("ln1.b") or name.endswith("ln2.b"):
            tensors[name] = nn.init_zeros(shape)
        else:
            tensors[name] = nn.init_normal(rng, shape, std=0.02)
    return LMParams(config, tensors)


def embed_tokens(params: LMParams, token_ids) -> EmbeddingSequence:
    """Look up token embeddings; the composition with forward_logits is the
    token-input path."""
    ids = np.asarray(token_ids, dtype=np.int64)
    return text_embeddings(nm.embedding(params.tensors["tok_emb"], ids))


def forward_logits(params: LMParams, embeds: EmbeddingSequence, position_offset: int = 0) -> nm.Tensor:
    """Causal logits (L, vocab) over an embedding sequence of any modality.

    ``position_offset`` shifts the learned position rows; pretraining uses
    random offsets so downstream prompts of unfamiliar lengths still sit on
    trained positions.
    """
    t = params.tensors
    cfg = params.config
    L = len(embeds)
    if position_offset + L > cfg.max_context:
        raise CapacityError(
            f"sequence of {L} embeddings at offset {position_offset} exceeds "
            f"max_context {cfg.max_context}"
        )
    if embeds.dim != cfg.model_dim:
        raise ConfigError(f"embedding dim {embeds.dim} != model_dim {cfg.model_dim}")
    x = nm.add(embeds.vectors, nm.slice_rows(t["pos_emb"], position_offset, position_offset + L))
    mask = nn.causal_mask(L)
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        h = nm.layer_norm(x, t[p + "ln1.g"], t[p + "ln1.b"])
        a = nn.multi_head_self_attention(
            h, t[p + "attn.wq"], t[p + "attn.wk"], t[p + "attn.wv"], t[p + "attn.wo"],
            cfg.num_heads, mask,
        )
        x = nm.add(x, a)
        h = nm.layer_norm(x, t[p + "ln2.g"], t[p + "ln2.b"])
        f = nn.feed_forward(h, t[p + "ffn.w1"], t[p + "ffn.b1"], t[p + "ffn.w2"], t[p + "ffn.b2"], nm.gelu)
        x = nm.add(x, f)
    x = nm.layer_norm(x, t["final_ln.g"], t["final_ln.b"])
    return nm.linear(x, t["out.w"], t["out.b"])


def forward_tokens(params: LMParams, token_ids) -> nm.Tensor:
    return forward_logits(params, embed_tokens(params, token_ids))


def response_log_prob_from_logits(
    logits: nm.Tensor, response_ids, prompt_len: int
) -> tuple[nm.Tensor, np.ndarray]:
    """Sum of realized next-token log-probs for the response region.

    ``logits`` must cover prompt_len + len(response) - 1 positions; row
    prompt_len - 1 predicts the first response token.
    """
    ids = np.asarray(response_ids, dtype=np.int64)
    if ids.size == 0:
        raise UsageError("response must be non-empty")
    rows = prompt_len - 1 + np.arange(ids.size)
    logp = nm.log_softmax(logits, axis=-1)
    picked = nm.take_rc(logp, rows, ids)
    return nm.sum(picked), picked.data.copy()


def sequence_log_prob(
    params: LMParams, prompt_embeds: EmbeddingSequence, response: text.TokenSequence
) -> tuple[nm.Tensor, np.ndarray]:
    """Log-probability of a response conditioned on prompt embeddings.

    Prompt positions contribute no terms; the returned per-token array has
    one realized log-prob per response token.
    """
    if len(response) == 0:
        raise UsageError("response must be non-empty")
    ids = np.asarray(response.ids, dtype=np.int64)
    parts = [prompt_embeds]
    if ids.size > 1:
        parts.append(embed_tokens(params, ids[:-1]))
    embeds = concat_embeddings(parts) if len(parts) > 1 else prompt_embeds
    logits = forward_logits(params, embeds)
    return response_log_prob_from_logits(logits, ids, len(prompt_embeds))


def perplexity(params: LMParams, dataset) -> float:
    """exp(-(sum log-probs) / (sum response tokens)) pooled over the dataset."""
    total_lp = 0.0
    total_tokens = 0
    for prompt_embeds, response in dataset:
        lp, _ = sequence_log_prob(params, prompt_embeds, response)
        total_lp += lp.item()
        total_tokens += len(response)
    if total_tokens == 0:
        raise UsageError("perplexity needs at least one response token")
    return math.exp(-total_lp / total_tokens)


def greedy_decode(
    params: LMParams,
    prompt_embeds: EmbeddingSequence,
    vocab: text.Vocabulary,
    max_ratio: int = 4,
    max_tokens: int | None = None,
) -> text.TokenSequence:
    """Argmax continuation until EOS or max_ratio x prompt length tokens.

    Ties break toward the lowest token id. The returned sequence excludes
    the terminating EOS.
    """
    if len(prompt_embeds) == 0:
        raise UsageError("prompt must be non-empty")
    cap = max_tokens if max_tokens is not None else max_ratio * len(prompt_embeds)
    generated: list[int] = []
    embeds = prompt_embeds
    while len(generated) < cap:
        logits = forward_logits(params, embeds)
        nxt = int(np.argmax(logits.data[-1]))
        if nxt == vocab.eos_id:
            break
        generated.append(nxt)
        embeds = concat_embeddings([embeds, embed_tokens(params, [nxt])])
    return text.TokenSequence(tuple(generated), vocab)


def beam_search_decode(
    params: LMParams,
    prompt_embeds: EmbeddingSequence,
    vocab: text.Vocabulary,
    beam: int = 10,
    max_ratio: int = 4,
    max_tokens: int | None = None,
    length_normalize: bool = True,
) -> text.TokenSequence:
    """Best finished hypothesis by length-normalized log-probability.

    A hypothesis finishes by emitting EOS (whose log-prob counts toward the
    score and the normalizing length) or by reaching the length cap. Ties
    break by score and then lexicographically on the token ids.
    """
    if beam < 1:
        raise UsageError("beam must be >= 1")
    cap = max_tokens if max_tokens is not None else max_ratio * len(prompt_embeds)
    live: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    finished: list[tuple[float, tuple[int, ...]]] = []  # (normalized score, tokens)

    def norm(score: float, length: int) -> float:
        if not length_normalize or length == 0:
            return score
        return score / length

    for _ in range(cap):
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for score, tokens in live:
            embeds = prompt_embeds
            if tokens:
                embeds = concat_embeddings([prompt_embeds, embed_tokens(params, list(tokens))])
            logits = forward_logits(params, embeds)
            row = nm.log_softmax(nm.slice_rows(logits, len(embeds) - 1, len(embeds))).data[0]
            for tok in range(params.config.vocab_size):
                candidates.append((score + float(row[tok]), tokens + (tok,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for score, tokens in candidates[:beam]:
            if tokens[-1] == vocab.eos_id:
                finished.append((norm(score, len(tokens)), tokens[:-1]))
            else:
                live.append((score, tokens))
        if not live:
            break
    for score, tokens in live:
        finished.append((norm(score, len(tokens)), tokens))
    best = min(finished, key=lambda c: (-c[0], c[1]))
    return text.TokenSequence(best[1], vocab)


# --- toy LM pretraining -------------------------------------------------------


def assemble_training_ids(
    transcript: str, response: str, vocab: text.Vocabulary, template: text.ChatTemplate
) -> np.ndarray:
    """Template-assembled token stream: BOS prompt bytes, response, EOS."""
    prompt_ids = text.encode_template(text.build_prompt(transcript, template), vocab).ids
    response_ids = text.encode(response, vocab).ids
    return np.asarray(prompt_ids + response_ids + (vocab.eos_id,), dtype=np.int64)


def next_token_loss(params: LMParams, token_ids: np.ndarray, position_offset: int = 0) -> nm.Tensor:
    """Mean cross-entropy of predicting each next token."""
    logits = forward_logits(params, embed_tokens(params, token_ids[:-1]), position_offset)
    logp = nm.log_softmax(logits, axis=-1)
    n = token_ids.size - 1
    picked = nm.take_rc(logp, np.arange(n), token_ids[1:])
    return nm.scale(nm.sum(picked), -1.0 / n)


def pretrain_toy_lm(
    config: LMConfig,
    corpus: list[tuple[str, str]],
    train_cfg: optim.OptimizerConfig,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
    valid_corpus: list[tuple[str, str]] | None = None,
    target_ppl: float = 3.0,
    position_jitter: int = 64,
    log=None,
) -> tuple[LMParams, dict]:
    """Train the frozen-LM stand-in on template-assembled (prompt, response) text.

    Each example is embedded at a random position offset up to
    ``position_jitter`` so the LM also works for the longer audio-prompted
    sequences it will see later. Stops once held-out response perplexity
    reaches ``target_ppl``; raises TrainingDivergenceError (loss curve
    attached) if the step budget runs out first. Returns the
    best-validation parameters and a stats dict.
    """
    template = template or text.ChatTemplate()
    if valid_corpus is None:
        cut = max(1, len(corpus) // 10)
        valid_corpus, corpus = corpus[-cut:], corpus[:-cut]
    if not corpus:
        raise UsageError("empty training corpus")
    params = init_lm_params(config, seed=train_cfg.seed)
    train_ids = [assemble_training_ids(p, r, vocab, template) for p, r in corpus]
    valid_items = [
        (
            text.encode_template(text.build_prompt(p, template), vocab).ids,
            text.TokenSequence(text.encode(r, vocab).ids + (vocab.eos_id,), vocab),
        )
        for p, r in valid_corpus
    ]
    state = optim.AdamState.for_params(params.tensors)
    rng = np.random.default_rng(train_cfg.seed)
    loss_curve: list[float] = []
    best = {"ppl": math.inf, "tensors": None, "step": 0}

    def valid_ppl() -> float:
        dataset = (
            (embed_tokens(params, np.asarray(ids)), resp) for ids, resp in valid_items
        )
        return perplexity(params, dataset)

    for step in range(train_cfg.max_steps):
        idxs = rng.integers(0, len(train_ids), size=train_cfg.batch_size)
        for tensor in params.tensors.values():
            tensor.zero_grad()
        step_loss = 0.0
        for i in idxs:
            offset = int(rng.integers(0, position_jitter + 1)) if position_jitter else 0
            with nm.recording() as tape:
                loss = nm.scale(
                    next_token_loss(params, train_ids[i], offset), 1.0 / train_cfg.batch_size
                )
            nm.backward(loss, tape)
            step_loss += loss.item() * train_cfg.batch_size
        loss_curve.append(step_loss / train_cfg.batch_size)
        optim.adam_step(params.tensors, state, train_cfg, step)
        if (step + 1) % train_cfg.eval_interval == 0 or step == train_cfg.max_steps - 1:
            ppl = valid_ppl()
            if log:
                log(f"lm step {step + 1}: train loss {loss_curve[-1]:.4f}, valid response ppl {ppl:.4f}")
            if ppl < best["ppl"]:
                best = {"ppl": ppl, "tensors": params.snapshot(), "step": step + 1}
            if ppl <= target_ppl:
                break
    if best["ppl"] > target_ppl:
        raise TrainingDivergenceError(
            f"toy LM failed to reach held-out response ppl {target_ppl} "
            f"(best {best['ppl']:.3f} at step {best['step']})",
            loss_curve=loss_curve,
        )
    for name, arr in best["tensors"].items():
        params.tensors[name].data = arr
    stats = {"valid_ppl": best["ppl"], "steps": best["step"], "loss_curve": loss_curve}
    return params, stats
