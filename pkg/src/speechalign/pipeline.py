"""The modal-invariance data pipeline and both training stages.

Corpus construction builds a closed rule-based QA world, renders each
question as a transcript, and synthesizes deterministic features per
example. Response generation prompts the frozen LM with each transcript
(empty system prompt, greedy decoding capped at 4x the transcript length)
and appends completed records so interrupted runs resume. CTC pretraining
and alignment training both keep the best-validation checkpoint; the
alignment stage trains the encoder only and asserts, by checksum, that the
LM never changed.
"""

import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import ctc as ctc_mod
from . import encoder as enc_mod
from . import lm as lm_mod
from . import numerics as nm
from . import optim, text
from .audio import FeatureSequence, SynthConfig, load_features, save_features, synthesize_features
from .errors import CapacityError, DataError, FormatError, InvariantViolation, TrainingDivergenceError, UsageError

# re-exported optimizer surface (lives in optim.py)
OptimizerConfig = optim.OptimizerConfig
AdamState = optim.AdamState
adam_step = optim.adam_step
lr_schedule = optim.lr_schedule


# --- toy world and corpus ------------------------------------------------------

ENTITIES = (
    "cat", "dog", "fox", "owl", "bee", "ant", "car", "cup", "hat", "pen",
    "box", "key", "map", "sun", "bird", "ship", "tree", "fish", "lamp", "door",
)
ATTRIBUTE_VALUES = {
    "color": ("red", "blue", "green", "gold", "pink", "gray"),
    "size": ("big", "small", "tiny", "huge"),
    "shape": ("round", "square", "flat", "long"),
}
# "hue of X" is a short alias for the color question; with three-letter
# entities it yields ten-character transcripts (the alignment-figure probe).
HUE_ALIAS_ENTITIES = tuple(e for e in ENTITIES if len(e) == 3)
PROBE_ID = "probe-0000"
PROBE_TRANSCRIPT = "hue of cat"


@dataclass(frozen=True)
class ToyWorld:
    """Closed world of entity attributes; the rule table behind the corpus."""

    seed: int
    assignments: dict[tuple[str, str], str]

    @classmethod
    def build(cls, seed: int) -> "ToyWorld":
        rng = np.random.default_rng(seed)
        assignments = {}
        for entity in ENTITIES:
            for attr, values in ATTRIBUTE_VALUES.items():
                assignments[(entity, attr)] = values[int(rng.integers(0, len(values)))]
        return cls(seed, assignments)

    def answer(self, entity: str, attr: str) -> str:
        return f"the {entity} is {self.assignments[(entity, attr)]}"

    def questions(self) -> list[tuple[str, str]]:
        """Every (transcript, ideal response) pair the rule table generates."""
        pairs = []
        for entity in ENTITIES:
            for attr in ATTRIBUTE_VALUES:
                pairs.append((f"what {attr} is the {entity}", self.answer(entity, attr)))
        for entity in HUE_ALIAS_ENTITIES:
            pairs.append((f"hue of {entity}", self.answer(entity, "color")))
        return pairs

    def rule_table(self) -> dict[str, str]:
        return dict(self.questions())


def corpus_alphabet() -> str:
    return "".join(sorted(set("abcdefghijklmnopqrstuvwxyz " + text.template_alphabet())))


def corpus_vocabulary() -> text.Vocabulary:
    return text.Vocabulary.from_alphabet(corpus_alphabet())


def default_synth_config() -> SynthConfig:
    # 16 frames/char at 10 ms: after the encoder's 8x subsampling there are
    # ~2 conformer frames per character, enough slack for CTC alignments.
    return SynthConfig(
        frames_per_char=16,
        duration_jitter=4,
        noise_std=0.1,
        silence_frames=8,
        speaker_shift_scale=0.05,
    )


@dataclass
class PairedExample:
    """One manifest record: transcript, features, and (later) a response."""

    id: str
    text: str
    ideal_response: str
    feature_path: str  # absolute once read; stored relative to the manifest
    num_frames: int
    response: str | None = None
    skipped: bool = False
    synth: dict | None = None  # {"seed": int, "config": SynthConfig fields}


def example_seed(corpus_seed: int, example_id: str) -> int:
    return zlib.crc32(f"{corpus_seed}:{example_id}".encode("utf-8"))


def _record_to_json(rec: PairedExample, base: Path) -> str:
    path = rec.feature_path
    try:
        path = str(Path(path).relative_to(base))
    except ValueError:
        pass
    payload = {
        "id": rec.id,
        "text": rec.text,
        "response": rec.response,
        "feature_path": path,
        "num_frames": rec.num_frames,
        "ideal_response": rec.ideal_response,
        "synth": rec.synth,
    }
    if rec.skipped:
        payload["skipped"] = True
    return json.dumps(payload, sort_keys=True)


def write_manifest(path, records: list[PairedExample]) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(_record_to_json(rec, base) + "\n")


def append_manifest(path, rec: PairedExample) -> None:
    path = Path(path)
    with open(path, "a", encoding="utf-8") as f:
        f.write(_record_to_json(rec, path.parent) + "\n")
        f.flush()


def read_manifest(path) -> list[PairedExample]:
    """Read JSON-lines records; the last record per id wins (append-only log)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    by_id: dict[str, PairedExample] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON record: {exc}") from exc
            rec = PairedExample(
                id=d["id"],
                text=d["text"],
                ideal_response=d.get("ideal_response", ""),
                feature_path=str((path.parent / d["feature_path"]).resolve()),
                num_frames=int(d["num_frames"]),
                response=d.get("response"),
                skipped=bool(d.get("skipped", False)),
                synth=d.get("synth"),
            )
            if rec.id not in by_id:
                order.append(rec.id)
            by_id[rec.id] = rec
    return [by_id[i] for i in order]


def assign_splits(records: list[PairedExample]) -> dict[str, str]:
    """Deterministic 80/10/10 split by id-hash rank; probes pin to test."""
    ids = [r.id for r in records if not r.id.startswith("probe")]
    ranked = sorted(ids, key=lambda i: (zlib.crc32(i.encode("utf-8")), i))
    n = len(ranked)
    n_train = round(0.8 * n)
    n_valid = round(0.1 * n)
    split = {}
    for rank, example_id in enumerate(ranked):
        if rank < n_train:
            split[example_id] = "train"
        elif rank < n_train + n_valid:
            split[example_id] = "valid"
        else:
            split[example_id] = "test"
    for r in records:
        if r.id.startswith("probe"):
            split[r.id] = "test"
    return split


def split_records(records: list[PairedExample]) -> dict[str, list[PairedExample]]:
    split = assign_splits(records)
    out = {"train": [], "valid": [], "test": []}
    for r in records:
        out[split[r.id]].append(r)
    return out


@dataclass
class CorpusBundle:
    manifest_path: Path
    vocab_path: Path
    records: list[PairedExample]
    world: ToyWorld


def build_toy_corpus(seed: int, size: int, out_dir, synth_cfg: SynthConfig | None = None) -> CorpusBundle:
    """Synthesize a rule-based QA corpus: manifest, vocab file, feature files.

    ``size`` counts ordinary examples; one probe utterance (ten characters,
    silence-padded to exactly 320 frames, pinned to the test split) is
    appended for the embedding-alignment analysis.
    """
    if size < 1:
        raise UsageError("corpus size must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "manifests").mkdir(parents=True, exist_ok=True)
    cfg = synth_cfg or default_synth_config()
    world = ToyWorld.build(seed)
    questions = world.questions()
    alphabet = corpus_alphabet()

    records: list[PairedExample] = []

    def add_record(example_id: str, transcript: str, answer: str, record_cfg: SynthConfig):
        s = example_seed(seed, example_id)
        feats = synthesize_features(transcript, s, record_cfg, alphabet=alphabet)
        feature_path = out_dir / "features" / f"{example_id}.feat"
        save_features(feature_path, feats)
        records.append(
            PairedExample(
                id=example_id,
                text=transcript,
                ideal_response=answer,
                feature_path=str(feature_path),
                num_frames=feats.num_frames,
                synth={"seed": s, "config": asdict(record_cfg)},
            )
        )

    for i in range(size):
        transcript, answer = questions[i % len(questions)]
        add_record(f"ex-{i:04d}", transcript, answer, cfg)
    probe_cfg = replace(cfg, silence_frames=80, duration_jitter=0, frames_per_char=16)
    add_record(PROBE_ID, PROBE_TRANSCRIPT, world.rule_table()[PROBE_TRANSCRIPT], probe_cfg)

    manifest_path = out_dir / "manifests" / "corpus.jsonl"
    write_manifest(manifest_path, records)
    vocab_path = out_dir / "manifests" / "vocab.txt"
    corpus_vocabulary().save(vocab_path)
    return CorpusBundle(manifest_path, vocab_path, records, world)


def resynthesize(record: PairedExample, noise_std: float | None = None) -> FeatureSequence:
    """Regenerate a record's features, optionally at a different noise level."""
    if not record.synth:
        raise DataError(f"record {record.id} carries no synthesis parameters")
    cfg = SynthConfig(**record.synth["config"])
    if noise_std is not None:
        cfg = replace(cfg, noise_std=noise_std)
    return synthesize_features(record.text, record.synth["seed"], cfg)


def validate_features(records: list[PairedExample]) -> None:
    missing = [r.id for r in records if not Path(r.feature_path).exists()]
    if missing:
        raise DataError(f"feature files missing for ids: {', '.join(missing)}")


# --- prompt assembly -----------------------------------------------------------


def text_prompt_embeddings(
    lm_params: lm_mod.LMParams, transcript: str, vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
) -> lm_mod.EmbeddingSequence:
    template = template or text.ChatTemplate()
    ids = text.encode_template(text.build_prompt(transcript, template), vocab).ids
    return lm_mod.embed_tokens(lm_params, ids)


def audio_prompt_embeddings(
    lm_params: lm_mod.LMParams, enc_params: enc_mod.EncoderParams,
    feats: FeatureSequence, vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
) -> lm_mod.EmbeddingSequence:
    """The prompt sandwich: [prefix tokens; audio embeddings; suffix tokens]."""
    template = template or text.ChatTemplate()
    prefix_ids = text.encode_template(template.prefix, vocab).ids
    suffix_ids = text.encode_template(template.suffix, vocab).ids
    return lm_mod.concat_embeddings([
        lm_mod.embed_tokens(lm_params, prefix_ids),
        enc_mod.encode_to_embeddings(enc_params, enc_params.config, feats),
        lm_mod.embed_tokens(lm_params, suffix_ids),
    ])


def response_tokens(response: str, vocab: text.Vocabulary) -> text.TokenSequence:
    """Response text plus the closing EOS (EOS is part of the loss and counts)."""
    return text.TokenSequence(text.encode(response, vocab).ids + (vocab.eos_id,), vocab)


def conversation_embeddings(
    segments: list[text.Segment],
    lm_params: lm_mod.LMParams,
    enc_params: enc_mod.EncoderParams,
    vocab: text.Vocabulary,
) -> lm_mod.EmbeddingSequence:
    """Embed a mixed-modality conversation: template text through the token
    table, AUDIO segments (FeatureSequence references) through the encoder."""
    parts = []
    for seg in segments:
        if seg.kind == "TEXT":
            ids = text.encode_template(seg.text, vocab).ids
            parts.append(lm_mod.embed_tokens(lm_params, ids))
        else:
            parts.append(enc_mod.encode_to_embeddings(enc_params, enc_params.config, seg.audio))
    return lm_mod.concat_embeddings(parts)


# --- response generation --------------------------------------------------------


def generate_responses(
    manifest_path,
    lm_params: lm_mod.LMParams,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
    max_ratio: int = 4,
    workers: int = 1,
    log=None,
) -> list[PairedExample]:
    """Fill missing responses by greedy-decoding the frozen LM per transcript.

    Completed records are appended to the manifest one by one (last record
    per id wins on read), so an interrupted run resumes where it stopped and
    a completed manifest is a no-op. The generated length is capped at
    ``max_ratio`` times the transcript token count; a context overflow flags
    the record as skipped and the run continues.
    """
    template = template or text.ChatTemplate()
    records = read_manifest(manifest_path)
    todo = [r for r in records if r.response is None and not r.skipped]

    def produce(rec: PairedExample) -> PairedExample:
        cap = max_ratio * len(text.encode(rec.text, vocab))
        try:
            prompt = text_prompt_embeddings(lm_params, rec.text, vocab, template)
            out = lm_mod.greedy_decode(lm_params, prompt, vocab, max_tokens=cap)
            rec.response = text.decode(out)
        except CapacityError:
            rec.skipped = True
        return rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(produce, todo))
    else:
        done = [produce(r) for r in todo]
    for rec in done:
        append_manifest(manifest_path, rec)
        if log:
            tag = "skipped" if rec.skipped else f"-> {rec.response!r}"
            log(f"{rec.id}: {tag}")
    return read_manifest(manifest_path)


# --- checkpoint glue ------------------------------------------------------------


def save_lm_checkpoint(path, params: lm_mod.LMParams, step: int = 0) -> None:
    ckpt.save_checkpoint(path, "lm", asdict(params.config),
                         {n: t.data for n, t in params.tensors.items()}, step)


def load_lm_checkpoint(path, trainable: bool = False) -> tuple[lm_mod.LMParams, int]:
    meta, tensors = ckpt.load_checkpoint(path)
    if meta.get("kind") != "lm":
        raise FormatError(f"checkpoint kind {meta.get('kind')!r} is not an LM checkpoint")
    config = lm_mod.LMConfig(**meta["config"])
    expected = lm_mod.lm_tensor_shapes(config)
    _check_tensor_table(expected, tensors)
    wrapped = {n: nm.Tensor(tensors[n], requires_grad=trainable) for n in expected}
    return lm_mod.LMParams(config, wrapped), int(meta.get("step", 0))


def save_encoder_checkpoint(path, params: enc_mod.EncoderParams, step: int = 0) -> None:
    ckpt.save_checkpoint(path, "encoder", asdict(params.config),
                         {n: t.data for n, t in params.tensors.items()}, step)


def load_encoder_checkpoint(path, trainable: bool = True) -> tuple[enc_mod.EncoderParams, int]:
    meta, tensors = ckpt.load_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise FormatError(f"checkpoint kind {meta.get('kind')!r} is not an encoder checkpoint")
    config = enc_mod.EncoderConfig(**meta["config"])
    expected = enc_mod.encoder_tensor_shapes(config)
    _check_tensor_table(expected, tensors)
    wrapped = {n: nm.Tensor(tensors[n], requires_grad=trainable) for n in expected}
    return enc_mod.EncoderParams(config, wrapped), int(meta.get("step", 0))


def _check_tensor_table(expected: dict[str, tuple[int, ...]], tensors: dict[str, np.ndarray]) -> None:
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise FormatError(f"checkpoint is missing tensors: {', '.join(missing)}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise FormatError(
                f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}"
            )


# --- training loops --------------------------------------------------------------


@dataclass
class TrainStats:
    steps: int = 0
    loss_curve: list[float] = field(default_factory=list)
    eval_curve: list[tuple[int, float]] = field(default_factory=list)
    best_metric: float = math.inf
    best_step: int = 0
    extra: dict = field(default_factory=dict)


def _run_training(
    *,
    trainable: dict[str, nm.Tensor],
    all_tensors: dict[str, nm.Tensor],
    example_count: int,
    step_fn,
    eval_fn,
    opt_cfg: optim.OptimizerConfig,
    start_step: int = 0,
    log=None,
    label: str = "train",
) -> TrainStats:
    """Shared loop: sample batches, accumulate grads, Adam, best-eval snapshot.

    ``step_fn(rng, indices)`` computes+backprops the batch loss and returns
    its value; ``eval_fn()`` returns the validation metric (lower is
    better). Stops early once opt_cfg.target_metric is reached or after
    ``patience`` evaluations without improvement.
    """
    rng = np.random.default_rng(opt_cfg.seed)
    state = optim.AdamState.for_params(trainable)
    stats = TrainStats()
    best_snapshot = None
    evals_since_best = 0
    for step in range(start_step, opt_cfg.max_steps):
        indices = rng.integers(0, example_count, size=opt_cfg.batch_size)
        for t in trainable.values():
            t.zero_grad()
        stats.loss_curve.append(step_fn(rng, indices))
        optim.adam_step(trainable, state, opt_cfg, step)
        is_last = step == opt_cfg.max_steps - 1
        if (step + 1) % opt_cfg.eval_interval == 0 or is_last:
            metric = eval_fn()
            stats.eval_curve.append((step + 1, metric))
            if log:
                log(f"{label} step {step + 1}: loss {stats.loss_curve[-1]:.4f}, valid {metric:.4f}")
            if metric < stats.best_metric:
                stats.best_metric = metric
                stats.best_step = step + 1
                best_snapshot = {n: t.data.copy() for n, t in all_tensors.items()}
                evals_since_best = 0
            else:
                evals_since_best += 1
            if opt_cfg.target_metric is not None and stats.best_metric <= opt_cfg.target_metric:
                break
            if evals_since_best >= opt_cfg.patience:
                break
    stats.steps = stats.best_step
    if best_snapshot is not None:
        for name, arr in best_snapshot.items():
            all_tensors[name].data = arr
    return stats


def _augmented(frames: np.ndarray, rng: np.random.Generator, aug_noise_max: float) -> FeatureSequence:
    if aug_noise_max > 0:
        sigma = float(rng.uniform(0.0, aug_noise_max))
        frames = frames + sigma * rng.standard_normal(frames.shape)
    return FeatureSequence(np.asarray(frames, dtype=np.float32))


def pretrain_ctc(
    enc_cfg: enc_mod.EncoderConfig,
    train_records: list[PairedExample],
    valid_records: list[PairedExample],
    opt_cfg: optim.OptimizerConfig,
    vocab: text.Vocabulary,
    aug_noise_max: float = 0.0,
    init_params: enc_mod.EncoderParams | None = None,
    start_step: int = 0,
    log=None,
) -> tuple[enc_mod.EncoderParams, TrainStats]:
    """Minimize CTC loss of the encoder's CTC head against character targets.

    Keeps the best-validation-loss parameters. Raises DataError if a batch
    contains no feasible example (frame budget shorter than the target).
    """
    validate_features(train_records + valid_records)
    params = init_params or enc_mod.init_encoder_params(enc_cfg, seed=opt_cfg.seed)
    trainable = {n: params.tensors[n] for n in enc_mod.ctc_trainable_names(enc_cfg)}

    def prepare(records):
        items = []
        for r in records:
            frames = load_features(r.feature_path).frames
            items.append((frames, ctc_labels(r.text, vocab)))
        return items

    train_items = prepare(train_records)
    valid_items = prepare(valid_records)
    feasible = [
        ctc_mod.ctc_feasible(enc_mod.output_length(enc_cfg, f.shape[0]), t)
        for f, t in train_items
    ]
    if not any(feasible):
        raise DataError("no feasible CTC example in the training manifest")

    def step_fn(rng, indices) -> float:
        used = 0
        total = 0.0
        for i in indices:
            if not feasible[i]:
                continue
            frames, target = train_items[i]
            feats = _augmented(frames, rng, aug_noise_max)
            with nm.recording() as tape:
                _, logits = enc_mod.encode(params, enc_cfg, feats)
                lp = nm.log_softmax(logits, axis=-1)
                loss = nm.scale(
                    ctc_mod.ctc_loss(lp, target), 1.0 / (len(target) * opt_cfg.batch_size)
                )
            nm.backward(loss, tape)
            total += loss.item() * opt_cfg.batch_size
            used += 1
        if used == 0:
            raise DataError("all examples in the batch are CTC-infeasible")
        return total / used

    def eval_fn() -> float:
        total = tokens = 0.0
        for frames, target in valid_items:
            if not ctc_mod.ctc_feasible(enc_mod.output_length(enc_cfg, frames.shape[0]), target):
                continue
            _, logits = enc_mod.encode(params, enc_cfg, FeatureSequence(frames))
            lp = nm.log_softmax(logits, axis=-1)
            total += ctc_mod.ctc_loss(lp, target).item()
            tokens += len(target)
        return total / max(tokens, 1)

    stats = _run_training(
        trainable=trainable, all_tensors=params.tensors, example_count=len(train_items),
        step_fn=step_fn, eval_fn=eval_fn, opt_cfg=opt_cfg, start_step=start_step,
        log=log, label="ctc",
    )
    stats.extra["valid_cer"] = character_error_rate(params, valid_records, vocab)
    return params, stats


def ctc_labels(transcript: str, vocab: text.Vocabulary) -> ctc_mod.CtcTarget:
    """Characters to CTC labels: label = vocab id + 1 (0 is the blank)."""
    ids = text.encode(transcript, vocab).ids
    return ctc_mod.CtcTarget(tuple(i + 1 for i in ids))


def ctc_labels_to_text(labels, vocab: text.Vocabulary) -> str:
    return "".join(
        vocab.symbols[l - 1]
        for l in labels
        if 0 < l <= len(vocab) and not vocab.is_special(l - 1)
    )


def ctc_transcribe(
    params: enc_mod.EncoderParams, feats: FeatureSequence, vocab: text.Vocabulary
) -> str:
    """Greedy CTC transcript of one utterance."""
    _, logits = enc_mod.encode(params, params.config, feats)
    labels = ctc_mod.ctc_greedy_decode(logits.data)
    return ctc_labels_to_text(labels, vocab)


def character_error_rate(
    params: enc_mod.EncoderParams,
    records: list[PairedExample],
    vocab: text.Vocabulary,
    noise_std: float | None = None,
) -> float:
    errors = chars = 0
    for r in records:
        feats = resynthesize(r, noise_std) if noise_std is not None else load_features(r.feature_path)
        hyp = ctc_transcribe(params, feats, vocab)
        result = ctc_mod.wer(list(r.text), list(hyp))
        errors += result.errors
        chars += len(r.text)
    return errors / max(chars, 1)


def train_alignment(
    enc_params: enc_mod.EncoderParams,
    lm_params: lm_mod.LMParams,
    train_records: list[PairedExample],
    valid_records: list[PairedExample],
    opt_cfg: optim.OptimizerConfig,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
    lm_ckpt_path=None,
    aug_noise_max: float = 0.0,
    start_step: int = 0,
    log=None,
) -> tuple[enc_mod.EncoderParams, TrainStats]:
    """Train the encoder to prompt the frozen LM toward the generated responses.

    Per example the loss is the response's negative log-likelihood (per
    token) under [prefix; audio embeddings; suffix]. Only encoder
    parameters (minus the CTC head) receive gradients; the LM is checksum
    verified before and after and any change is a hard failure.
    """
    template = template or text.ChatTemplate()
    validate_features(train_records + valid_records)
    missing = [r.id for r in train_records + valid_records if not r.response]
    if missing:
        raise DataError(f"records lack generated responses: {', '.join(missing)}")

    for t in lm_params.tensors.values():
        t.requires_grad = False
    lm_mem_before = ckpt.tensors_sha256(lm_params.tensors)
    lm_file_before = ckpt.file_sha256(lm_ckpt_path) if lm_ckpt_path else None

    enc_cfg = enc_params.config
    trainable = {n: enc_params.tensors[n] for n in enc_mod.alignment_trainable_names(enc_cfg)}

    def prepare(records):
        return [
            (load_features(r.feature_path).frames, response_tokens(r.response, vocab))
            for r in records
        ]

    train_items = prepare(train_records)
    valid_items = prepare(valid_records)

    def step_fn(rng, indices) -> float:
        total = 0.0
        for i in indices:
            frames, resp = train_items[i]
            feats = _augmented(frames, rng, aug_noise_max)
            with nm.recording() as tape:
                prompt = audio_prompt_embeddings(lm_params, enc_params, feats, vocab, template)
                total_lp, _ = lm_mod.sequence_log_prob(lm_params, prompt, resp)
                loss = nm.scale(total_lp, -1.0 / (len(resp) * opt_cfg.batch_size))
            nm.backward(loss, tape)
            total += loss.item() * opt_cfg.batch_size
        return total / len(indices)

    def eval_fn() -> float:
        dataset = (
            (audio_prompt_embeddings(lm_params, enc_params, FeatureSequence(frames), vocab, template), resp)
            for frames, resp in valid_items
        )
        return lm_mod.perplexity(lm_params, dataset)

    stats = _run_training(
        trainable=trainable, all_tensors=enc_params.tensors, example_count=len(train_items),
        step_fn=step_fn, eval_fn=eval_fn, opt_cfg=opt_cfg, start_step=start_step,
        log=log, label="align",
    )

    if ckpt.tensors_sha256(lm_params.tensors) != lm_mem_before:
        raise InvariantViolation("frozen LM parameters changed during alignment training")
    if lm_ckpt_path and ckpt.file_sha256(lm_ckpt_path) != lm_file_before:
        raise InvariantViolation("frozen LM checkpoint file changed during alignment training")
    stats.extra["lm_checksum"] = lm_mem_before
    return enc_params, stats
