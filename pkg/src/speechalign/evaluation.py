"""Evaluation battery: response perplexity per system, the cascade baseline,
embedding-space alignment analysis, and an exact-match success-rate proxy.

Three systems are compared on the same held-out records. The text-prompt
system conditions the LM on the embedded transcript prompt; the end-to-end
system conditions on [prefix; encoder embeddings; suffix]; the cascade
first transcribes with the encoder's CTC head and prompts the LM with the
(possibly wrong) transcript. Difficulty strata come from re-synthesizing
eval features at higher noise until the cascade's prompt WER lands in a
target band.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc_mod
from . import lm as lm_mod
from . import pipeline, text
from .audio import FeatureSequence, load_features
from .ctc import normalize_words, wer
from .errors import DataError, UsageError

SYSTEMS = ("text", "audio", "cascade")


@dataclass
class EvalReport:
    dataset_id: str
    system_id: str
    response_ppl: float
    prompt_wer: float | None = None  # cascade only
    noise_std: float | None = None
    per_example: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def __post_init__(self):
        if self.response_ppl < 1.0 - 1e-9:
            raise DataError(f"perplexity {self.response_ppl} below 1 is impossible")
        if self.prompt_wer is not None and self.prompt_wer < 0:
            raise DataError("prompt WER cannot be negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _record_features(record: pipeline.PairedExample, noise_std: float | None) -> FeatureSequence:
    if noise_std is None:
        return load_features(record.feature_path)
    return pipeline.resynthesize(record, noise_std)


def eval_response_ppl(
    system: str,
    records: list[pipeline.PairedExample],
    lm_params: lm_mod.LMParams,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
    enc_params: enc_mod.EncoderParams | None = None,
    noise_std: float | None = None,
    oracle_transcripts: bool = False,
    dataset_id: str = "test",
) -> EvalReport:
    """Pooled perplexity of each record's generated response under one system.

    ``oracle_transcripts=True`` makes the cascade condition on the reference
    transcript (the degenerate 0 percent WER cascade, equal to the text
    system by construction). ``noise_std`` re-synthesizes eval features at a
    different corruption level.
    """
    if system not in SYSTEMS:
        raise UsageError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    template = template or text.ChatTemplate()
    missing = [r.id for r in records if not r.response]
    if missing:
        raise DataError(f"records lack responses: {', '.join(missing)}")
    if system in ("audio", "cascade") and enc_params is None:
        raise UsageError(f"system {system!r} needs encoder parameters")

    started = time.perf_counter()
    total_lp = 0.0
    total_tokens = 0
    wer_errors = 0
    wer_words = 0
    per_example = []
    for rec in records:
        resp = pipeline.response_tokens(rec.response, vocab)
        entry = {"id": rec.id, "response_tokens": len(resp)}
        if system == "text":
            prompt = pipeline.text_prompt_embeddings(lm_params, rec.text, vocab, template)
        elif system == "audio":
            feats = _record_features(rec, noise_std)
            prompt = pipeline.audio_prompt_embeddings(lm_params, enc_params, feats, vocab, template)
        else:
            if oracle_transcripts:
                transcript = rec.text
            else:
                feats = _record_features(rec, noise_std)
                transcript = pipeline.ctc_transcribe(enc_params, feats, vocab)
            result = wer(normalize_words(rec.text), normalize_words(transcript))
            wer_errors += result.errors
            wer_words += len(normalize_words(rec.text))
            entry["transcript"] = transcript
            entry["wer"] = result.rate
            prompt = pipeline.text_prompt_embeddings(lm_params, transcript, vocab, template)
        lp, _ = lm_mod.sequence_log_prob(lm_params, prompt, resp)
        entry["log_prob"] = lp.item()
        per_example.append(entry)
        total_lp += lp.item()
        total_tokens += len(resp)
    ppl = float(np.exp(-total_lp / total_tokens))
    return EvalReport(
        dataset_id=dataset_id,
        system_id=system if not (system == "cascade" and oracle_transcripts) else "cascade-oracle",
        response_ppl=ppl,
        prompt_wer=(wer_errors / wer_words) if wer_words else (0.0 if system == "cascade" else None),
        noise_std=noise_std,
        per_example=per_example,
        wall_clock_s=time.perf_counter() - started,
    )


# --- response generation per system -------------------------------------------


@dataclass
class CascadeResult:
    response: str
    transcript: str
    wer: float | None
    empty_transcript: bool = False


def cascade_respond(
    enc_params: enc_mod.EncoderParams,
    lm_params: lm_mod.LMParams,
    feats: FeatureSequence,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
    reference: str | None = None,
    use_beam: bool = False,
    beam: int = 10,
) -> CascadeResult:
    """Two-stage decode: CTC greedy transcript, then a templated LM response.

    An empty transcript proceeds with an empty user prompt and is flagged.
    """
    template = template or text.ChatTemplate()
    transcript = pipeline.ctc_transcribe(enc_params, feats, vocab)
    prompt = pipeline.text_prompt_embeddings(lm_params, transcript, vocab, template)
    cap = 4 * max(len(text.encode(transcript, vocab)), len(vocab) // 2)
    if use_beam:
        out = lm_mod.beam_search_decode(lm_params, prompt, vocab, beam=beam, max_tokens=cap)
    else:
        out = lm_mod.greedy_decode(lm_params, prompt, vocab, max_tokens=cap)
    rate = None
    if reference is not None:
        rate = wer(normalize_words(reference), normalize_words(transcript)).rate
    return CascadeResult(text.decode(out), transcript, rate, empty_transcript=not transcript)


def audio_respond(
    enc_params: enc_mod.EncoderParams,
    lm_params: lm_mod.LMParams,
    feats: FeatureSequence,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
    max_tokens: int | None = None,
) -> str:
    """End-to-end response: greedy decode from the audio prompt sandwich."""
    prompt = pipeline.audio_prompt_embeddings(lm_params, enc_params, feats, vocab, template)
    cap = max_tokens if max_tokens is not None else 4 * len(prompt)
    return text.decode(lm_mod.greedy_decode(lm_params, prompt, vocab, max_tokens=cap))


def text_respond(
    lm_params: lm_mod.LMParams,
    transcript: str,
    vocab: text.Vocabulary,
    template: text.ChatTemplate | None = None,
) -> str:
    prompt = pipeline.text_prompt_embeddings(lm_params, transcript, vocab, template)
    cap = 4 * len(text.encode(transcript, vocab))
    return text.decode(lm_mod.greedy_decode(lm_params, prompt, vocab, max_tokens=cap))


# --- success rate ---------------------------------------------------------------


def normalized_match(a: str, b: str) -> bool:
    return normalize_words(a) == normalize_words(b)


def exact_match_success_rate(responses: list[str], answers: list[str]) -> float:
    """Fraction of responses whose normalized text equals the rule-table answer."""
    if len(responses) != len(answers):
        raise UsageError("responses and answers must pair up")
    if not responses:
        raise UsageError("success rate needs at least one example")
    hits = sum(1 for r, a in zip(responses, answers) if normalized_match(r, a))
    return hits / len(responses)


def success_rate_eval(
    system: str,
    records: list[pipeline.PairedExample],
    lm_params: lm_mod.LMParams,
    vocab: text.Vocabulary,
    enc_params: enc_mod.EncoderParams | None = None,
    template: text.ChatTemplate | None = None,
    noise_std: float | None = None,
) -> dict:
    """Exact-match success against the rule-table answers, plus prompt WER."""
    if system not in SYSTEMS:
        raise UsageError(f"unknown system {system!r}")
    responses = []
    wer_errors = 0
    wer_words = 0
    per_example = []
    for rec in records:
        if system == "text":
            response = text_respond(lm_params, rec.text, vocab, template)
            entry = {"id": rec.id, "response": response}
        elif system == "audio":
            feats = _record_features(rec, noise_std)
            response = audio_respond(enc_params, lm_params, feats, vocab, template)
            entry = {"id": rec.id, "response": response}
        else:
            feats = _record_features(rec, noise_std)
            result = cascade_respond(enc_params, lm_params, feats, vocab, template,
                                     reference=rec.text)
            response = result.response
            wer_errors += wer(normalize_words(rec.text), normalize_words(result.transcript)).errors
            wer_words += len(normalize_words(rec.text))
            entry = {"id": rec.id, "response": response, "transcript": result.transcript,
                     "wer": result.wer}
        entry["answer"] = rec.ideal_response
        entry["match"] = normalized_match(response, rec.ideal_response)
        per_example.append(entry)
        responses.append(response)
    rate = exact_match_success_rate(responses, [r.ideal_response for r in records])
    return {
        "system": system,
        "noise_std": noise_std,
        "success_rate": rate,
        "prompt_wer": (wer_errors / wer_words) if wer_words else None,
        "per_example": per_example,
    }


def pooled_prompt_wer(
    enc_params: enc_mod.EncoderParams,
    records: list[pipeline.PairedExample],
    vocab: text.Vocabulary,
    noise_std: float | None = None,
) -> float:
    errors = words = 0
    for rec in records:
        feats = _record_features(rec, noise_std)
        transcript = pipeline.ctc_transcribe(enc_params, feats, vocab)
        errors += wer(normalize_words(rec.text), normalize_words(transcript)).errors
        words += len(normalize_words(rec.text))
    return errors / max(words, 1)


NOISE_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.55, 0.7, 0.9, 1.1, 1.4, 1.8, 2.3, 3.0, 4.0)


def sweep_noise_for_wer(
    enc_params: enc_mod.EncoderParams,
    records: list[pipeline.PairedExample],
    vocab: text.Vocabulary,
    band: tuple[float, float],
    grid: tuple[float, ...] = NOISE_GRID,
) -> tuple[float, float]:
    """Find a synthesizer noise level whose pooled prompt WER lands in ``band``.

    Returns (noise_std, measured_wer); if no grid point lands inside the
    band, the closest one to the band center wins.
    """
    lo, hi = band
    center = (lo + hi) / 2
    best = None
    for sigma in grid:
        measured = pooled_prompt_wer(enc_params, records, vocab, noise_std=sigma)
        if lo <= measured <= hi:
            return sigma, measured
        score = abs(measured - center)
        if best is None or score < best[0]:
            best = (score, sigma, measured)
    return best[1], best[2]


# --- embedding-space alignment ---------------------------------------------------


@dataclass
class AlignmentAnalysis:
    cosine: np.ndarray  # (audio_len, text_len)
    argmax_path: list[int]  # best audio frame per text token
    monotonicity: float
    zero_pairs: int = 0

    def to_json_dict(self) -> dict:
        return {
            "shape": list(self.cosine.shape),
            "argmax_path": self.argmax_path,
            "monotonicity": self.monotonicity,
            "zero_pairs": self.zero_pairs,
        }


def monotonicity_score(path) -> float:
    """Fraction of consecutive best-frame pairs that do not decrease."""
    path = list(path)
    if len(path) < 2:
        raise UsageError("monotonicity needs a path of length >= 2")
    good = sum(1 for a, b in zip(path, path[1:]) if b >= a)
    return good / (len(path) - 1)


def cosine_matrix(audio_vectors, text_vectors) -> AlignmentAnalysis:
    """Pairwise cosine similarity plus the per-text-token argmax path.

    Zero vectors get cosine 0 against everything (counted in zero_pairs).
    Accepts EmbeddingSequence or plain arrays of equal vector dimension.
    """
    a = audio_vectors.vectors.data if hasattr(audio_vectors, "vectors") else np.asarray(audio_vectors)
    t = text_vectors.vectors.data if hasattr(text_vectors, "vectors") else np.asarray(text_vectors)
    if a.size == 0 or t.size == 0:
        raise UsageError("both embedding sequences must be non-empty")
    if a.shape[1] != t.shape[1]:
        raise UsageError(f"vector dims differ: {a.shape[1]} vs {t.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nt = np.linalg.norm(t, axis=1)
    zero_a = na == 0
    zero_t = nt == 0
    na_safe = np.where(zero_a, 1.0, na)
    nt_safe = np.where(zero_t, 1.0, nt)
    cos = (a / na_safe[:, None]) @ (t / nt_safe[:, None]).T
    cos[zero_a, :] = 0.0
    cos[:, zero_t] = 0.0
    path = [int(i) for i in np.argmax(cos, axis=0)]
    return AlignmentAnalysis(
        cosine=cos,
        argmax_path=path,
        monotonicity=monotonicity_score(path) if len(path) >= 2 else 1.0,
        zero_pairs=int(zero_a.sum() * t.shape[0] + zero_t.sum() * a.shape[0]),
    )


def analyze_alignment(
    lm_params: lm_mod.LMParams,
    enc_params: enc_mod.EncoderParams,
    feats: FeatureSequence,
    transcript: str,
    vocab: text.Vocabulary,
) -> AlignmentAnalysis:
    """Cosine alignment of encoder outputs against the transcript's raw
    embedding-table rows (one per character, no template tokens)."""
    audio = enc_mod.encode_to_embeddings(enc_params, enc_params.config, feats)
    ids = np.asarray(text.encode(transcript, vocab).ids)
    rows = lm_params.tensors["tok_emb"].data[ids]
    return cosine_matrix(audio.vectors.data, rows)


# --- heatmap emission -------------------------------------------------------------

# Anchors of the 256-entry viridis-like ramp (linearly interpolated RGB).
COLOR_ANCHORS = (
    (68, 1, 84), (70, 50, 127), (54, 92, 141), (39, 127, 142),
    (31, 161, 135), (74, 194, 109), (159, 218, 58), (253, 231, 37),
)


def color_ramp() -> np.ndarray:
    """(256, 3) uint8 ramp through COLOR_ANCHORS."""
    anchors = np.asarray(COLOR_ANCHORS, dtype=np.float64)
    positions = np.linspace(0, 255, len(anchors))
    ramp = np.empty((256, 3), dtype=np.uint8)
    for c in range(3):
        ramp[:, c] = np.clip(np.interp(np.arange(256), positions, anchors[:, c]), 0, 255)
    return ramp


def write_heatmap_ppm(path, matrix: np.ndarray, lo: float = -1.0, hi: float = 1.0,
                      pixel_scale: int = 1) -> None:
    """Binary PPM (P6): one pixel per cell, rows = audio frames, cols = text tokens."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise UsageError("heatmap needs a 2-D matrix")
    idx = np.clip((m - lo) / (hi - lo), 0.0, 1.0)
    idx = np.round(idx * 255).astype(np.uint8)
    pixels = color_ramp()[idx]
    if pixel_scale > 1:
        pixels = np.repeat(np.repeat(pixels, pixel_scale, axis=0), pixel_scale, axis=1)
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def emit_alignment_artifacts(
    out_dir,
    stem: str,
    analysis: AlignmentAnalysis,
    transcript: str,
    frame_rate_ms: float,
) -> tuple[Path, Path]:
    """Write the PPM heatmap and its sidecar JSON; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ppm = out_dir / f"{stem}.ppm"
    meta = out_dir / f"{stem}.json"
    write_heatmap_ppm(ppm, analysis.cosine)
    sidecar = analysis.to_json_dict()
    sidecar.update({
        "rows": "audio_embeddings",
        "row_times_ms": [i * frame_rate_ms for i in range(analysis.cosine.shape[0])],
        "cols": "text_tokens",
        "col_labels": list(transcript),
        "value_range": [-1.0, 1.0],
        "colormap": "viridis-like-256",
        "text_grid": [
            " ".join(f"{v:+.2f}" for v in row) for row in analysis.cosine
        ],
    })
    meta.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return ppm, meta
