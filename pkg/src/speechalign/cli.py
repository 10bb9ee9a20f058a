"""Command-line entry point: one command per stage of the recipe.

Subcommands: synth-corpus, pretrain-lm, gen-responses, pretrain-ctc,
train-align, eval-ppl, eval-cascade, eval-align, chat. Each writes its
artifacts under a fixed experiment-directory layout (manifests/, features/,
checkpoints/, reports/, plots/) and echoes the exact resolved configuration
beside them. Configuration is a JSON file plus dotted-key overrides;
unknown keys are errors, not silently ignored.

Exit codes: 0 success, 2 usage, 3 data, 4 numeric/training failure.
"""

import argparse
import copy
import difflib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc_mod
from . import evaluation as ev
from . import lm as lm_mod
from . import optim, pipeline, text
from .audio import SynthConfig, load_features, synthesize_features
from .errors import (
    DataError,
    InvariantViolation,
    NumericError,
    UsageError,
)

EXP_ROOT_ENV = "SPEECHALIGN_EXP_ROOT"

DEFAULT_CONFIG = {
    "seed": 0,
    "corpus": {
        "size": 250,
        "synth": {
            "feature_dim": 80,
            "template_seed": 1234,
            "frames_per_char": 16,
            "duration_jitter": 4,
            "noise_std": 0.1,
            "silence_frames": 8,
            "speaker_shift_scale": 0.05,
        },
    },
    "lm": {
        "model_dim": 64,
        "num_layers": 2,
        "num_heads": 4,
        "ffn_dim": 256,
        "max_context": 512,
        "positional": "learned",
        "target_ppl": 3.0,
        "position_jitter": 64,
        "train": {
            "peak_lr": 2e-3,
            "warmup_steps": 100,
            "max_steps": 4000,
            "floor_lr": 2e-4,
            "batch_size": 16,
            "eval_interval": 100,
            "patience": 10,
        },
    },
    "encoder": {
        "input_dim": 80,
        "subsample_factor": 8,
        "conformer_dim": 64,
        "num_layers": 2,
        "ffn_dim": 256,
        "kernel_size": 11,
        "num_heads": 4,
        "stack_n": 1,
        "lm_dim": 64,
    },
    "ctc": {
        "aug_noise_max": 0.5,
        "train": {
            "peak_lr": 1e-3,
            "warmup_steps": 200,
            "max_steps": 20000,
            "floor_lr": 1e-5,
            "batch_size": 8,
            "eval_interval": 100,
            "patience": 8,
        },
    },
    "align": {
        "aug_noise_max": 0.5,
        "train": {
            "peak_lr": 5e-4,
            "warmup_steps": 300,
            "max_steps": 20000,
            "floor_lr": 5e-6,
            "batch_size": 8,
            "eval_interval": 150,
            "patience": 8,
        },
    },
    "gen": {"max_ratio": 4, "workers": 1},
    "eval": {"bands": [[0.0, 0.05], [0.10, 0.20], [0.30, 0.40]], "monotonicity_utterances": 20},
}

COMMANDS = (
    "synth-corpus", "pretrain-lm", "gen-responses", "pretrain-ctc",
    "train-align", "eval-ppl", "eval-cascade", "eval-align", "chat",
)


# --- config handling ------------------------------------------------------------


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


KNOWN_KEYS = frozenset(_flatten(DEFAULT_CONFIG))


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _reject_unknown(dotted: str) -> None:
    if dotted not in KNOWN_KEYS:
        hint = difflib.get_close_matches(dotted, KNOWN_KEYS, n=1)
        suggestion = f" (did you mean {hint[0]!r}?)" if hint else ""
        raise UsageError(f"unknown config key {dotted!r}{suggestion}")


def resolve_config(config_path: str | None, overrides: list[str]) -> dict:
    """DEFAULT_CONFIG, deep-merged with the JSON file, then key=value flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise DataError(f"config file {config_path} does not exist") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from exc
        for dotted, value in _flatten(loaded).items():
            _reject_unknown(dotted)
            _set_dotted(cfg, dotted, value)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        _reject_unknown(dotted)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_dotted(cfg, dotted, value)
    return cfg


def _opt_config(train: dict, seed: int, target_metric: float | None = None) -> optim.OptimizerConfig:
    return optim.OptimizerConfig(seed=seed, target_metric=target_metric, **train)


# --- experiment directory ---------------------------------------------------------


@dataclass
class ExpDir:
    root: Path

    @classmethod
    def resolve(cls, arg: str | None) -> "ExpDir":
        root = arg or os.environ.get(EXP_ROOT_ENV) or "speechalign-exp"
        return cls(Path(root))

    def ensure(self) -> "ExpDir":
        for sub in ("manifests", "features", "checkpoints", "reports", "plots"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    @property
    def manifest(self) -> Path:
        return self.root / "manifests" / "corpus.jsonl"

    @property
    def vocab_file(self) -> Path:
        return self.root / "manifests" / "vocab.txt"

    @property
    def lm_ckpt(self) -> Path:
        return self.root / "checkpoints" / "lm.ckpt"

    @property
    def ctc_ckpt(self) -> Path:
        return self.root / "checkpoints" / "encoder-ctc.ckpt"

    @property
    def aligned_ckpt(self) -> Path:
        return self.root / "checkpoints" / "encoder-aligned.ckpt"

    def report(self, name: str) -> Path:
        return self.root / "reports" / name

    def plot(self, name: str) -> Path:
        return self.root / "plots" / name


def echo_config(exp: ExpDir, command: str, cfg: dict, argv: list[str]) -> None:
    payload = {"command": command, "argv": argv, "config": cfg}
    path = exp.report(f"{command}.config.json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _log(msg: str) -> None:
    print(msg, flush=True)


def _load_vocab(exp: ExpDir) -> text.Vocabulary:
    if not exp.vocab_file.exists():
        raise DataError(f"vocabulary file {exp.vocab_file} missing; run synth-corpus first")
    return text.Vocabulary.load(exp.vocab_file)


def _load_records(exp: ExpDir, manifest: str | None = None) -> list[pipeline.PairedExample]:
    return pipeline.read_manifest(manifest or exp.manifest)


def _load_lm(path) -> lm_mod.LMParams:
    params, _ = pipeline.load_lm_checkpoint(path)
    return params


def _resume_hit(args, artifact: Path, what: str) -> bool:
    if getattr(args, "resume", False) and artifact.exists():
        _log(f"{what} already present at {artifact}; --resume makes this a no-op")
        return True
    return False


# --- subcommand implementations ----------------------------------------------------


def cmd_synth_corpus(args, cfg, exp: ExpDir) -> int:
    if _resume_hit(args, exp.manifest, "corpus manifest"):
        return 0
    synth = SynthConfig(**cfg["corpus"]["synth"])
    bundle = pipeline.build_toy_corpus(cfg["seed"], cfg["corpus"]["size"], exp.root, synth_cfg=synth)
    groups = pipeline.split_records(bundle.records)
    _log(
        f"corpus: {len(bundle.records)} records "
        f"(train {len(groups['train'])}, valid {len(groups['valid'])}, test {len(groups['test'])}) "
        f"-> {bundle.manifest_path}"
    )
    return 0


def cmd_pretrain_lm(args, cfg, exp: ExpDir) -> int:
    if _resume_hit(args, exp.lm_ckpt, "LM checkpoint"):
        return 0
    vocab = _load_vocab(exp)
    groups = pipeline.split_records(_load_records(exp, args.manifest))
    lm_cfg = lm_mod.LMConfig(vocab_size=len(vocab), **{
        k: cfg["lm"][k] for k in ("model_dim", "num_layers", "num_heads", "ffn_dim",
                                  "max_context", "positional")
    })
    train_cfg = _opt_config(cfg["lm"]["train"], cfg["seed"])
    params, stats = lm_mod.pretrain_toy_lm(
        lm_cfg,
        [(r.text, r.ideal_response) for r in groups["train"]],
        train_cfg,
        vocab,
        valid_corpus=[(r.text, r.ideal_response) for r in groups["valid"]],
        target_ppl=cfg["lm"]["target_ppl"],
        position_jitter=cfg["lm"]["position_jitter"],
        log=_log,
    )
    pipeline.save_lm_checkpoint(exp.lm_ckpt, params, stats["steps"])
    exp.report("pretrain-lm.json").write_text(json.dumps({
        "valid_response_ppl": stats["valid_ppl"], "steps": stats["steps"],
        "final_train_loss": stats["loss_curve"][-1],
    }, indent=2) + "\n", encoding="utf-8")
    _log(f"LM held-out response perplexity {stats['valid_ppl']:.4f} at step {stats['steps']}")
    return 0


def cmd_gen_responses(args, cfg, exp: ExpDir) -> int:
    vocab = _load_vocab(exp)
    lm_params = _load_lm(args.lm or exp.lm_ckpt)
    manifest = args.manifest or exp.manifest
    records = pipeline.generate_responses(
        manifest, lm_params, vocab,
        max_ratio=cfg["gen"]["max_ratio"], workers=cfg["gen"]["workers"],
        log=_log if args.verbose else None,
    )
    done = sum(1 for r in records if r.response is not None)
    skipped = sum(1 for r in records if r.skipped)
    matches = sum(
        1 for r in records
        if r.response is not None and ev.normalized_match(r.response, r.ideal_response)
    )
    exp.report("gen-responses.json").write_text(json.dumps({
        "records": len(records), "responses": done, "skipped": skipped,
        "rule_table_exact_match": matches / max(done, 1),
    }, indent=2) + "\n", encoding="utf-8")
    _log(f"responses: {done}/{len(records)} (skipped {skipped}); "
         f"rule-table match {matches / max(done, 1):.3f}")
    return 0


def _encoder_config(cfg, vocab) -> enc_mod.EncoderConfig:
    return enc_mod.EncoderConfig(ctc_vocab_size=len(vocab), **cfg["encoder"])


def cmd_pretrain_ctc(args, cfg, exp: ExpDir) -> int:
    if _resume_hit(args, exp.ctc_ckpt, "CTC encoder checkpoint"):
        return 0
    vocab = _load_vocab(exp)
    groups = pipeline.split_records(_load_records(exp, args.manifest))
    enc_cfg = _encoder_config(cfg, vocab)
    train_cfg = _opt_config(cfg["ctc"]["train"], cfg["seed"])
    params, stats = pipeline.pretrain_ctc(
        enc_cfg, groups["train"], groups["valid"], train_cfg, vocab,
        aug_noise_max=cfg["ctc"]["aug_noise_max"], log=_log,
    )
    pipeline.save_encoder_checkpoint(exp.ctc_ckpt, params, stats.best_step)
    exp.report("pretrain-ctc.json").write_text(json.dumps({
        "valid_ctc_loss": stats.best_metric, "valid_cer": stats.extra["valid_cer"],
        "steps": stats.best_step,
    }, indent=2) + "\n", encoding="utf-8")
    _log(f"CTC: valid loss {stats.best_metric:.4f}, CER {stats.extra['valid_cer']:.4f} "
         f"at step {stats.best_step}")
    return 0


def cmd_train_align(args, cfg, exp: ExpDir) -> int:
    if _resume_hit(args, exp.aligned_ckpt, "aligned encoder checkpoint"):
        return 0
    vocab = _load_vocab(exp)
    groups = pipeline.split_records(_load_records(exp, args.manifest))
    lm_path = args.lm or exp.lm_ckpt
    lm_params = _load_lm(lm_path)
    enc_path = args.encoder or exp.ctc_ckpt
    enc_params, start_step = pipeline.load_encoder_checkpoint(enc_path)
    train_cfg = _opt_config(cfg["align"]["train"], cfg["seed"])
    params, stats = pipeline.train_alignment(
        enc_params, lm_params, groups["train"], groups["valid"], train_cfg, vocab,
        lm_ckpt_path=lm_path, aug_noise_max=cfg["align"]["aug_noise_max"], log=_log,
    )
    pipeline.save_encoder_checkpoint(exp.aligned_ckpt, params, stats.best_step)
    exp.report("train-align.json").write_text(json.dumps({
        "valid_audio_ppl": stats.best_metric, "steps": stats.best_step,
        "lm_checksum": stats.extra["lm_checksum"],
    }, indent=2) + "\n", encoding="utf-8")
    _log(f"alignment: valid audio-prompted ppl {stats.best_metric:.4f} at step {stats.best_step}")
    return 0


def _test_records(exp: ExpDir, manifest: str | None) -> list[pipeline.PairedExample]:
    groups = pipeline.split_records(_load_records(exp, manifest))
    records = [r for r in groups["test"] if r.response is not None and not r.skipped]
    if not records:
        raise DataError("no test records with responses; run gen-responses first")
    return records


def cmd_eval_ppl(args, cfg, exp: ExpDir) -> int:
    vocab = _load_vocab(exp)
    lm_params = _load_lm(args.lm or exp.lm_ckpt)
    records = _test_records(exp, args.manifest)
    enc_params = None
    if args.system in ("audio", "cascade"):
        enc_path = args.encoder or (exp.aligned_ckpt if args.system == "audio" else exp.ctc_ckpt)
        enc_params, _ = pipeline.load_encoder_checkpoint(enc_path)
    report = ev.eval_response_ppl(
        args.system, records, lm_params, vocab, enc_params=enc_params,
        noise_std=args.noise, oracle_transcripts=args.oracle_transcripts,
        dataset_id=str(args.manifest or exp.manifest),
    )
    suffix = f"-{args.system}" + (f"-noise{args.noise}" if args.noise else "")
    out = exp.report(f"eval-ppl{suffix}.json")
    report.save(out)
    wer_part = f", prompt WER {report.prompt_wer:.3f}" if report.prompt_wer is not None else ""
    _log(f"{report.system_id}: response ppl {report.response_ppl:.4f}{wer_part} -> {out}")
    return 0


def cmd_eval_cascade(args, cfg, exp: ExpDir) -> int:
    vocab = _load_vocab(exp)
    lm_params = _load_lm(args.lm or exp.lm_ckpt)
    ctc_params, _ = pipeline.load_encoder_checkpoint(args.encoder or exp.ctc_ckpt)
    aligned_params, _ = pipeline.load_encoder_checkpoint(args.aligned or exp.aligned_ckpt)
    records = _test_records(exp, args.manifest)
    strata = []
    for band in cfg["eval"]["bands"]:
        sigma, measured = ev.sweep_noise_for_wer(ctc_params, records, vocab, tuple(band))
        cascade_sr = ev.success_rate_eval("cascade", records, lm_params, vocab,
                                          enc_params=ctc_params, noise_std=sigma)
        audio_sr = ev.success_rate_eval("audio", records, lm_params, vocab,
                                        enc_params=aligned_params, noise_std=sigma)
        cascade_ppl = ev.eval_response_ppl("cascade", records, lm_params, vocab,
                                           enc_params=ctc_params, noise_std=sigma)
        strata.append({
            "band": list(band), "noise_std": sigma, "prompt_wer": measured,
            "cascade_success_rate": cascade_sr["success_rate"],
            "audio_success_rate": audio_sr["success_rate"],
            "cascade_response_ppl": cascade_ppl.response_ppl,
        })
        _log(f"band {band}: sigma {sigma}, WER {measured:.3f}, "
             f"cascade SR {cascade_sr['success_rate']:.3f}, audio SR {audio_sr['success_rate']:.3f}, "
             f"cascade PPL {cascade_ppl.response_ppl:.4f}")
    out = exp.report("eval-cascade.json")
    out.write_text(json.dumps({"strata": strata}, indent=2) + "\n", encoding="utf-8")
    _log(f"cascade strata -> {out}")
    return 0


def cmd_eval_align(args, cfg, exp: ExpDir) -> int:
    vocab = _load_vocab(exp)
    lm_params = _load_lm(args.lm or exp.lm_ckpt)
    enc_params, _ = pipeline.load_encoder_checkpoint(args.encoder or exp.aligned_ckpt)
    records = _load_records(exp, args.manifest)
    by_id = {r.id: r for r in records}
    utterance = args.utterance or pipeline.PROBE_ID
    if utterance not in by_id:
        raise DataError(f"utterance {utterance!r} not found in the manifest")
    rec = by_id[utterance]
    feats = load_features(rec.feature_path)
    analysis = ev.analyze_alignment(lm_params, enc_params, feats, rec.text, vocab)
    frame_ms = 10.0 * enc_params.config.subsample_factor * enc_params.config.stack_n
    ppm, meta = ev.emit_alignment_artifacts(
        exp.root / "plots", f"align-{utterance}", analysis, rec.text, frame_ms)
    groups = pipeline.split_records(records)
    scores = []
    for r in groups["test"][: cfg["eval"]["monotonicity_utterances"]]:
        a = ev.analyze_alignment(lm_params, enc_params, load_features(r.feature_path), r.text, vocab)
        scores.append(a.monotonicity)
    summary = {
        "utterance": utterance,
        "cosine_shape": list(analysis.cosine.shape),
        "monotonicity": analysis.monotonicity,
        "mean_monotonicity_heldout": float(np.mean(scores)) if scores else None,
        "heatmap_ppm": str(ppm),
        "heatmap_json": str(meta),
    }
    out = exp.report(f"eval-align-{utterance}.json")
    out.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _log(f"alignment: {analysis.cosine.shape[0]}x{analysis.cosine.shape[1]} heatmap, "
         f"monotonicity {analysis.monotonicity:.3f}, "
         f"held-out mean {summary['mean_monotonicity_heldout']:.3f} -> {ppm}")
    return 0


def cmd_chat(args, cfg, exp: ExpDir) -> int:
    vocab = _load_vocab(exp)
    lm_params = _load_lm(args.lm or exp.lm_ckpt)
    enc_params, _ = pipeline.load_encoder_checkpoint(args.encoder or exp.aligned_ckpt)
    script_path = Path(args.script)
    if not script_path.exists():
        raise DataError(f"chat script {script_path} does not exist")
    synth = SynthConfig(**cfg["corpus"]["synth"])
    turns: list[text.Turn] = []
    transcript_log = []
    template = text.ChatTemplate()
    with open(script_path, encoding="utf-8") as f:
        user_lines = [json.loads(line) for line in f if line.strip()]
    for i, entry in enumerate(user_lines):
        modality = entry.get("modality", "text")
        user_text = entry["text"]
        if modality == "audio":
            feats = synthesize_features(user_text, pipeline.example_seed(cfg["seed"], f"chat-{i}"), synth)
            turns.append(text.audio_turn(feats))
        elif modality == "text":
            turns.append(text.text_turn(text.USER, user_text))
        else:
            raise UsageError(f"turn {i}: unknown modality {modality!r}")
        segments = text.build_conversation(turns, template)
        embeds = pipeline.conversation_embeddings(segments, lm_params, enc_params, vocab)
        cap = 4 * len(text.encode(user_text, vocab))
        reply = text.decode(lm_mod.greedy_decode(lm_params, embeds, vocab, max_tokens=cap))
        _log(f">>> [{modality}] {user_text}")
        _log(f"[assistant] {reply}")
        turns.append(text.text_turn(text.ASSISTANT, reply))
        transcript_log.append({"modality": modality, "user": user_text, "assistant": reply})
    out = exp.report("chat-transcript.json")
    out.write_text(json.dumps(transcript_log, indent=2) + "\n", encoding="utf-8")
    _log(f"chat transcript -> {out}")
    return 0


# --- argument parsing ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="speechalign", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--exp-dir", default=None, help=f"experiment directory (default ${EXP_ROOT_ENV} or ./speechalign-exp)")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a dotted config key")
        p.add_argument("--resume", action="store_true", help="skip if the artifact already exists")
        p.add_argument("--manifest", default=None, help="manifest path override")

    p = sub.add_parser("synth-corpus", help="build the toy corpus and features")
    common(p)
    p = sub.add_parser("pretrain-lm", help="train the frozen-LM stand-in")
    common(p)
    p = sub.add_parser("gen-responses", help="generate responses with the frozen LM")
    common(p)
    p.add_argument("--lm", default=None)
    p.add_argument("--verbose", action="store_true")
    p = sub.add_parser("pretrain-ctc", help="CTC-pretrain the audio encoder")
    common(p)
    p = sub.add_parser("train-align", help="align the encoder to the frozen LM")
    common(p)
    p.add_argument("--encoder", default=None, help="starting encoder checkpoint (default CTC)")
    p.add_argument("--lm", default=None)
    p = sub.add_parser("eval-ppl", help="response perplexity for one system")
    common(p)
    p.add_argument("--system", required=True, choices=list(ev.SYSTEMS))
    p.add_argument("--lm", default=None)
    p.add_argument("--encoder", default=None)
    p.add_argument("--noise", type=float, default=None, help="re-synthesize eval features at this noise")
    p.add_argument("--oracle-transcripts", action="store_true",
                   help="cascade conditions on reference transcripts (0%% WER)")
    p = sub.add_parser("eval-cascade", help="cascade vs end-to-end across noise strata")
    common(p)
    p.add_argument("--lm", default=None)
    p.add_argument("--encoder", default=None, help="CTC encoder checkpoint")
    p.add_argument("--aligned", default=None, help="aligned encoder checkpoint")
    p = sub.add_parser("eval-align", help="embedding-space alignment heatmap")
    common(p)
    p.add_argument("--lm", default=None)
    p.add_argument("--encoder", default=None)
    p.add_argument("--utterance", default=None, help="manifest record id (default: the probe)")
    p = sub.add_parser("chat", help="offline multi-turn driver over a script of mixed turns")
    common(p)
    p.add_argument("--script", required=True, help="JSON-lines file of user turns")
    p.add_argument("--lm", default=None)
    p.add_argument("--encoder", default=None)
    return parser


HANDLERS = {
    "synth-corpus": cmd_synth_corpus,
    "pretrain-lm": cmd_pretrain_lm,
    "gen-responses": cmd_gen_responses,
    "pretrain-ctc": cmd_pretrain_ctc,
    "train-align": cmd_train_align,
    "eval-ppl": cmd_eval_ppl,
    "eval-cascade": cmd_eval_cascade,
    "eval-align": cmd_eval_align,
    "chat": cmd_chat,
}


def dispatch(argv: list[str]) -> int:
    """Run one subcommand; returns the process exit code."""
    started = time.perf_counter()
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
            hint = difflib.get_close_matches(argv[0], COMMANDS, n=1)
            suggestion = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise UsageError(f"unknown subcommand {argv[0]!r}{suggestion}")
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("no subcommand given; see --help")
        cfg = resolve_config(args.config, args.overrides)
        exp = ExpDir.resolve(args.exp_dir).ensure()
        echo_config(exp, args.command, cfg, argv)
        code = HANDLERS[args.command](args, cfg, exp)
        _log(f"{args.command} finished in {time.perf_counter() - started:.1f}s")
        return code
    except UsageError as exc:
        print(f"usage-error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data-error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, InvariantViolation) as exc:
        print(f"training-error: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
