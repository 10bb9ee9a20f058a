"""The whole modal-invariance recipe at miniature scale, via the library API.

Stages: build the toy corpus -> pretrain the frozen-LM stand-in -> generate
response targets from transcripts -> CTC-pretrain the encoder -> align the
encoder to the frozen LM -> compare text / end-to-end / cascade perplexity.

Results land in ./demo-exp so the later demos can reuse the checkpoints.

Run:  python3 demos/05_full_recipe.py   (a few minutes on CPU)
"""

from pathlib import Path

from speechalign import encoder as enc_mod
from speechalign import evaluation as ev
from speechalign import lm as lm_mod
from speechalign import optim, pipeline
from speechalign.audio import SynthConfig

EXP = Path("demo-exp")
SYNTH = SynthConfig(feature_dim=32, frames_per_char=8, duration_jitter=2,
                    noise_std=0.1, silence_frames=4, speaker_shift_scale=0.05)

print("== 1. toy corpus ==")
bundle = pipeline.build_toy_corpus(seed=0, size=80, out_dir=EXP, synth_cfg=SYNTH)
vocab = pipeline.corpus_vocabulary()
groups = pipeline.split_records(bundle.records)
print({k: len(v) for k, v in groups.items()})

print("\n== 2. pretrain the frozen-LM stand-in ==")
lm_cfg = lm_mod.LMConfig(vocab_size=len(vocab), model_dim=48, num_layers=2,
                         num_heads=4, ffn_dim=128, max_context=512)
lm_params, lm_stats = lm_mod.pretrain_toy_lm(
    lm_cfg,
    [(r.text, r.ideal_response) for r in groups["train"]],
    optim.OptimizerConfig(peak_lr=2e-3, warmup_steps=80, max_steps=3000, floor_lr=2e-4,
                          batch_size=8, seed=0, eval_interval=100, patience=8),
    vocab,
    valid_corpus=[(r.text, r.ideal_response) for r in groups["valid"]],
    target_ppl=1.6,
)
print(f"held-out response perplexity {lm_stats['valid_ppl']:.3f}")
pipeline.save_lm_checkpoint(EXP / "checkpoints" / "lm.ckpt", lm_params, lm_stats["steps"])

print("\n== 3. generate response targets by prompting the frozen LM ==")
records = pipeline.generate_responses(bundle.manifest_path, lm_params, vocab)
groups = pipeline.split_records(records)
sample = groups["test"][0]
print(f"  {sample.text!r} -> {sample.response!r}")

print("\n== 4. CTC pretraining ==")
enc_cfg = enc_mod.EncoderConfig(ctc_vocab_size=len(vocab), input_dim=32,
                                subsample_factor=4, conformer_dim=48, num_layers=1,
                                ffn_dim=128, kernel_size=7, num_heads=4, lm_dim=48)
enc_params, ctc_stats = pipeline.pretrain_ctc(
    enc_cfg, groups["train"], groups["valid"],
    optim.OptimizerConfig(peak_lr=1e-3, warmup_steps=100, max_steps=2500, floor_lr=1e-4,
                          batch_size=8, seed=0, eval_interval=100, patience=6),
    vocab, aug_noise_max=0.4,
)
print(f"held-out character error rate {ctc_stats.extra['valid_cer']:.3f}")
pipeline.save_encoder_checkpoint(EXP / "checkpoints" / "encoder-ctc.ckpt", enc_params,
                                 ctc_stats.best_step)

print("\n== 5. alignment training (frozen LM, trainable encoder) ==")
enc_params, align_stats = pipeline.train_alignment(
    enc_params, lm_params, groups["train"], groups["valid"],
    optim.OptimizerConfig(peak_lr=5e-4, warmup_steps=150, max_steps=3000, floor_lr=5e-5,
                          batch_size=8, seed=0, eval_interval=100, patience=6),
    vocab, aug_noise_max=0.4,
)
print(f"audio-prompted validation perplexity {align_stats.best_metric:.3f}")
pipeline.save_encoder_checkpoint(EXP / "checkpoints" / "encoder-aligned.ckpt", enc_params,
                                 align_stats.best_step)

print("\n== 6. the comparison the recipe is about ==")
test = groups["test"]
text_ppl = ev.eval_response_ppl("text", test, lm_params, vocab).response_ppl
audio_ppl = ev.eval_response_ppl("audio", test, lm_params, vocab,
                                 enc_params=enc_params).response_ppl
sigma, measured = ev.sweep_noise_for_wer(enc_params, test, vocab, (0.10, 0.20))
cascade_ppl = ev.eval_response_ppl("cascade", test, lm_params, vocab,
                                   enc_params=enc_params, noise_std=sigma).response_ppl
print(f"  reference text prompt : response PPL {text_ppl:.3f}")
print(f"  end-to-end (audio)    : response PPL {audio_ppl:.3f}")
print(f"  cascade @ {measured:.0%} WER   : response PPL {cascade_ppl:.3f}")
print("\nthe expected ordering is text <= end-to-end < degraded cascade")
