"""Interchanging text and audio turns in one conversation.

The conversation assembler produces TEXT/AUDIO segments whose transcript
substitution reproduces the all-text template byte-exactly; the LM then
consumes one embedding sequence regardless of which turns were spoken.

Needs ./demo-exp from demos/05_full_recipe.py.

Run:  python3 demos/07_mixed_modality_chat.py
"""

import sys
from pathlib import Path

from speechalign import lm as lm_mod
from speechalign import pipeline, text
from speechalign.audio import SynthConfig, synthesize_features

EXP = Path("demo-exp")
if not (EXP / "checkpoints" / "encoder-aligned.ckpt").exists():
    sys.exit("run demos/05_full_recipe.py first (it creates ./demo-exp)")

vocab = pipeline.corpus_vocabulary()
lm_params, _ = pipeline.load_lm_checkpoint(EXP / "checkpoints" / "lm.ckpt")
enc_params, _ = pipeline.load_encoder_checkpoint(EXP / "checkpoints" / "encoder-aligned.ckpt")
synth = SynthConfig(feature_dim=32, frames_per_char=8, duration_jitter=2,
                    noise_std=0.1, silence_frames=4, speaker_shift_scale=0.05)

print("== segment structure of a mixed conversation ==")
feats = synthesize_features("what color is the cat", seed=1, cfg=synth)
history = [text.audio_turn(feats)]
segments = text.build_conversation(history)
print("single audio turn ->", [s.kind for s in segments])

substituted = text.render_segments(segments, {1: "what color is the cat"})
all_text = text.render_segments(text.build_conversation(
    [text.text_turn(text.USER, "what color is the cat")]))
print(f"transcript substitution reproduces the text template byte-exactly: "
      f"{substituted == all_text}")

print("\n== a short conversation, alternating modalities ==")
turns = []
script = [
    ("audio", "what color is the cat"),
    ("text", "what size is the dog"),
    ("audio", "hue of fox"),
]
for i, (modality, user_text) in enumerate(script):
    if modality == "audio":
        feats = synthesize_features(user_text, seed=100 + i, cfg=synth)
        turns.append(text.audio_turn(feats))
    else:
        turns.append(text.text_turn(text.USER, user_text))
    segments = text.build_conversation(turns)
    embeds = pipeline.conversation_embeddings(segments, lm_params, enc_params, vocab)
    cap = 4 * len(text.encode(user_text, vocab))
    reply = text.decode(lm_mod.greedy_decode(lm_params, embeds, vocab, max_tokens=cap))
    turns.append(text.text_turn(text.ASSISTANT, reply))
    print(f">>> [{modality}] {user_text}")
    print(f"    {reply!r}")

print("\n(the toy LM was trained single-turn, so later replies degrade; the"
      "\n mechanism under test is the shared embedding interface, not quality)")
