"""Cosine-similarity heatmap between audio-encoder outputs and text embeddings.

Needs the checkpoints from demos/05_full_recipe.py (./demo-exp). The probe
utterance is ten characters long and silence-padded, so the map shows the
characteristic near-monotonic band with uninformative margins.

Run:  python3 demos/06_alignment_heatmap.py
"""

import sys
from pathlib import Path

import numpy as np

from speechalign import evaluation as ev
from speechalign import pipeline
from speechalign.audio import load_features

EXP = Path("demo-exp")
if not (EXP / "checkpoints" / "encoder-aligned.ckpt").exists():
    sys.exit("run demos/05_full_recipe.py first (it creates ./demo-exp)")

vocab = pipeline.corpus_vocabulary()
lm_params, _ = pipeline.load_lm_checkpoint(EXP / "checkpoints" / "lm.ckpt")
enc_params, _ = pipeline.load_encoder_checkpoint(EXP / "checkpoints" / "encoder-aligned.ckpt")
records = pipeline.read_manifest(EXP / "manifests" / "corpus.jsonl")

probe = next(r for r in records if r.id == pipeline.PROBE_ID)
feats = load_features(probe.feature_path)
analysis = ev.analyze_alignment(lm_params, enc_params, feats, probe.text, vocab)

print(f"utterance {probe.id!r}: {probe.text!r}")
print(f"cosine matrix {analysis.cosine.shape[0]} audio frames x "
      f"{analysis.cosine.shape[1]} text tokens")
print(f"argmax path (best audio frame per character): {analysis.argmax_path}")
print(f"monotonicity score: {analysis.monotonicity:.3f}")

frame_ms = 10.0 * enc_params.config.subsample_factor * enc_params.config.stack_n
ppm, meta = ev.emit_alignment_artifacts(EXP / "plots", f"align-{probe.id}",
                                        analysis, probe.text, frame_ms)
print(f"wrote {ppm} and {meta}")

print("\ncoarse ASCII view (rows thinned; * marks the per-column argmax):")
cos = analysis.cosine
shades = " .:-=+#"
for i in range(0, cos.shape[0], 2):
    row = ""
    for j in range(cos.shape[1]):
        if analysis.argmax_path[j] in (i, i + 1):
            row += "*"
        else:
            level = int((cos[i, j] + 1) / 2 * (len(shades) - 1))
            row += shades[level]
    print(f"  {i * frame_ms / 1000:5.2f}s |{row}|")
print("          " + "".join(probe.text))

held_out = [r for r in pipeline.split_records(records)["test"] if r.id != probe.id][:10]
scores = []
for r in held_out:
    a = ev.analyze_alignment(lm_params, enc_params, load_features(r.feature_path), r.text, vocab)
    scores.append(a.monotonicity)
print(f"\nmean monotonicity over {len(scores)} held-out utterances: {np.mean(scores):.3f}")
