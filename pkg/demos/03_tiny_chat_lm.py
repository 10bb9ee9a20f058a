"""Train a miniature chat LM on a handful of QA pairs and decode from it.

The LM consumes template-assembled bytes: the same prefix/suffix sandwich
the audio path will later fill with encoder embeddings.

Run:  python3 demos/03_tiny_chat_lm.py   (about half a minute on CPU)
"""

from speechalign import lm, optim, pipeline, text

vocab = pipeline.corpus_vocabulary()
template = text.ChatTemplate()

print("== the prompt template (empty system block) ==")
print(repr(text.build_prompt("what color is the cat", template)))

pairs = [
    ("what color is the cat", "the cat is red"),
    ("what color is the dog", "the dog is blue"),
    ("what size is the cat", "the cat is tiny"),
    ("what size is the dog", "the dog is huge"),
]

print(f"\n== training on {len(pairs)} pairs until they are memorized ==")
cfg = lm.LMConfig(vocab_size=len(vocab), model_dim=32, num_layers=1, num_heads=2,
                  ffn_dim=64, max_context=128)
train_cfg = optim.OptimizerConfig(peak_lr=3e-3, warmup_steps=30, max_steps=2500,
                                  floor_lr=3e-4, batch_size=4, seed=0, eval_interval=100)
params, stats = lm.pretrain_toy_lm(cfg, pairs, train_cfg, vocab, valid_corpus=pairs,
                                   target_ppl=1.1, log=print)
print(f"reached response perplexity {stats['valid_ppl']:.4f} in {stats['steps']} steps")

print("\n== greedy and beam decoding ==")
for question, _ in pairs[:2]:
    prompt = pipeline.text_prompt_embeddings(params, question, vocab, template)
    greedy = text.decode(lm.greedy_decode(params, prompt, vocab))
    beam = text.decode(lm.beam_search_decode(params, prompt, vocab, beam=10))
    print(f"  {question!r} -> greedy {greedy!r} | beam(10) {beam!r}")

print("\n== perplexity of the correct responses ==")
dataset = [
    (pipeline.text_prompt_embeddings(params, q, vocab, template),
     pipeline.response_tokens(a, vocab))
    for q, a in pairs
]
print(f"  pooled response perplexity: {lm.perplexity(params, dataset):.4f}")
