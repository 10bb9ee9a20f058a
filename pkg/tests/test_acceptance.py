"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale experiment (criteria 3, 5, 6, 7, 8) runs once through the
CLI on default configuration into a shared temporary directory; the
remaining criteria are oracle- and property-based and run standalone.
Run with `pytest tests/test_acceptance.py -v -s` to watch progress.
"""

import json
import math
import time

import numpy as np
import pytest

from speechalign import checkpoint as ckpt
from speechalign import cli
from speechalign import ctc as ctc_mod
from speechalign import encoder as enc_mod
from speechalign import lm as lm_mod
from speechalign import numerics as nm
from speechalign import optim, pipeline, text
from speechalign.audio import FeatureSequence, SynthConfig, load_features, save_features
from speechalign.errors import FormatError, InvariantViolation

from helpers import fd_gradcheck, random_scalar_head
from test_ctc import brute_edit_distance, random_log_probs


def _report(num: int, ok: bool, detail: str = ""):
    print(f"\n[criterion {num:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    """Full default-configuration pipeline, driven through the CLI."""
    exp = tmp_path_factory.mktemp("acceptance-exp")
    timings = {}
    stages = ["synth-corpus", "pretrain-lm", "gen-responses", "pretrain-ctc", "train-align"]
    started = time.perf_counter()
    lm_sha_before = None
    for stage in stages:
        t0 = time.perf_counter()
        code = cli.dispatch([stage, "--exp-dir", str(exp)])
        assert code == 0, f"stage {stage} exited {code}"
        timings[stage] = time.perf_counter() - t0
        if stage == "pretrain-lm":
            lm_sha_before = ckpt.file_sha256(exp / "checkpoints" / "lm.ckpt")
    total = time.perf_counter() - started
    print(f"\npipeline timings: " + ", ".join(f"{k} {v:.0f}s" for k, v in timings.items()))
    return {
        "exp": exp,
        "pipeline_seconds": total,
        "eval_seconds": 0.0,
        "lm_sha_before_align": lm_sha_before,
    }


def _dispatch_timed(experiment, argv) -> int:
    t0 = time.perf_counter()
    code = cli.dispatch(argv + ["--exp-dir", str(experiment["exp"])])
    experiment["eval_seconds"] += time.perf_counter() - t0
    return code


def _read_report(experiment, name: str) -> dict:
    return json.loads((experiment["exp"] / "reports" / name).read_text())


class TestCriterion01CtcOracle:
    def test_thousand_random_instances(self):
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        worst = 0.0
        checked = 0
        for _ in range(1000):
            T = int(rng.integers(1, 7))
            V = int(rng.integers(2, 5))
            L = int(rng.integers(1, 4))
            target = ctc_mod.CtcTarget(tuple(int(v) for v in rng.integers(1, V, size=L)))
            lp = random_log_probs(rng, T, V)
            got = ctc_mod.ctc_loss(nm.Tensor(lp), target).item()
            want = ctc_mod.ctc_brute_force_loss(lp, target)
            if math.isinf(want):
                assert math.isinf(got)
            else:
                worst = max(worst, abs(got - want))
                checked += 1
        elapsed = time.perf_counter() - t0
        _report(1, worst <= 1e-6 and elapsed < 60,
                f"{checked} finite instances, worst |diff| {worst:.2e}, {elapsed:.1f}s")


class TestCriterion02GradientSuite:
    def test_every_op_and_composed_path(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(202)

        def sweep(build, n_inputs, shapes_fn, out_shape_fn, reps=20):
            for _ in range(reps):
                shapes = shapes_fn(rng)
                tensors = [nm.Tensor(rng.standard_normal(s), requires_grad=True) for s in shapes[:n_inputs]]
                head = random_scalar_head(rng, out_shape_fn(shapes))
                fd_gradcheck(lambda *ts: head(build(*ts, shapes=shapes)), tensors)

        two = lambda r: [tuple(int(v) for v in r.integers(1, 6, size=2))] * 2
        same = lambda s: s[0]
        sweep(lambda a, b, shapes: nm.add(a, b), 2, two, same)
        sweep(lambda a, b, shapes: nm.sub(a, b), 2, two, same)
        sweep(lambda a, b, shapes: nm.mul(a, b), 2, two, same)
        sweep(lambda a, b, shapes: nm.add_scaled(a, b, 0.5), 2, two, same)
        for unary in (nm.softmax, nm.log_softmax, nm.sigmoid, nm.tanh, nm.swish, nm.gelu,
                      lambda t: nm.scale(t, -2.5), nm.relu):
            sweep(lambda a, shapes, u=unary: u(a), 1, two, same)
        sweep(lambda a, shapes: nm.transpose(a), 1, two, lambda s: s[0][::-1])

        def mm_shapes(r):
            m, k, n = (int(v) for v in r.integers(1, 6, size=3))
            return [(m, k), (k, n), (m, n)]

        sweep(lambda a, b, shapes: nm.matmul(a, b), 2, mm_shapes, lambda s: s[2])

        def lin_shapes(r):
            m, k, n = (int(v) for v in r.integers(1, 6, size=3))
            return [(m, k), (k, n), (n,), (m, n)]

        sweep(lambda x, w, b, shapes: nm.linear(x, w, b), 3, lin_shapes, lambda s: s[3])

        def ln_shapes(r):
            T, d = int(r.integers(1, 5)), int(r.integers(2, 8))
            return [(T, d), (d,), (d,)]

        sweep(lambda x, g, b, shapes: nm.layer_norm(x, g, b), 3, ln_shapes, lambda s: s[0])

        def conv_shapes(r):
            T, d = int(r.integers(2, 9)), int(r.integers(1, 4))
            k = int(r.choice([1, 3, 5]))
            return [(T, d), (k, d)]

        sweep(lambda x, k, shapes: nm.conv1d_depthwise(x, k), 2, conv_shapes, lambda s: s[0])

        def glu_shapes(r):
            T, d = int(r.integers(1, 6)), int(r.integers(1, 4))
            return [(T, 2 * d)]

        sweep(lambda x, shapes: nm.glu(x), 1, glu_shapes, lambda s: (s[0][0], s[0][1] // 2))

        # embedding, gather, structural ops
        for _ in range(20):
            V, d, L = int(rng.integers(2, 8)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
            table = nm.Tensor(rng.standard_normal((V, d)), requires_grad=True)
            ids = rng.integers(0, V, size=L)
            head = random_scalar_head(rng, (L, d))
            fd_gradcheck(lambda t_: head(nm.embedding(t_, ids)), [table])
            T = L + 1
            x = nm.Tensor(rng.standard_normal((T, d)), requires_grad=True)
            rows = rng.integers(0, T, size=3)
            cols = rng.integers(0, d, size=3)
            h2 = random_scalar_head(rng, (3,))
            fd_gradcheck(lambda x_: h2(nm.take_rc(x_, rows, cols)), [x])
            h3 = random_scalar_head(rng, (T + 1, d))
            fd_gradcheck(lambda x_: h3(nm.pad_rows(x_, 1)), [x])
            h4 = random_scalar_head(rng, (T * d,))
            fd_gradcheck(lambda x_: h4(nm.reshape(x_, (T * d,))), [x])
            h5 = random_scalar_head(rng, (2 * T, d))
            y = nm.Tensor(rng.standard_normal((T, d)), requires_grad=True)
            fd_gradcheck(lambda a_, b_: h5(nm.concat_rows([a_, b_])), [x, y])
            h6 = random_scalar_head(rng, (T, 2 * d))
            fd_gradcheck(lambda a_, b_: h6(nm.concat_cols([a_, b_])), [x, y])
            h7 = random_scalar_head(rng, (max(T - 1, 1), d))
            fd_gradcheck(lambda x_: h7(nm.slice_rows(x_, 0, max(T - 1, 1))), [x])

        # batched attention primitives
        for _ in range(20):
            heads = int(rng.choice([1, 2]))
            hd = int(rng.integers(1, 4))
            T, d = int(rng.integers(1, 5)), heads * hd
            q = nm.Tensor(rng.standard_normal((T, d)), requires_grad=True)
            k = nm.Tensor(rng.standard_normal((T, d)), requires_grad=True)
            v = nm.Tensor(rng.standard_normal((T, d)), requires_grad=True)
            hs = random_scalar_head(rng, (heads, T, T))
            fd_gradcheck(lambda q_, k_: hs(nm.attention_scores(q_, k_, heads, 0.6)), [q, k])
            w = nm.Tensor(rng.standard_normal((heads, T, T)), requires_grad=True)
            hc = random_scalar_head(rng, (T, d))
            fd_gradcheck(lambda w_, v_: hc(nm.attention_context(w_, v_, heads)), [w, v])

        # ctc loss gradient
        for _ in range(5):
            T, V = 5, 4
            target = ctc_mod.CtcTarget(tuple(int(x) for x in rng.integers(1, V, size=2)))
            x = nm.Tensor(rng.standard_normal((T, V)), requires_grad=True)
            fd_gradcheck(lambda x_: ctc_mod.ctc_loss(nm.log_softmax(x_, axis=-1), target), [x], rtol=1e-5)

        # composed encoder -> LM loss at 1e-4
        vocab = text.Vocabulary.from_alphabet("ab ")
        enc_cfg = enc_mod.EncoderConfig(ctc_vocab_size=len(vocab), input_dim=8,
                                        subsample_factor=2, conformer_dim=8, num_layers=1,
                                        ffn_dim=16, kernel_size=3, num_heads=2, lm_dim=8)
        enc_params = enc_mod.init_encoder_params(enc_cfg, seed=3)
        lm_cfg = lm_mod.LMConfig(vocab_size=len(vocab), model_dim=8, num_layers=1,
                                 num_heads=2, ffn_dim=16, max_context=64)
        lm_params = lm_mod.init_lm_params(lm_cfg, seed=4)
        raw = rng.standard_normal((6, 8)).astype(np.float32)
        resp = text.TokenSequence((4, 5, vocab.eos_id), vocab)

        def composed(*tensors):
            embeds = enc_mod.encode_to_embeddings(enc_params, enc_cfg, FeatureSequence(raw))
            prefix = lm_mod.embed_tokens(lm_params, [vocab.bos_id, 4])
            prompt = lm_mod.concat_embeddings([prefix, embeds])
            total, _ = lm_mod.sequence_log_prob(lm_params, prompt, resp)
            return nm.scale(total, -1.0 / len(resp))

        picks = ["sub0.dw", "sub1.pw", "conf0.attn.wq", "conf0.conv.dw", "conf0.ffn1.w1",
                 "conf0.ffn2.w2", "proj.w", "proj.b"]
        fd_gradcheck(composed, [enc_params.tensors[n] for n in picks], rtol=1e-4, sample=3,
                     rng=rng)
        elapsed = time.perf_counter() - t0
        _report(2, elapsed < 300, f"all ops + composed encoder-to-LM path, {elapsed:.1f}s")


class TestCriterion03FrozenLm:
    def test_lm_checkpoint_unchanged_after_alignment(self, experiment):
        sha_after = ckpt.file_sha256(experiment["exp"] / "checkpoints" / "lm.ckpt")
        align_report = _read_report(experiment, "train-align.json")
        ok = sha_after == experiment["lm_sha_before_align"] and bool(align_report["lm_checksum"])
        _report(3, ok, f"lm.ckpt sha256 {sha_after[:12]}... identical before/after train-align")

    def test_mutation_hard_fails(self, tmp_path):
        synth = SynthConfig(feature_dim=16, frames_per_char=4, silence_frames=2)
        bundle = pipeline.build_toy_corpus(seed=9, size=6, out_dir=tmp_path, synth_cfg=synth)
        vocab = pipeline.corpus_vocabulary()
        for r in bundle.records:
            r.response = r.ideal_response
        lm_params = lm_mod.init_lm_params(
            lm_mod.LMConfig(vocab_size=len(vocab), model_dim=16, num_layers=1, num_heads=2,
                            ffn_dim=32, max_context=512), seed=5)
        enc_params = enc_mod.init_encoder_params(
            enc_mod.EncoderConfig(ctc_vocab_size=len(vocab), input_dim=16, subsample_factor=2,
                                  conformer_dim=16, num_layers=1, ffn_dim=32, kernel_size=3,
                                  num_heads=2, lm_dim=16), seed=6)
        opt_cfg = optim.OptimizerConfig(warmup_steps=1, max_steps=4, batch_size=2,
                                        eval_interval=2, seed=7)

        def corrupt(_msg):
            lm_params.tensors["out.b"].data += 1.0  # simulated outside interference

        with pytest.raises(InvariantViolation):
            pipeline.train_alignment(enc_params, lm_params, bundle.records[:4],
                                     bundle.records[4:], opt_cfg, vocab, log=corrupt)
        _report(3, True, "in-run LM mutation raises InvariantViolation (hard failure)")


class TestCriterion04TemplateBytes:
    def test_prefix_suffix_and_multiturn_substitution(self):
        ok_prompt = text.build_prompt("hi") == "<s>[INST] <<SYS>>\n\n<</SYS>>\n\nhi [/INST]"
        import random

        rng = random.Random(404)
        words = ["what", "is", "the", "cat", "red", "ok", "why", "how"]
        all_ok = True
        for _ in range(100):
            n = rng.randrange(1, 7)
            texts = [" ".join(rng.choices(words, k=rng.randrange(1, 5))) for _ in range(n)]
            mixed, full_text = [], []
            for i, t in enumerate(texts):
                speaker = text.USER if i % 2 == 0 else text.ASSISTANT
                if speaker == text.USER and rng.random() < 0.6:
                    mixed.append(text.audio_turn(i))
                else:
                    mixed.append(text.text_turn(speaker, t))
                full_text.append(text.text_turn(speaker, t))
            segs = text.build_conversation(mixed)
            transcripts = {j: texts[s.audio] for j, s in enumerate(segs) if s.kind == "AUDIO"}
            want = text.render_segments(text.build_conversation(full_text))
            all_ok &= text.render_segments(segs, transcripts) == want
        _report(4, ok_prompt and all_ok,
                "build_prompt byte-exact; 100 random mixed histories substitute exactly")


class TestCriterion05OracleCascade:
    def test_reference_transcripts_match_text_system(self, experiment):
        assert _dispatch_timed(experiment, ["eval-ppl", "--system", "text"]) == 0
        assert _dispatch_timed(experiment,
                               ["eval-ppl", "--system", "cascade", "--oracle-transcripts"]) == 0
        text_ppl = _read_report(experiment, "eval-ppl-text.json")["response_ppl"]
        casc = _read_report(experiment, "eval-ppl-cascade.json")
        diff = abs(text_ppl - casc["response_ppl"])
        ok = diff <= 1e-9 and casc["prompt_wer"] == 0.0
        _report(5, ok, f"|text {text_ppl:.6f} - oracle-cascade {casc['response_ppl']:.6f}| = {diff:.1e}")


class TestCriterion06DeskScaleExperiment:
    def test_modal_invariance_orderings_and_budget(self, experiment):
        exp = experiment["exp"]
        records = pipeline.read_manifest(exp / "manifests" / "corpus.jsonl")
        corpus_ok = len(records) >= 200
        lm_report = _read_report(experiment, "pretrain-lm.json")
        lm_ok = lm_report["valid_response_ppl"] <= 3.0
        align_report = _read_report(experiment, "train-align.json")
        steps_ok = align_report["steps"] <= 20000

        assert _dispatch_timed(experiment, ["eval-ppl", "--system", "audio"]) == 0
        assert _dispatch_timed(experiment, ["eval-cascade"]) == 0
        text_ppl = _read_report(experiment, "eval-ppl-text.json")["response_ppl"]
        audio_ppl = _read_report(experiment, "eval-ppl-audio.json")["response_ppl"]
        strata = _read_report(experiment, "eval-cascade.json")["strata"]
        mid = strata[1]  # the ~10-20% WER band
        cascade15_ppl = mid["cascade_response_ppl"]

        ratio_ok = audio_ppl <= 2.0 * text_ppl
        order_ok = text_ppl <= audio_ppl < cascade15_ppl
        wall = experiment["pipeline_seconds"] + experiment["eval_seconds"]
        budget_ok = wall <= 1800
        _report(6, corpus_ok and lm_ok and steps_ok and ratio_ok and order_ok and budget_ok,
                f"corpus {len(records)}, lm ppl {lm_report['valid_response_ppl']:.3f}, "
                f"align steps {align_report['steps']}, text {text_ppl:.3f} <= "
                f"audio {audio_ppl:.3f} < cascade@{mid['prompt_wer']:.0%} {cascade15_ppl:.3f}, "
                f"audio/text {audio_ppl / text_ppl:.2f} <= 2.0, wall {wall:.0f}s <= 1800s")


class TestCriterion07DegradationOrdering:
    def test_success_rates_across_strata(self, experiment):
        strata = _read_report(experiment, "eval-cascade.json")["strata"]
        wers = [s["prompt_wer"] for s in strata]
        cascade_sr = [s["cascade_success_rate"] for s in strata]
        audio_sr = [s["audio_success_rate"] for s in strata]
        non_increasing = all(a >= b for a, b in zip(cascade_sr, cascade_sr[1:]))
        e2e_wins_worst = audio_sr[-1] >= cascade_sr[-1]
        _report(7, non_increasing and e2e_wins_worst,
                f"WER {['%.2f' % w for w in wers]}, cascade SR {cascade_sr}, "
                f"audio SR {audio_sr}")


class TestCriterion08AlignmentMonotonicity:
    def test_heatmap_and_scores(self, experiment):
        assert _dispatch_timed(experiment, ["eval-align"]) == 0
        report = _read_report(experiment, f"eval-align-{pipeline.PROBE_ID}.json")
        shape_ok = report["cosine_shape"] == [40, 10]
        mean_ok = report["mean_monotonicity_heldout"] >= 0.6
        ppm = experiment["exp"] / "plots" / f"align-{pipeline.PROBE_ID}.ppm"
        sidecar = experiment["exp"] / "plots" / f"align-{pipeline.PROBE_ID}.json"
        blob = ppm.read_bytes()
        files_ok = blob.startswith(b"P6\n10 40\n255\n") and sidecar.exists()
        _report(8, shape_ok and mean_ok and files_ok,
                f"40x10 heatmap emitted; mean monotonicity "
                f"{report['mean_monotonicity_heldout']:.3f} >= 0.6 over 20 held-out")


class TestCriterion09DecodingEquivalences:
    def test_beam_one_equals_greedy_and_exhaustive_two_step(self):
        vocab = text.Vocabulary.from_alphabet("abc ")
        cfg = lm_mod.LMConfig(vocab_size=len(vocab), model_dim=16, num_layers=1,
                              num_heads=2, ffn_dim=32, max_context=64)
        params = lm_mod.init_lm_params(cfg, seed=909)
        rng = np.random.default_rng(909)
        agree = 0
        for _ in range(100):
            prompt = lm_mod.text_embeddings(nm.Tensor(rng.standard_normal((int(rng.integers(1, 5)), 16))))
            g = lm_mod.greedy_decode(params, prompt, vocab, max_tokens=6)
            b = lm_mod.beam_search_decode(params, prompt, vocab, beam=1, max_tokens=6)
            agree += g.ids == b.ids
        vocab3 = text.Vocabulary(("<eos>", "<pad>", "<unk>"))
        cfg3 = lm_mod.LMConfig(vocab_size=3, model_dim=8, num_layers=1, num_heads=2,
                               ffn_dim=16, max_context=16)
        p3 = lm_mod.init_lm_params(cfg3, seed=910)
        prompt = lm_mod.text_embeddings(nm.Tensor(rng.standard_normal((1, 8))))

        def row_logp(tokens):
            embeds = prompt
            if tokens:
                embeds = lm_mod.concat_embeddings([prompt, lm_mod.embed_tokens(p3, list(tokens))])
            row = lm_mod.forward_logits(p3, embeds).data[-1]
            e = np.exp(row - row.max())
            return np.log(e / e.sum())

        eos = vocab3.eos_id
        candidates = []
        for first in range(3):
            lp1 = float(row_logp(())[first])
            if first == eos:
                candidates.append((lp1, ()))
                continue
            for second in range(3):
                lp2 = lp1 + float(row_logp((first,))[second])
                tokens = (first,) if second == eos else (first, second)
                candidates.append((lp2 / 2, tokens))
        best = min(candidates, key=lambda c: (-c[0], c[1]))
        got = lm_mod.beam_search_decode(p3, prompt, vocab3, beam=10, max_tokens=2)
        exhaustive_ok = got.ids == best[1]
        _report(9, agree == 100 and exhaustive_ok,
                f"beam=1 == greedy on {agree}/100 prompts; beam=10 == exhaustive 2-step search")


class TestCriterion10WerOracle:
    def test_thousand_random_pairs(self):
        rng = np.random.default_rng(1010)
        words = ["a", "b", "c", "d", "e"]
        ok = True
        for _ in range(1000):
            ref = [words[i] for i in rng.integers(0, 5, size=rng.integers(1, 8))]
            hyp = [words[i] for i in rng.integers(0, 5, size=rng.integers(0, 8))]
            ok &= ctc_mod.wer(ref, hyp).errors == brute_edit_distance(ref, hyp)
        _report(10, ok, "1000 random pairs match the exhaustive-alignment edit distance exactly")


class TestCriterion11FormatRoundtrips:
    def test_bit_exact_roundtrips_and_rejection(self, tmp_path):
        rng = np.random.default_rng(1111)
        seq = FeatureSequence(rng.standard_normal((40, 80)).astype(np.float32))
        f1, f2 = tmp_path / "a.feat", tmp_path / "b.feat"
        save_features(f1, seq)
        save_features(f2, load_features(f1))
        feat_ok = f1.read_bytes() == f2.read_bytes()

        tensors = {"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)}
        c1, c2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ckpt.save_checkpoint(c1, "lm", {"x": 1}, tensors, step=3)
        meta, loaded = ckpt.load_checkpoint(c1)
        ckpt.save_checkpoint(c2, meta["kind"], meta["config"], loaded, meta["step"])
        ckpt_ok = c1.read_bytes() == c2.read_bytes()

        corrupt_feat = tmp_path / "c.feat"
        corrupt_feat.write_bytes(f1.read_bytes()[:-3])
        corrupt_ckpt = tmp_path / "c.ckpt"
        blob = bytearray(c1.read_bytes())
        blob[25] ^= 0x5A
        corrupt_ckpt.write_bytes(bytes(blob))
        rejected = 0
        for path, loader in ((corrupt_feat, load_features), (corrupt_ckpt, ckpt.load_checkpoint)):
            try:
                loader(path)
            except FormatError:
                rejected += 1
        _report(11, feat_ok and ckpt_ok and rejected == 2,
                "feature + checkpoint roundtrips bit-exact; corrupted files raise FormatError")
