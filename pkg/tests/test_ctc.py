import math

import numpy as np
import pytest

from speechalign import ctc
from speechalign import numerics as nm
from speechalign.errors import DataError, UsageError

from helpers import fd_gradcheck


def random_log_probs(rng, T, V):
    logits = rng.standard_normal((T, V))
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def brute_edit_distance(ref, hyp):
    """Independent oracle: plain recursion over edit operations."""

    def rec(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        if (i, j) in memo:
            return memo[(i, j)]
        best = min(
            rec(i + 1, j + 1) + (ref[i] != hyp[j]),
            rec(i + 1, j) + 1,
            rec(i, j + 1) + 1,
        )
        memo[(i, j)] = best
        return best

    memo = {}
    return rec(0, 0)


class TestCtcLoss:
    def test_single_frame_single_label(self):
        lp = random_log_probs(np.random.default_rng(0), 1, 4)
        loss = ctc.ctc_loss(nm.Tensor(lp), ctc.CtcTarget((2,)))
        assert math.isclose(loss.item(), -lp[0, 2], rel_tol=1e-12)

    def test_two_frames_formula(self):
        lp = random_log_probs(np.random.default_rng(1), 2, 3)
        p = np.exp(lp)
        a, blank = 1, ctc.BLANK_ID
        want = -math.log(p[0, a] * p[1, a] + p[0, a] * p[1, blank] + p[0, blank] * p[1, a])
        got = ctc.ctc_loss(nm.Tensor(lp), ctc.CtcTarget((a,))).item()
        assert math.isclose(got, want, rel_tol=1e-10)

    def test_repeat_needs_blank(self):
        lp = random_log_probs(np.random.default_rng(2), 2, 3)
        loss = ctc.ctc_loss(nm.Tensor(lp), ctc.CtcTarget((1, 1)))
        assert math.isinf(loss.item())
        assert not ctc.ctc_feasible(2, ctc.CtcTarget((1, 1)))
        assert ctc.ctc_feasible(3, ctc.CtcTarget((1, 1)))

    def test_blank_in_target_rejected(self):
        with pytest.raises(DataError):
            ctc.CtcTarget((0, 1))

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            T = int(rng.integers(1, 7))
            V = int(rng.integers(2, 5))
            L = int(rng.integers(1, 4))
            target = ctc.CtcTarget(tuple(int(v) for v in rng.integers(1, V, size=L)))
            lp = random_log_probs(rng, T, V)
            got = ctc.ctc_loss(nm.Tensor(lp), target).item()
            want = ctc.ctc_brute_force_loss(lp, target)
            if math.isinf(want):
                assert math.isinf(got)
            else:
                assert abs(got - want) <= 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            T, V = 5, 4
            target = ctc.CtcTarget(tuple(int(v) for v in rng.integers(1, V, size=2)))
            x = nm.Tensor(rng.standard_normal((T, V)), requires_grad=True)

            def f(x_):
                return ctc.ctc_loss(nm.log_softmax(x_, axis=-1), target)

            fd_gradcheck(f, [x], rtol=1e-5)


class TestGreedyDecode:
    def test_collapse_rule(self):
        # argmax trace [blank, a, a, blank, b] -> "ab"
        lp = np.full((5, 3), -10.0)
        for t, s in enumerate([0, 1, 1, 0, 2]):
            lp[t, s] = 0.0
        assert ctc.ctc_greedy_decode(lp) == [1, 2]

    def test_repeats_collapse(self):
        lp = np.full((3, 2), -10.0)
        lp[:, 1] = 0.0
        assert ctc.ctc_greedy_decode(lp) == [1]

    def test_blank_separated_repeat_survives(self):
        lp = np.full((3, 2), -10.0)
        for t, s in enumerate([1, 0, 1]):
            lp[t, s] = 0.0
        assert ctc.ctc_greedy_decode(lp) == [1, 1]

    def test_never_emits_blank_and_ties_pick_lowest(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            lp = rng.standard_normal((8, 4))
            out = ctc.ctc_greedy_decode(lp)
            assert ctc.BLANK_ID not in out
        tie = np.zeros((1, 3))
        assert ctc.ctc_greedy_decode(tie) == []  # all equal -> argmax 0 = blank


class TestWer:
    def test_identical(self):
        assert ctc.wer(["a", "b"], ["a", "b"]).rate == 0.0

    def test_single_substitution(self):
        r = ctc.wer(["a", "b", "c"], ["a", "x", "c"])
        assert r.rate == pytest.approx(1 / 3)
        assert (r.substitutions, r.insertions, r.deletions) == (1, 0, 0)

    def test_empty_hypothesis_all_deletions(self):
        r = ctc.wer(["a", "b", "c", "d"], [])
        assert r.rate == 1.0
        assert r.deletions == 4

    def test_empty_reference_rejected(self):
        with pytest.raises(UsageError):
            ctc.wer([], ["a"])

    def test_matches_recursive_oracle(self):
        rng = np.random.default_rng(6)
        words = ["a", "b", "c", "d"]
        for _ in range(300):
            ref = [words[i] for i in rng.integers(0, 4, size=rng.integers(1, 7))]
            hyp = [words[i] for i in rng.integers(0, 4, size=rng.integers(0, 7))]
            assert ctc.wer(ref, hyp).errors == brute_edit_distance(ref, hyp)

    def test_appending_error_word_never_decreases_distance(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            ref = ["w%d" % i for i in rng.integers(0, 5, size=rng.integers(1, 6))]
            hyp = ["w%d" % i for i in rng.integers(0, 5, size=rng.integers(0, 6))]
            base = ctc.wer(ref, hyp).errors
            worse = ctc.wer(ref, hyp + ["zzz"]).errors
            assert worse >= base

    def test_normalization(self):
        assert ctc.normalize_words("The CAT, sat!") == ["the", "cat", "sat"]
        r = ctc.wer_strings("the cat sat", "The cat   sat.")
        assert r.rate == 0.0
