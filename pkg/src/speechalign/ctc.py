"""CTC loss via the forward-backward dynamic program, greedy decoding, WER.

The loss runs entirely in log space over the blank-augmented state lattice
(blank id 0, states [blank, l1, blank, l2, ..., blank]). Its gradient with
respect to the per-frame log-probabilities is the negative state-occupancy
posterior, registered on the autodiff tape as a single custom operation.
"""

import string
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import DataError, UsageError

BLANK_ID = 0

NEG_INF = -np.inf


@dataclass(frozen=True)
class CtcTarget:
    """Label id sequence without blanks."""

    labels: tuple[int, ...]

    def __post_init__(self):
        if any(l == BLANK_ID for l in self.labels):
            raise DataError(f"CTC target may not contain the blank id {BLANK_ID}")

    def __len__(self) -> int:
        return len(self.labels)


def min_frames_required(target: CtcTarget) -> int:
    """Shortest frame count that can emit the target (repeats force blanks)."""
    repeats = sum(1 for a, b in zip(target.labels, target.labels[1:]) if a == b)
    return len(target.labels) + repeats


def ctc_feasible(num_frames: int, target: CtcTarget) -> bool:
    return num_frames >= min_frames_required(target)


def _expand(target: CtcTarget) -> np.ndarray:
    ext = np.full(2 * len(target.labels) + 1, BLANK_ID, dtype=np.int64)
    ext[1::2] = target.labels
    return ext


def _forward_lattice(lp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Alpha recursion; alpha[t, s] includes the emission at frame t."""
    T, S = lp.shape[0], ext.shape[0]
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[2:] = (ext[2:] != BLANK_ID) & (ext[2:] != ext[:-2])
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        skip = np.where(skip_ok, skip, NEG_INF)
        alpha[t] = _logsumexp3(stay, step, skip) + lp[t, ext]
    return alpha


def _backward_lattice(lp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Beta recursion; beta[t, s] includes the emission at frame t."""
    T, S = lp.shape[0], ext.shape[0]
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[: S - 2] = (ext[: S - 2] != BLANK_ID) & (ext[: S - 2] != ext[2:])
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        skip = np.where(skip_ok, skip, NEG_INF)
        beta[t] = _logsumexp3(stay, step, skip) + lp[t, ext]
    return beta


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(np.isfinite(m), out, NEG_INF)


def ctc_loss(log_probs: nm.Tensor, target: CtcTarget) -> nm.Tensor:
    """-log P(target | log_probs) summed over all blank-augmented alignments.

    ``log_probs`` is (T, V+1) with log-softmax-normalized rows and the blank
    in column 0. Infeasible targets (too few frames) yield a +inf loss that
    records nothing on the tape; use ``ctc_feasible`` to screen batches.
    """
    lp = log_probs.data
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise DataError(f"log_probs must be (T >= 1, V+1), got {lp.shape}")
    if len(target) == 0:
        raise DataError("empty CTC target")
    if max(target.labels) >= lp.shape[1]:
        raise DataError("CTC target label outside the logit vocabulary")
    if not ctc_feasible(lp.shape[0], target):
        return nm.Tensor(np.inf)

    ext = _expand(target)
    alpha = _forward_lattice(lp, ext)
    S = ext.shape[0]
    tail = alpha[-1, S - 2 :] if S > 1 else alpha[-1, S - 1 :]
    m = tail.max()
    log_z = m + np.log(np.exp(tail - m).sum())

    def grad_fn(g):
        beta = _backward_lattice(lp, ext)
        # state occupancy posterior; alpha+beta double-count the emission term
        occ = alpha + beta - lp[:, ext] - log_z
        grad = np.zeros_like(lp)
        np.add.at(grad.T, ext, np.exp(occ).T)
        return (-g * grad,)

    return nm.custom_op(-log_z, (log_probs,), grad_fn)


def ctc_brute_force_loss(log_probs: np.ndarray, target: CtcTarget) -> float:
    """Oracle: enumerate every frame path and sum those that collapse to target."""
    T, V = log_probs.shape
    want = list(target.labels)
    total = NEG_INF
    path = [0] * T

    def collapse(p):
        out = []
        prev = None
        for s in p:
            if s != prev and s != BLANK_ID:
                out.append(s)
            prev = s
        return out

    def rec(t, acc):
        nonlocal total
        if t == T:
            if collapse(path) == want:
                total = np.logaddexp(total, acc)
            return
        for s in range(V):
            path[t] = s
            rec(t + 1, acc + log_probs[t, s])

    rec(0, 0.0)
    return float(-total)


def ctc_greedy_decode(log_probs: np.ndarray) -> list[int]:
    """Per-frame argmax, collapse repeats, strip blanks. Ties pick the lowest id."""
    best = np.argmax(log_probs, axis=1)
    out: list[int] = []
    prev = -1
    for s in best:
        if s != prev and s != BLANK_ID:
            out.append(int(s))
        prev = s
    return out


# --- word error rate ----------------------------------------------------------

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_words(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class WerResult:
    rate: float
    substitutions: int
    insertions: int
    deletions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def wer(reference: list[str], hypothesis: list[str]) -> WerResult:
    """Word error rate from a minimum-edit-distance alignment.

    Backtrace preference on cost ties: match/substitute, then deletion,
    then insertion (documented; only the counts split depends on it, the
    rate does not).
    """
    if not reference:
        raise UsageError("WER needs a non-empty reference")
    R, H = len(reference), len(hypothesis)
    dist = np.zeros((R + 1, H + 1), dtype=np.int64)
    dist[:, 0] = np.arange(R + 1)
    dist[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = dist[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)
    subs = dels = inss = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            subs += reference[i - 1] != hypothesis[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            inss += 1
            j -= 1
    return WerResult((subs + inss + dels) / R, subs, inss, dels)


def wer_strings(reference: str, hypothesis: str) -> WerResult:
    return wer(normalize_words(reference), normalize_words(hypothesis))
