"""Synthetic speech-feature generation, a log-mel frontend, and feature I/O.

Synthetic features live directly in filterbank space: each character owns a
fixed random spectral template, repeated for a jittered duration, wrapped in
silence, with optional additive noise and a per-utterance speaker shift.
The generator is bit-deterministic in (text, seed, config); noise stddev is
the corruption knob evaluation uses to emulate acoustic difficulty levels.

Feature file format (little-endian): magic "ACLF", u32 version=1,
u32 num_frames, u32 feature_dim, then num_frames*feature_dim float32
values, row-major.
"""

import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, FormatError

LOG_FLOOR = 1e-10  # epsilon under the log in the mel frontend

FEATURE_MAGIC = b"ACLF"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class FeatureSequence:
    """Acoustic feature frames: (num_frames, feature_dim) float32 matrix."""

    frames: np.ndarray
    frame_rate_ms: int = 10

    def __post_init__(self):
        arr = np.ascontiguousarray(self.frames, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DataError(f"feature matrix must be (frames >= 1, dim), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("feature matrix contains non-finite values")
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the deterministic synthesizer.

    frames_per_char is the nominal duration; each character's actual
    duration is frames_per_char plus an integer jitter drawn uniformly
    from [-duration_jitter, +duration_jitter].
    """

    feature_dim: int = 80
    template_seed: int = 1234
    frames_per_char: int = 8
    duration_jitter: int = 0
    noise_std: float = 0.0
    silence_frames: int = 0
    speaker_shift_scale: float = 0.0

    def __post_init__(self):
        if self.frames_per_char < 1:
            raise DataError("frames_per_char must be >= 1")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.duration_jitter < 0 or self.duration_jitter >= self.frames_per_char:
            raise DataError("duration_jitter must be in [0, frames_per_char)")


def with_noise(cfg: SynthConfig, noise_std: float) -> SynthConfig:
    return replace(cfg, noise_std=noise_std)


def char_template(ch: str, cfg: SynthConfig) -> np.ndarray:
    """The fixed spectral template of one character (unit-variance gaussian)."""
    key = zlib.crc32(f"{cfg.template_seed}:{ch}".encode("utf-8"))
    rng = np.random.Generator(np.random.PCG64(key))
    return rng.standard_normal(cfg.feature_dim)


def synthesize_features(text: str, seed: int, cfg: SynthConfig, alphabet: str | None = None) -> FeatureSequence:
    """Render text as a deterministic fake speech feature matrix.

    Per-character template blocks (durations jittered by ``seed``) are
    concatenated between leading/trailing silence, a speaker shift vector
    is added, then i.i.d. gaussian noise. Identical (text, seed, cfg)
    always yields bit-identical output.
    """
    if alphabet is not None:
        bad = sorted(set(text) - set(alphabet))
        if bad:
            raise DataError(f"characters outside the alphabet: {bad!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    blocks = [np.zeros((cfg.silence_frames, cfg.feature_dim))]
    for ch in text:
        dur = cfg.frames_per_char
        if cfg.duration_jitter:
            dur += int(rng.integers(-cfg.duration_jitter, cfg.duration_jitter + 1))
        blocks.append(np.tile(char_template(ch, cfg), (dur, 1)))
    blocks.append(np.zeros((cfg.silence_frames, cfg.feature_dim)))
    frames = np.concatenate(blocks, axis=0)
    if frames.shape[0] == 0:
        frames = np.zeros((1, cfg.feature_dim))
    if cfg.speaker_shift_scale:
        frames = frames + cfg.speaker_shift_scale * rng.standard_normal(cfg.feature_dim)
    if cfg.noise_std:
        frames = frames + cfg.noise_std * rng.standard_normal(frames.shape)
    return FeatureSequence(frames.astype(np.float32))


# --- log-mel frontend for real audio ----------------------------------------


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_matrix(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over the one-sided FFT bins: (n_mels, n_fft//2+1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def mel_center_frequencies(n_mels: int, sample_rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def log_mel_filterbank(
    pcm, sample_rate: int, n_mels: int = 80, win_ms: int = 25, hop_ms: int = 10
) -> FeatureSequence:
    """Log-mel features: Hann-windowed magnitude STFT -> mel bank -> log.

    Frame count is 1 + floor((N - win) / hop). No pre-emphasis (convention,
    not a requirement of the recipe).
    """
    pcm = np.asarray(pcm, dtype=np.float64)
    if sample_rate < 8000:
        raise DataError(f"sample_rate {sample_rate} too low (need >= 8000)")
    win = int(round(sample_rate * win_ms / 1000))
    hop = int(round(sample_rate * hop_ms / 1000))
    if pcm.ndim != 1 or pcm.size < win:
        raise DataError(f"signal of {pcm.size} samples is shorter than one {win}-sample window")
    num_frames = 1 + (pcm.size - win) // hop
    window = np.hanning(win)
    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    frames = np.lib.stride_tricks.sliding_window_view(pcm, win)[::hop][:num_frames]
    spectra = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))
    bank = mel_filterbank_matrix(n_mels, n_fft, sample_rate)
    mel = spectra @ bank.T
    feats = np.log(np.maximum(mel, LOG_FLOOR))
    return FeatureSequence(feats.astype(np.float32), frame_rate_ms=hop_ms)


# --- bit-exact feature file I/O ----------------------------------------------


def save_features(path, seq: FeatureSequence) -> None:
    header = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, seq.num_frames, seq.feature_dim)
    body = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(body)


def load_features(path) -> FeatureSequence:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FormatError("feature file truncated before header", offset=len(blob))
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}", offset=0)
    version, num_frames, dim = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}", offset=4)
    expected = 16 + 4 * num_frames * dim
    if len(blob) != expected:
        raise FormatError(
            f"feature payload has {len(blob) - 16} bytes, header declares {expected - 16}",
            offset=min(len(blob), expected),
        )
    frames = np.frombuffer(blob, dtype="<f4", offset=16).reshape(num_frames, dim)
    return FeatureSequence(frames.copy())


def read_feature_header(path) -> tuple[int, int, int]:
    """(version, num_frames, feature_dim) without loading the payload."""
    with open(path, "rb") as f:
        head = f.read(16)
    if len(head) < 16 or head[:4] != FEATURE_MAGIC:
        raise FormatError("not a feature file", offset=0)
    return struct.unpack("<III", head[4:16])
