"""WAV decoding and the frame-level feature stack.

One coherent pipeline is fixed here:

* frames of ``n_fft`` samples every ``hop`` samples, no centre padding;
* per-frame DC offset removal, then a periodic Hann window;
* power spectrum, HTK triangular mel filterbank, ``log(max(E, floor))``;
* orthonormal DCT-II, first ``n_mfcc`` coefficients;
* regression deltas with replicated edges, stacked as MFCC | delta | delta2.

Pitch and energy series use the same framing so their lengths match the
MFCC frame count.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

from .errors import FormatError, InputTooShortError, ParameterError

FEATURE_KINDS = ("mfcc", "delta", "delta2", "stacked", "pitch", "energy")


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise FormatError("sample rate must be positive")
        if len(self.samples) == 0:
            raise FormatError("audio clip is empty")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 512
    hop: int = 256
    sample_rate: int = 22050
    n_mfcc: int = 40
    n_mels: int = 64
    dct_type: int = 2
    dct_norm: str = "ortho"
    delta_window: int = 2
    log_floor: float = 1e-10
    pitch_fmin: float = 50.0
    pitch_fmax: float = 500.0
    voicing_threshold: float = 0.3
    energy_eps: float = 1e-10

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ParameterError("hop must satisfy 0 < hop <= n_fft")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise ParameterError("n_mfcc must satisfy 0 < n_mfcc <= n_mels")
        if self.dct_type != 2 or self.dct_norm != "ortho":
            raise ParameterError("only the orthonormal DCT-II is supported")
        if self.delta_window < 1:
            raise ParameterError("delta_window must be >= 1")
        if not 0 < self.pitch_fmin < self.pitch_fmax:
            raise ParameterError("pitch range must satisfy 0 < fmin < fmax")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ParameterError(f"unknown feature kind {self.kind!r}")
        if self.values.ndim != 2:
            raise ParameterError("feature values must be a frames x dims matrix")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


# -- WAV I/O -------------------------------------------------------------------


def decode_wav(data: bytes) -> AudioClip:
    """Decode 16-bit PCM RIFF/WAVE bytes; stereo is averaged to mono."""
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"not a PCM WAV file: {exc}") from None
    if width != 2:
        raise FormatError(f"only 16-bit PCM is supported (got {8 * width}-bit)")
    if nframes == 0 or not raw:
        raise FormatError("WAV data chunk is empty")
    if len(raw) != nframes * channels * width:
        raise FormatError("WAV data chunk is truncated")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm.reshape(-1, channels).mean(axis=1)
    return AudioClip(pcm, rate)


def encode_wav(clip: AudioClip) -> bytes:
    """Mono 16-bit PCM encoding (values clipped to the representable range)."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(pcm.tobytes())
    return buf.getvalue()


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def write_wav(path, clip: AudioClip) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(clip))


# -- framing ---------------------------------------------------------------------


def frame_count(length: int, n_fft: int, hop: int) -> int:
    if length < n_fft:
        return 0
    return 1 + (length - n_fft) // hop


def frame_signal(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    n = frame_count(len(samples), n_fft, hop)
    if n == 0:
        raise InputTooShortError(f"clip of {len(samples)} samples is shorter than one "
                                 f"{n_fft}-sample frame")
    view = np.lib.stride_tricks.sliding_window_view(samples, n_fft)[::hop]
    return np.array(view[:n], dtype=np.float64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """HTK-style triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _power_frames(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    frames = frame_signal(clip.samples, cfg.n_fft, cfg.hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    frames = frames * get_window("hann", cfg.n_fft, fftbins=True)
    return np.abs(rfft(frames, axis=1)) ** 2


def mfcc(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    power = _power_frames(clip, cfg)
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, clip.sample_rate)
    log_mel = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    coeffs = dct(log_mel, type=2, norm="ortho", axis=1)[:, :cfg.n_mfcc]
    return FeatureMatrix(coeffs, "mfcc")


def delta(f: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """Regression-slope delta over +-``window`` frames with replicated edges."""
    if window < 1:
        raise ParameterError("delta window must be >= 1")
    x = f.values
    if x.shape[0] < 1:
        raise ParameterError("delta needs at least one frame")
    padded = np.pad(x, ((window, window), (0, 0)), mode="edge")
    t = x.shape[0]
    num = np.zeros_like(x)
    for n in range(1, window + 1):
        num += n * (padded[window + n:window + n + t] - padded[window - n:window - n + t])
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    kind = "delta2" if f.kind == "delta" else "delta"
    return FeatureMatrix(num / denom, kind)


def mfcc_stack(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """MFCC, delta and delta-delta concatenated columnwise (frames x 3*n_mfcc)."""
    base = mfcc(clip, cfg)
    d1 = delta(base, cfg.delta_window)
    d2 = delta(d1, cfg.delta_window)
    return FeatureMatrix(np.hstack([base.values, d1.values, d2.values]), "stacked")


# -- prosodic series ---------------------------------------------------------------


def _normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """r[t, k] = sum x[n] x[n+k] / sqrt(sum x[n]^2 * sum x[n+k]^2) over the overlap."""
    n = frames.shape[1]
    spec = np.fft.rfft(frames, 2 * n, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), axis=1)[:, :max_lag + 1]
    sq = np.cumsum(frames ** 2, axis=1)
    total = sq[:, -1:]
    lags = np.arange(max_lag + 1)
    head = np.concatenate([total, total - sq[:, :max_lag]], axis=1)  # energy of x[k:]
    tail = np.take(sq, n - 1 - lags, axis=1)                          # energy of x[:n-k]
    denom = np.sqrt(head * tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, acf / np.where(denom > 0, denom, 1.0), 0.0)
    return r


def pitch_series(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Per-frame fundamental frequency in Hz (0 for unvoiced frames).

    The normalised autocorrelation is searched for local maxima between
    ``sr / pitch_fmax`` and ``min(sr / pitch_fmin, n_fft // 2)`` samples of lag;
    the half-frame cap keeps at least ``n_fft / 2`` overlapping samples so
    noise peaks stay well under the voicing threshold.  With the default
    512-sample frame at 22.05 kHz this puts the effective floor near 86 Hz.
    The shortest lag whose peak reaches 85 % of the best peak is refined by
    parabolic interpolation.
    """
    frames = frame_signal(clip.samples, cfg.n_fft, cfg.hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    sr = clip.sample_rate
    lo = max(2, int(np.floor(sr / cfg.pitch_fmax)))
    hi = min(int(np.ceil(sr / cfg.pitch_fmin)), cfg.n_fft // 2)
    r = _normalized_autocorrelation(frames, hi + 1)
    out = np.zeros(frames.shape[0])
    for t in range(frames.shape[0]):
        if not np.any(frames[t]):
            continue
        seg = r[t]
        lags = np.arange(lo, hi + 1)
        is_peak = (seg[lags] > seg[lags - 1]) & (seg[lags] >= seg[lags + 1])
        peaks = lags[is_peak]
        if peaks.size == 0:
            continue
        best = seg[peaks].max()
        if best < cfg.voicing_threshold:
            continue
        k = int(peaks[np.argmax(seg[peaks] >= 0.85 * best)])
        a, b, c = seg[k - 1], seg[k], seg[k + 1]
        curvature = a - 2 * b + c
        shift = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
        out[t] = sr / (k + shift)
    return FeatureMatrix(out[:, None], "pitch")


def energy_series(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    frames = frame_signal(clip.samples, cfg.n_fft, cfg.hop)
    return FeatureMatrix(np.log((frames ** 2).sum(axis=1) + cfg.energy_eps)[:, None], "energy")


# -- outlier handling ------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "FeatureStats":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return cls(rows.mean(axis=0), rows.std(axis=0))

    def standardize(self, x: np.ndarray) -> np.ndarray:
        sd = np.where(self.sd > 0, self.sd, 1.0)
        return (x - self.mean) / sd


def remove_outliers(f: FeatureMatrix, stats: FeatureStats, limit: float = 3.0) -> FeatureMatrix:
    """Clip values further than ``limit`` sd from the column mean; zero-sd columns pass."""
    lo = stats.mean - limit * stats.sd
    hi = stats.mean + limit * stats.sd
    clipped = np.clip(f.values, lo, hi)
    out = np.where(stats.sd > 0, clipped, f.values)
    return FeatureMatrix(out, f.kind)
