"""Audio features: WAV input, STFT magnitudes, log-mel, pitch, voicing.

Analysis settings are fixed across the package: window 1024, hop 256,
FFT size 1024, 80 mel bins, no center padding, so a signal of length n
yields 1 + (n - 1024) // 256 frames. All spectral math runs in float64
and results are returned as float32 feature matrices.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WIN_LENGTH = 1024
HOP_LENGTH = 256
N_FFT = 1024
N_MELS = 80
LOW_BAND_BINS = 20
LOG_FLOOR = 1e-5

F0_MIN = 50.0
F0_MAX = 600.0
NAC_THRESHOLD = 0.5
RMS_THRESHOLD = 0.01
SUBHARMONIC_TIE = 0.97


class UnsupportedWavError(ValueError):
    """The file exists but is not mono 16-bit PCM WAV."""


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1)
    sample_rate: int


@dataclass
class MelSpectrogram:
    """Log-mel frames (T x 80, float32) plus the settings that made them."""

    frames: np.ndarray
    sample_rate: int
    hop_length: int = HOP_LENGTH
    win_length: int = WIN_LENGTH


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file.

    Parameters
    ----------
    path : str or Path
        File to read. Missing files raise FileNotFoundError; files that
        are not mono 16-bit PCM raise UnsupportedWavError naming the
        offending property.

    Returns
    -------
    Waveform
        Samples scaled by 1/32768 into [-1, 1), float64.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            comp = fh.getcomptype()
            rate = fh.getframerate()
            frames = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise UnsupportedWavError(f"not a readable WAV file: {exc}") from exc
    if comp != "NONE":
        raise UnsupportedWavError(f"unsupported compression type {comp!r}")
    if channels != 1:
        raise UnsupportedWavError(f"unsupported channel count {channels}, need mono")
    if width != 2:
        raise UnsupportedWavError(f"unsupported sample width {8 * width} bit, need 16-bit PCM")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def frame_count(n_samples: int, win_length: int = WIN_LENGTH, hop_length: int = HOP_LENGTH) -> int:
    if n_samples < win_length:
        return 0
    return 1 + (n_samples - win_length) // hop_length


def frame_signal(samples: np.ndarray, win_length: int = WIN_LENGTH, hop_length: int = HOP_LENGTH) -> np.ndarray:
    """Slice a signal into (T, win_length) frames, no padding."""
    t = frame_count(len(samples), win_length, hop_length)
    if t == 0:
        return np.zeros((0, win_length), dtype=np.float64)
    idx = np.arange(win_length)[None, :] + hop_length * np.arange(t)[:, None]
    return np.asarray(samples, dtype=np.float64)[idx]


def stft_magnitude(wav: Waveform) -> np.ndarray:
    """Magnitude spectrogram, shape (T, 513).

    Periodic Hann window, one-sided rfft of each un-centered frame.
    """
    frames = frame_signal(wav.samples)
    window = np.hanning(WIN_LENGTH + 1)[:-1]
    spec = np.fft.rfft(frames * window[None, :], n=N_FFT, axis=1)
    return np.abs(spec)


def _hz_to_mel(freq):
    """Mel scale with a 3/200 linear region below 1 kHz, log above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = freq / f_sp
    above = freq >= min_log_hz
    mel = np.where(above, min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep, mel)
    return mel


def _mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    freq = mel * f_sp
    above = mel >= min_log_mel
    return np.where(above, min_log_hz * np.exp(logstep * (mel - min_log_mel)), freq)


def mel_break_points(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    """The n_mels + 2 edge frequencies (Hz) of the triangular filters."""
    mels = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return _mel_to_hz(mels)


def mel_bin_centers(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    return mel_break_points(sample_rate, n_mels)[1:-1]


def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1).

    Filters are area-normalized (each scaled by 2 / bandwidth) so that
    outputs approximate spectral density rather than growing with
    filter width.
    """
    pts = mel_break_points(sample_rate, n_mels)
    freqs = np.arange(n_fft // 2 + 1, dtype=np.float64) * sample_rate / n_fft
    fb = np.zeros((n_mels, freqs.size), dtype=np.float64)
    for m in range(n_mels):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / max(center - lo, 1e-12)
        down = (hi - freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    enorm = 2.0 / (pts[2:] - pts[:-2])
    fb *= enorm[:, None]
    return fb


def mel_spectrogram(wav: Waveform) -> MelSpectrogram:
    """Log-mel features of a waveform.

    The filterbank is applied to STFT magnitudes and the result is
    log-compressed with floor 1e-5: log(max(fb @ |X|, 1e-5)).
    """
    mags = stft_magnitude(wav)
    fb = mel_filterbank(wav.sample_rate)
    mel = np.log(np.maximum(mags @ fb.T, LOG_FLOOR))
    return MelSpectrogram(frames=mel.astype(np.float32), sample_rate=wav.sample_rate)


def low_band(mel: np.ndarray, bins: int = LOW_BAND_BINS) -> np.ndarray:
    """First `bins` mel channels of a (T, 80) matrix."""
    return np.asarray(mel)[:, :bins]


def estimate_f0_vuv(
    wav: Waveform,
    nac_threshold: float = NAC_THRESHOLD,
    rms_threshold: float = RMS_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame pitch and voicing from normalized autocorrelation.

    Parameters
    ----------
    wav : Waveform
        Input signal; frames follow the package's 1024/256 grid.
    nac_threshold : float
        A frame is voiced only if its peak normalized autocorrelation
        over the 50-600 Hz lag range reaches this value.
    rms_threshold : float
        And only if its RMS reaches this value.

    Returns
    -------
    f0 : np.ndarray
        (T,) float64; 0 where unvoiced, else a value clamped into
        [50, 600] Hz after parabolic refinement of the peak lag.
    vuv : np.ndarray
        (T,) bool voicing flags.

    Notes
    -----
    The normalized autocorrelation of frame x at lag k uses only the
    overlapping portions: r(k) = sum(x[:n-k] x[k:]) /
    sqrt(sum(x[:n-k]^2) sum(x[k:]^2)), computed in float64, so the
    estimate is invariant to rescaling the signal (RMS gating aside).
    A periodic frame peaks near 1 at every multiple of its true lag, so
    among lags within SUBHARMONIC_TIE of the peak the shortest one is
    taken; plain argmax would otherwise drop octaves on clean tones.
    """
    frames = frame_signal(wav.samples)
    t, n = frames.shape
    sr = wav.sample_rate
    lag_min = int(np.ceil(sr / F0_MAX))
    lag_max = int(np.floor(sr / F0_MIN))
    lag_max = min(lag_max, n - 2)
    lags = np.arange(lag_min, lag_max + 1)

    f0 = np.zeros(t, dtype=np.float64)
    vuv = np.zeros(t, dtype=bool)
    if t == 0:
        return f0, vuv

    rms = np.sqrt(np.mean(frames * frames, axis=1))
    sq = frames * frames
    # Prefix sums give the overlap energies for every lag at once.
    csum = np.concatenate([np.zeros((t, 1)), np.cumsum(sq, axis=1)], axis=1)

    nac = np.zeros((t, lags.size), dtype=np.float64)
    for j, k in enumerate(lags):
        num = np.sum(frames[:, : n - k] * frames[:, k:], axis=1)
        e1 = csum[:, n - k]
        e2 = csum[:, n] - csum[:, k]
        denom = np.sqrt(e1 * e2)
        nac[:, j] = np.where(denom > 0, num / np.maximum(denom, 1e-300), 0.0)

    peak = nac.max(axis=1)
    vuv = (peak >= nac_threshold) & (rms >= rms_threshold)

    for i in np.nonzero(vuv)[0]:
        # Candidates are local maxima only; a flat bar would catch the
        # main lobe's shoulder. peak >= nac_threshold > 0 here, so the
        # relative bar is sound, and the argmax itself always qualifies.
        row = nac[i]
        left = np.concatenate([[-np.inf], row[:-1]])
        right = np.concatenate([row[1:], [-np.inf]])
        is_peak = (row >= left) & (row >= right)
        good = np.flatnonzero(is_peak & (row >= SUBHARMONIC_TIE * peak[i]))
        j = int(good[0])
        lag = float(lags[j])
        if 0 < j < lags.size - 1:
            left, mid, right = nac[i, j - 1], nac[i, j], nac[i, j + 1]
            denom = left - 2.0 * mid + right
            if abs(denom) > 1e-12:
                delta = 0.5 * (left - right) / denom
                lag += float(np.clip(delta, -0.5, 0.5))
        f0[i] = float(np.clip(sr / lag, F0_MIN, F0_MAX))
    return f0, vuv
