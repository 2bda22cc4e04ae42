"""MFCC front-end, clip length normalisation, additive noise and WAV IO."""

import math
import wave
from dataclasses import asdict, dataclass

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

SAMPLE_RATE = 16000
CLIP_SECONDS = 1.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("audio clips are single-channel (1-D)")
        if not np.all(np.isfinite(s)):
            raise ValueError("audio samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class MfccConfig:
    window_ms: float = 30.0
    shift_ms: float = 10.0
    n_mels: int = 40
    n_coeffs: int = 40
    fft_size: int = 512
    log_floor: float = 1e-10
    pre_emphasis: float = 0.0

    def __post_init__(self):
        if self.n_coeffs > self.n_mels:
            raise ValueError("n_coeffs must not exceed n_mels")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def window_samples(self, sample_rate=SAMPLE_RATE):
        return int(round(self.window_ms * sample_rate / 1000.0))

    def shift_samples(self, sample_rate=SAMPLE_RATE):
        return int(round(self.shift_ms * sample_rate / 1000.0))

    def to_dict(self):
        return asdict(self)


def fix_length(clip, seconds=CLIP_SECONDS):
    """Truncate or zero-pad ``clip`` at the end to exactly ``seconds`` long."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    target = int(round(seconds * clip.sample_rate))
    s = clip.samples
    if len(s) >= target:
        out = s[:target].copy()
    else:
        out = np.concatenate([s, np.zeros(target - len(s))])
    return AudioClip(out, clip.sample_rate)


def num_frames(length, window, shift):
    if length < window:
        raise ValueError(f"clip of {length} samples is shorter than one window ({window})")
    return 1 + (length - window) // shift


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fft_size, sample_rate, fmin=0.0, fmax=None):
    """Triangular filters on the HTK mel scale, shape ``(n_mels, fft_size//2 + 1)``.

    Triangles are evaluated at bin centre frequencies rather than snapped to
    bins, so every filter covers at least one bin at the default settings.
    """
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(samples, window, shift):
    n = num_frames(len(samples), window, shift)
    idx = np.arange(window)[None, :] + shift * np.arange(n)[:, None]
    return samples[idx]


def mfcc(clip, cfg=MfccConfig()):
    """Compute an ``(frames, n_coeffs)`` MFCC matrix.

    framing -> Hann window -> |rfft| -> mel filterbank -> log(max(e, floor))
    -> orthonormal DCT-II -> first ``n_coeffs`` coefficients.
    """
    sr = clip.sample_rate
    win, hop = cfg.window_samples(sr), cfg.shift_samples(sr)
    if cfg.fft_size < win:
        raise ValueError(f"fft_size {cfg.fft_size} is smaller than the window ({win})")
    x = clip.samples
    if cfg.pre_emphasis:
        x = np.append(x[:1], x[1:] - cfg.pre_emphasis * x[:-1])
    frames = frame_signal(x, win, hop) * get_window("hann", win, fftbins=True)
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    fb = mel_filterbank(cfg.n_mels, cfg.fft_size, sr)
    energies = spectrum @ fb.T
    log_mel = np.log(np.maximum(energies, cfg.log_floor))
    return dct(log_mel, type=2, axis=1, norm="ortho")[:, : cfg.n_coeffs]


def signal_power(x):
    return float(np.mean(np.square(x))) if len(x) else 0.0


def add_noise(clip, noise, snr_db, seed):
    """Mix ``noise`` into ``clip`` at the requested signal-to-noise ratio.

    The noise is tiled when shorter than the clip; the segment offset is drawn
    from ``seed``. ``snr_db = math.inf`` returns the clip unchanged.
    """
    if clip.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: clip {clip.sample_rate} Hz, noise {noise.sample_rate} Hz"
        )
    if math.isinf(snr_db) and snr_db > 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n = len(clip)
    src = noise.samples
    if len(src) == 0:
        raise ValueError("noise clip is empty")
    if len(src) < n:
        src = np.tile(src, -(-n // len(src)))
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(src) - n + 1))
    segment = src[offset : offset + n]
    p_noise = signal_power(segment)
    if p_noise == 0.0:
        raise ValueError("noise segment is silent; cannot reach a finite SNR")
    gain = math.sqrt(signal_power(clip.samples) / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(clip.samples + gain * segment, clip.sample_rate)


def read_wav(path):
    """Read a mono 16 kHz 16-bit PCM WAV file into an ``AudioClip``."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, count = (
                w.getnchannels(),
                w.getsampwidth(),
                w.getframerate(),
                w.getnframes(),
            )
            raw = w.readframes(count)
    except wave.Error as exc:
        raise ValueError(f"{path}: not a PCM (format tag 1) WAV file: {exc}") from exc
    except EOFError as exc:
        raise ValueError(f"{path}: truncated WAV header") from exc
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(pcm, rate)


def write_wav(path, clip):
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def load_features(path, cfg=MfccConfig()):
    """Features for one manifest entry: ``.npy`` is taken as-is, WAV is converted."""
    path = str(path)
    if path.endswith(".npy"):
        feats = np.load(path)
        if feats.ndim != 2:
            raise ValueError(f"{path}: feature matrix must be 2-D, got {feats.shape}")
        return feats.astype(np.float64)
    return mfcc(fix_length(read_wav(path)), cfg)
