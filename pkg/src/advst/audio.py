"""Differentiable audio building blocks and defense transforms.

All core operations accept either a numpy array or a torch tensor and
return the same kind, so the same code path serves plain signal
processing and the attack optimization graph. Everything runs in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import ConfigurationError, InvalidInputError, UnsupportedOperationError

DEFAULT_SAMPLE_RATE = 16000


def _to_tensor(x):
    """Return (tensor, convert_back) where convert_back restores the input kind."""
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def _from_tensor(t, was_numpy):
    return t.detach().numpy() if was_numpy else t


@dataclass
class Waveform:
    """Mono audio in [-1, 1]; clipping is applied only at write-out."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise InvalidInputError("waveform must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ConfigurationError("sample rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass
class PerturbationBudget:
    """L-inf bound plus the frequency band the perturbation may occupy."""

    epsilon: float = 0.1
    band_low_hz: float = 1000.0
    band_high_hz: float = 4000.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 <= self.band_low_hz < self.band_high_hz:
            raise ConfigurationError("band must satisfy 0 <= low < high")

    def validate_for_rate(self, sample_rate_hz):
        if self.band_high_hz >= sample_rate_hz / 2:
            raise ConfigurationError(
                f"band_high_hz={self.band_high_hz} must be below Nyquist "
                f"({sample_rate_hz / 2})"
            )


_DEFENSE_KINDS = {"lowpass", "codec", "noise", "quantize", "resample"}
_DEFENSE_PARAM = {
    "lowpass": "cutoff_hz",
    "codec": "bitrate_kbps",
    "noise": "snr_db",
    "quantize": "bits",
    "resample": "target_rate_hz",
}
_DEFENSE_DEFAULTS = {
    "cutoff_hz": 6000.0,
    "bitrate_kbps": 64.0,
    "snr_db": 64.0,
    "bits": 8,
    "target_rate_hz": 12000,
}


@dataclass
class DefenseSpec:
    kind: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _DEFENSE_KINDS:
            raise ConfigurationError(f"unknown defense kind: {self.kind!r}")
        key = _DEFENSE_PARAM[self.kind]
        self.parameters = dict(self.parameters)
        self.parameters.setdefault(key, _DEFENSE_DEFAULTS[key])
        if self.parameters[key] <= 0:
            raise ConfigurationError(f"{key} must be positive")

    @property
    def value(self):
        return self.parameters[_DEFENSE_PARAM[self.kind]]


def project_perturbation(delta_raw, budget):
    """Squash a raw perturbation into (-eps, eps) via eps * tanh(.)."""
    t, was_np = _to_tensor(delta_raw)
    if not torch.all(torch.isfinite(t)):
        raise InvalidInputError("delta_raw contains non-finite values")
    # tanh reaches 1.0 exactly in float64; shrink a hair to keep |out| < eps strict
    return _from_tensor(budget.epsilon * (1.0 - 1e-12) * torch.tanh(t), was_np)


def bandpass(w, budget, sample_rate_hz=DEFAULT_SAMPLE_RATE):
    """Zero all DFT bins outside [band_low, band_high]. Linear, idempotent."""
    budget.validate_for_rate(sample_rate_hz)
    t, was_np = _to_tensor(w)
    if t.numel() < 2:
        raise InvalidInputError("bandpass needs at least 2 samples")
    n = t.numel()
    freqs = torch.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    mask = ((freqs >= budget.band_low_hz) & (freqs <= budget.band_high_hz)).to(t.dtype)
    out = torch.fft.irfft(torch.fft.rfft(t) * mask, n=n)
    return _from_tensor(out, was_np)


def lowpass(w, cutoff_hz, sample_rate_hz=DEFAULT_SAMPLE_RATE):
    """Frequency-mask everything above cutoff_hz (DC retained)."""
    t, was_np = _to_tensor(w)
    n = t.numel()
    freqs = torch.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    mask = (freqs <= cutoff_hz).to(t.dtype)
    out = torch.fft.irfft(torch.fft.rfft(t) * mask, n=n)
    return _from_tensor(out, was_np)


def convolve(w, impulse_response):
    """Full linear convolution truncated to the input length.

    Differentiable in w; the impulse response is treated as a constant.
    """
    if isinstance(w, Waveform):
        out = convolve(w.samples, impulse_response)
        return Waveform(out, w.sample_rate_hz)
    ir = np.asarray(impulse_response, dtype=np.float64)
    if ir.ndim != 1 or len(ir) < 1:
        raise InvalidInputError("impulse response must be a non-empty 1-D sequence")
    t, was_np = _to_tensor(w)
    n = t.numel()
    kernel = torch.as_tensor(ir[::-1].copy()).reshape(1, 1, -1)
    padded = torch.nn.functional.pad(t.reshape(1, 1, -1), (len(ir) - 1, len(ir) - 1))
    full = torch.nn.functional.conv1d(padded, kernel).reshape(-1)
    return _from_tensor(full[:n], was_np)


def snr_gain(signal_power, noise_power, snr_db):
    """Gain to apply to the noise so signal/(g*noise) hits snr_db."""
    if noise_power <= 0:
        raise InvalidInputError("noise has zero power")
    return float(np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def _fit_length(noise, n):
    if len(noise) >= n:
        return noise[:n]
    reps = int(np.ceil(n / len(noise)))
    if isinstance(noise, torch.Tensor):
        return noise.repeat(reps)[:n]
    return np.tile(noise, reps)[:n]


def mix_at_snr(signal, noise, snr_db):
    """signal + g * noise with g chosen for the requested SNR.

    snr_db = +inf disables the noise entirely.
    """
    if isinstance(signal, Waveform):
        noise_samples = noise.samples if isinstance(noise, Waveform) else noise
        out = mix_at_snr(signal.samples, noise_samples, snr_db)
        return Waveform(out, signal.sample_rate_hz)
    t, was_np = _to_tensor(signal)
    if np.isinf(snr_db):
        return _from_tensor(t, was_np)
    nz, _ = _to_tensor(noise)
    nz = _fit_length(nz, t.numel())
    p_sig = float(torch.mean(t.detach() ** 2))
    p_noise = float(torch.mean(nz.detach() ** 2))
    g = snr_gain(p_sig, p_noise, snr_db)
    return _from_tensor(t + g * nz, was_np)


def quantize(samples, bits):
    """Uniform mid-tread quantization after clipping to [-1, 1]."""
    levels = 2 ** (bits - 1) - 1
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.round(clipped * levels) / levels


def _codec_fallback(samples, sample_rate_hz, bitrate_kbps, frame=512):
    """Crude spectral-magnitude quantizer standing in for a real codec.

    Bits per frame follow from the bitrate; magnitudes are quantized on a
    per-bin log grid whose resolution scales with the bit allocation.
    """
    n = len(samples)
    bits_per_sample = bitrate_kbps * 1000.0 / sample_rate_hz
    # resolution: more bits -> finer magnitude grid
    levels = max(4, int(round(2 ** min(bits_per_sample, 12))))
    out = np.zeros(n)
    window = np.hanning(frame)
    hop = frame // 2
    norm = np.zeros(n)
    pos = 0
    padded = np.concatenate([samples, np.zeros(frame)])
    while pos < n:
        seg = padded[pos : pos + frame] * window
        spec = np.fft.rfft(seg)
        mag, phase = np.abs(spec), np.angle(spec)
        ref = mag.max()
        if ref > 0:
            step = ref / levels
            mag = np.round(mag / step) * step
        rec = np.fft.irfft(mag * np.exp(1j * phase), n=frame) * window
        end = min(pos + frame, n)
        out[pos:end] += rec[: end - pos]
        norm[pos:end] += window[: end - pos] ** 2
        pos += hop
    norm[norm == 0] = 1.0
    return out / norm


def apply_defense(w, spec, rng=None, codec_hook=None, codec_fallback=True):
    """Apply one §-style input transform used as a defense.

    Returns a new Waveform; simulated codecs flag themselves in .meta.
    """
    samples = w.samples
    sr = w.sample_rate_hz
    meta = {"defense": spec.kind, **spec.parameters}
    if spec.kind == "lowpass":
        out = lowpass(samples, spec.value, sr)
    elif spec.kind == "quantize":
        out = quantize(samples, int(spec.value))
    elif spec.kind == "resample":
        target = int(spec.value)
        if target >= sr:
            raise ConfigurationError("resample defense requires target rate below input rate")
        g = np.gcd(target, sr)
        down = resample_poly(samples, target // g, sr // g)
        out = resample_poly(down, sr // g, target // g)
        out = _fit_length(np.asarray(out), len(samples)) if len(out) != len(samples) else out
    elif spec.kind == "noise":
        rng = np.random.default_rng(0) if rng is None else rng
        noise = rng.standard_normal(len(samples))
        out = mix_at_snr(samples, noise, spec.value)
    elif spec.kind == "codec":
        if codec_hook is not None:
            out = np.asarray(codec_hook(samples, sr, spec.value), dtype=np.float64)
        elif codec_fallback:
            out = _codec_fallback(samples, sr, spec.value)
            meta["codec_simulated"] = True
        else:
            raise UnsupportedOperationError(
                "codec defense needs an external encoder hook (fallback disabled)"
            )
    else:  # pragma: no cover - DefenseSpec already validates
        raise ConfigurationError(f"unknown defense kind: {spec.kind!r}")
    return Waveform(np.asarray(out, dtype=np.float64), sr, meta)


def read_wav(path, target_rate_hz=None):
    """Load a RIFF PCM/float WAV as a mono [-1, 1] Waveform."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidInputError(f"unsupported WAV sample format: {data.dtype}")
    w = Waveform(samples, rate)
    if target_rate_hz is not None and target_rate_hz != rate:
        w = resample_waveform(w, target_rate_hz)
    return w


def resample_waveform(w, target_rate_hz):
    g = np.gcd(int(target_rate_hz), w.sample_rate_hz)
    out = resample_poly(w.samples, target_rate_hz // g, w.sample_rate_hz // g)
    return Waveform(np.asarray(out, dtype=np.float64), int(target_rate_hz))


def write_wav(path, w, fmt="float32"):
    """Write a Waveform; clipping to [-1, 1] happens here, nowhere else."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    if fmt == "float32":
        wavfile.write(path, w.sample_rate_hz, clipped.astype(np.float32))
    elif fmt == "int16":
        wavfile.write(path, w.sample_rate_hz, np.round(clipped * 32767).astype(np.int16))
    else:
        raise ConfigurationError(f"unsupported WAV format: {fmt!r}")
