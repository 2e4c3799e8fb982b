"""Over-the-air channel simulation: interfering speech overlay, random room
impulse response, and white noise, with fully replayable realizations."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .audio import Waveform, convolve, read_wav, snr_gain
from .errors import ConfigurationError

_INF = float("inf")


@dataclass
class ChannelConfig:
    speech_corpus_dir: str | None = None
    rir_dir: str | None = None
    rir_probability: float = 0.5
    speech_snr_db: tuple = (5.0, 20.0)
    white_noise_snr_db: tuple = (40.0, 60.0)
    white_noise_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rir_probability <= 1.0:
            raise ConfigurationError("rir_probability must lie in [0, 1]")
        for name, rng_ in (("speech_snr_db", self.speech_snr_db),
                           ("white_noise_snr_db", self.white_noise_snr_db)):
            if rng_[0] > rng_[1]:
                raise ConfigurationError(f"{name} range must be ordered low <= high")


@dataclass
class ChannelRealization:
    """Everything needed to replay one channel draw bit-exactly."""

    speech_file: str | None = None
    speech_gain: float = 0.0
    speech_snr_db: float = _INF
    rir_file: str | None = None
    noise_seed: int | None = None
    noise_gain: float = 0.0
    noise_snr_db: float = _INF

    def to_dict(self):
        d = asdict(self)
        for k in ("speech_snr_db", "noise_snr_db"):
            if np.isinf(d[k]):
                d[k] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("speech_snr_db", "noise_snr_db"):
            if d.get(k) == "inf":
                d[k] = _INF
        return cls(**d)


class _WavCache:
    def __init__(self):
        self._cache = {}

    def load(self, path, sample_rate_hz):
        key = (str(path), sample_rate_hz)
        if key not in self._cache:
            self._cache[key] = read_wav(path, target_rate_hz=sample_rate_hz)
        return self._cache[key]


_cache = _WavCache()


def _list_wavs(directory, what):
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise ConfigurationError(f"no WAV files in {what} directory {directory!r}")
    return files


def _fit(x, n):
    if len(x) >= n:
        return x[:n]
    return np.tile(x, int(np.ceil(n / len(x))))[:n]


def sample_realization(w_samples, cfg, rng, sample_rate_hz):
    """Draw one channel realization; gains are frozen here so the transform
    is linear in the input for a fixed realization."""
    w_np = w_samples.detach().numpy() if isinstance(w_samples, torch.Tensor) else np.asarray(w_samples)
    p_sig = float(np.mean(w_np**2))
    real = ChannelRealization()
    if cfg.speech_corpus_dir is not None:
        files = _list_wavs(cfg.speech_corpus_dir, "speech corpus")
        real.speech_file = str(files[rng.integers(len(files))])
        real.speech_snr_db = float(rng.uniform(*cfg.speech_snr_db))
        clip = _fit(_cache.load(real.speech_file, sample_rate_hz).samples, len(w_np))
        real.speech_gain = snr_gain(p_sig, float(np.mean(clip**2)), real.speech_snr_db)
    if cfg.rir_dir is not None:
        files = _list_wavs(cfg.rir_dir, "RIR")
        use_rir = rng.uniform() < cfg.rir_probability
        pick = int(rng.integers(len(files)))  # drawn either way to keep the stream aligned
        if use_rir:
            real.rir_file = str(files[pick])
    if cfg.white_noise_enabled:
        lo, hi = cfg.white_noise_snr_db
        real.noise_snr_db = _INF if np.isinf(lo) else float(rng.uniform(lo, hi))
        real.noise_seed = int(rng.integers(2**31 - 1))
        if np.isinf(real.noise_snr_db):
            real.noise_gain = 0.0
        else:
            noise = np.random.default_rng(real.noise_seed).standard_normal(len(w_np))
            real.noise_gain = snr_gain(p_sig, float(np.mean(noise**2)), real.noise_snr_db)
    return real


def apply_realization(w_samples, real, sample_rate_hz):
    """Replay a realization: speech overlay -> RIR -> white noise.

    Works on numpy arrays or torch tensors; gradients flow to the input."""
    out = w_samples
    n = len(w_samples) if not isinstance(w_samples, torch.Tensor) else w_samples.numel()
    if real.speech_file is not None and real.speech_gain != 0.0:
        clip = _fit(_cache.load(real.speech_file, sample_rate_hz).samples, n)
        if isinstance(out, torch.Tensor):
            clip = torch.as_tensor(clip)
        out = out + real.speech_gain * clip
    if real.rir_file is not None:
        rir = _cache.load(real.rir_file, sample_rate_hz).samples
        rir = rir / np.max(np.abs(rir))
        out = convolve(out, rir)
    if real.noise_seed is not None and real.noise_gain != 0.0:
        noise = np.random.default_rng(real.noise_seed).standard_normal(n)
        if isinstance(out, torch.Tensor):
            noise = torch.as_tensor(noise)
        out = out + real.noise_gain * noise
    return out


def apply_channel(w, cfg, rng=None):
    """Apply one random channel draw; returns (Waveform, realization)."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    real = sample_realization(w.samples, cfg, rng, w.sample_rate_hz)
    out = apply_realization(w.samples, real, w.sample_rate_hz)
    return Waveform(np.asarray(out), w.sample_rate_hz), real


class EOTSampler:
    """Stateful per-iteration channel sampler for robust optimization.

    Each call draws a fresh realization (reproducible from the config seed)
    and applies it differentiably; clips, RIRs, SNRs and gains are constants
    of the draw."""

    def __init__(self, cfg, sample_rate_hz=16000):
        self.cfg = cfg
        self.sample_rate_hz = sample_rate_hz
        self.rng = np.random.default_rng(cfg.seed)
        self.records = []

    def __call__(self, w_samples):
        real = sample_realization(w_samples, self.cfg, self.rng, self.sample_rate_hz)
        self.records.append(real)
        return apply_realization(w_samples, real, self.sample_rate_hz)

    @property
    def last_realization(self):
        return self.records[-1] if self.records else None


def make_eot_sampler(cfg, sample_rate_hz=16000):
    return EOTSampler(cfg, sample_rate_hz)
