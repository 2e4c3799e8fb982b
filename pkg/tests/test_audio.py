import numpy as np
import pytest
import torch

from advst.audio import (
    DefenseSpec,
    PerturbationBudget,
    Waveform,
    apply_defense,
    bandpass,
    convolve,
    lowpass,
    mix_at_snr,
    project_perturbation,
    quantize,
    read_wav,
    write_wav,
)
from advst.errors import ConfigurationError, InvalidInputError, UnsupportedOperationError

from conftest import central_difference, rel_err

SR = 16000


def tone(freq, n=4096, sr=SR, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / sr)


class TestProjectPerturbation:
    def test_zero_stays_zero(self):
        out = project_perturbation(np.zeros(64), PerturbationBudget(epsilon=0.1))
        assert np.all(out == 0)

    def test_saturation(self):
        out = project_perturbation(np.full(8, 1e6), PerturbationBudget(epsilon=0.1))
        assert np.allclose(out, 0.1, atol=1e-9)

    def test_scalar_oracle(self):
        # 0.5 * tanh(1)
        out = project_perturbation(np.array([1.0]), PerturbationBudget(epsilon=0.5))
        assert out[0] == pytest.approx(0.3807970780, abs=1e-9)

    def test_bound_holds_for_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            eps = float(rng.uniform(0.01, 1.0))
            delta = rng.normal(scale=100.0, size=rng.integers(1, 200))
            out = project_perturbation(delta, PerturbationBudget(epsilon=eps))
            assert np.max(np.abs(out)) < eps

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            project_perturbation(np.array([np.nan]), PerturbationBudget())


class TestBandpass:
    budget = PerturbationBudget(epsilon=0.1, band_low_hz=1000, band_high_hz=4000)

    def test_passband_tone_unchanged(self):
        x = tone(2000)
        y = bandpass(x, self.budget, SR)
        assert np.sqrt(np.mean((y - x) ** 2)) / np.sqrt(np.mean(x**2)) < 1e-3

    def test_stopband_tone_removed(self):
        x = tone(500)
        y = bandpass(x, self.budget, SR)
        assert np.sqrt(np.mean(y**2)) <= 1e-6 * np.sqrt(np.mean(x**2))

    def test_spectrum_peak_only_in_band(self):
        x = tone(500) + tone(2000)
        y = bandpass(x, self.budget, SR)
        # independent DFT oracle
        spec = np.abs(np.fft.rfft(y))
        freqs = np.fft.rfftfreq(len(y), 1 / SR)
        peak = freqs[np.argmax(spec)]
        assert peak == pytest.approx(2000, abs=SR / len(y))
        assert spec[np.argmin(np.abs(freqs - 500))] < 1e-6 * spec.max()

    def test_linear(self):
        rng = np.random.default_rng(1)
        u, v = rng.normal(size=512), rng.normal(size=512)
        a, b = 2.5, -1.25
        lhs = bandpass(a * u + b * v, self.budget, SR)
        rhs = a * bandpass(u, self.budget, SR) + b * bandpass(v, self.budget, SR)
        assert rel_err(lhs, rhs) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=777)
        once = bandpass(x, self.budget, SR)
        twice = bandpass(once, self.budget, SR)
        assert rel_err(once, twice) < 1e-9

    def test_band_above_nyquist_rejected(self):
        with pytest.raises(ConfigurationError):
            bandpass(tone(100), PerturbationBudget(band_low_hz=1000, band_high_hz=9000), SR)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=128)
        probe = rng.normal(size=128)

        def f(x):
            return float(np.dot(bandpass(x, self.budget, SR), probe))

        xt = torch.tensor(x0, requires_grad=True)
        loss = (bandpass(xt, self.budget, SR) * torch.as_tensor(probe)).sum()
        loss.backward()
        fd = central_difference(f, x0)
        assert rel_err(xt.grad.numpy(), fd) < 1e-3


class TestConvolve:
    def test_unit_impulse_identity(self):
        x = Waveform(np.sin(np.arange(100)))
        y = convolve(x, [1.0])
        assert np.max(np.abs(y.samples - x.samples)) <= 1e-9

    def test_pure_delay(self):
        y = convolve(np.array([1.0, 2.0, 3.0]), [0.0, 1.0])
        assert np.allclose(y, [0.0, 1.0, 2.0])

    def test_hand_computed(self):
        y = convolve(np.array([1.0, 0.0, 0.0]), [0.5, 0.5])
        assert np.allclose(y, [0.5, 0.5, 0.0])

    def test_empty_ir_rejected(self):
        with pytest.raises(InvalidInputError):
            convolve(np.ones(4), [])

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x0 = rng.normal(size=64)
        ir = rng.normal(size=5)
        xt = torch.tensor(x0, requires_grad=True)
        convolve(xt, ir).sum().backward()
        fd = central_difference(lambda x: float(np.sum(convolve(x, ir))), x0)
        assert rel_err(xt.grad.numpy(), fd) < 1e-3


class TestMixAtSnr:
    def test_equal_power_zero_db(self):
        s = Waveform(tone(1000, n=1600))
        n = Waveform(tone(3000, n=1600))
        out = mix_at_snr(s, n, 0.0)
        assert np.allclose(out.samples, s.samples + n.samples, atol=1e-9)

    def test_20db_gain(self):
        s = np.ones(100)
        n = np.ones(100)
        out = mix_at_snr(s, n, 20.0)
        assert np.allclose(out, 1.1)  # g = 0.1

    def test_infinite_snr_is_identity(self):
        s = Waveform(tone(440, n=800))
        out = mix_at_snr(s, Waveform(tone(880, n=800)), np.inf)
        assert np.array_equal(out.samples, s.samples)

    def test_achieved_snr_within_tenth_db(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            s = rng.normal(size=1000) * rng.uniform(0.1, 2)
            n = rng.normal(size=rng.integers(100, 2000)) * rng.uniform(0.1, 2)
            req = rng.uniform(-10, 40)
            out = mix_at_snr(s, n, req)
            added = out - s
            achieved = 10 * np.log10(np.mean(s**2) / np.mean(added**2))
            assert abs(achieved - req) < 0.1

    def test_silent_noise_rejected(self):
        with pytest.raises(InvalidInputError):
            mix_at_snr(np.ones(10), np.zeros(10), 10.0)


class TestDefenses:
    def test_quantize_zero(self):
        out = apply_defense(Waveform(np.zeros(16)), DefenseSpec("quantize", {"bits": 8}))
        assert np.all(out.samples == 0)

    def test_quantize_oracle(self):
        out = quantize(np.array([0.3]), 8)
        assert out[0] == pytest.approx(38 / 127, abs=1e-12)

    def test_quantize_idempotent_and_bounded_error(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, size=500)
        q1 = quantize(x, 8)
        assert np.array_equal(quantize(q1, 8), q1)
        assert np.max(np.abs(q1 - x)) <= 1 / 127 + 1e-9

    def test_lowpass_kills_high_tone(self):
        w = Waveform(tone(7000, n=8192))
        out = apply_defense(w, DefenseSpec("lowpass", {"cutoff_hz": 6000}))
        atten = 10 * np.log10(np.mean(w.samples**2) / max(np.mean(out.samples**2), 1e-30))
        assert atten >= 40

    def test_resample_removes_high_band(self):
        w = Waveform(tone(7000, n=8192) + tone(1000, n=8192))
        out = apply_defense(w, DefenseSpec("resample", {"target_rate_hz": 12000}))
        assert len(out) == len(w)
        spec = np.abs(np.fft.rfft(out.samples))
        freqs = np.fft.rfftfreq(len(out), 1 / SR)
        assert spec[np.argmin(np.abs(freqs - 7000))] < 0.05 * spec.max()

    def test_noise_defense_uses_configured_snr(self):
        w = Waveform(tone(1000, n=4000))
        out = apply_defense(w, DefenseSpec("noise", {"snr_db": 20}),
                            rng=np.random.default_rng(7))
        added = out.samples - w.samples
        achieved = 10 * np.log10(np.mean(w.samples**2) / np.mean(added**2))
        assert abs(achieved - 20) < 0.1

    def test_codec_fallback_flagged(self):
        w = Waveform(tone(1000, n=4096, amp=0.5))
        out = apply_defense(w, DefenseSpec("codec", {"bitrate_kbps": 64}))
        assert out.meta.get("codec_simulated") is True

    def test_codec_hook_used_when_present(self):
        w = Waveform(tone(1000, n=1024))
        out = apply_defense(
            w, DefenseSpec("codec"), codec_hook=lambda s, sr, kbps: s * 0.5
        )
        assert np.allclose(out.samples, w.samples * 0.5)
        assert "codec_simulated" not in out.meta

    def test_codec_without_hook_or_fallback(self):
        with pytest.raises(UnsupportedOperationError):
            apply_defense(Waveform(np.ones(64)), DefenseSpec("codec"), codec_fallback=False)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            DefenseSpec("mp4")


class TestWavIO:
    def test_roundtrip_float32(self, tmp_path):
        w = Waveform(tone(440, n=1000, amp=0.8))
        path = tmp_path / "t.wav"
        write_wav(path, w)
        back = read_wav(path)
        assert back.sample_rate_hz == SR
        assert np.allclose(back.samples, w.samples, atol=1e-6)

    def test_clipping_only_at_writeout(self, tmp_path):
        w = Waveform(np.array([1.5, -2.0, 0.25]))  # legal in memory
        path = tmp_path / "c.wav"
        write_wav(path, w)
        back = read_wav(path)
        assert np.max(np.abs(back.samples)) <= 1.0
        assert back.samples[2] == pytest.approx(0.25, abs=1e-6)

    def test_int16_resampled_load(self, tmp_path):
        w = Waveform(tone(440, n=8000, sr=8000), 8000)
        path = tmp_path / "i.wav"
        write_wav(path, w, fmt="int16")
        back = read_wav(path, target_rate_hz=16000)
        assert back.sample_rate_hz == 16000
        assert len(back) == 16000
