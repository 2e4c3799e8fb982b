import numpy as np
import pytest
import torch

from advst.audio import Waveform, write_wav
from advst.errors import ConfigurationError
from advst.ota import (
    ChannelConfig,
    ChannelRealization,
    EOTSampler,
    apply_channel,
    apply_realization,
    sample_realization,
)

from conftest import central_difference, rel_err

SR = 16000
INF = float("inf")


@pytest.fixture
def speech_dir(tmp_path):
    d = tmp_path / "speech"
    d.mkdir()
    rng = np.random.default_rng(100)
    for i in range(3):
        n = int(SR * (0.3 + 0.1 * i))
        x = 0.3 * np.sin(2 * np.pi * (200 + 50 * i) * np.arange(n) / SR)
        x += 0.05 * rng.standard_normal(n)
        write_wav(d / f"speech_{i}.wav", Waveform(x))
    return str(d)


@pytest.fixture
def rir_dir(tmp_path):
    d = tmp_path / "rir"
    d.mkdir()
    rng = np.random.default_rng(200)
    for i in range(2):
        n = 64
        ir = np.exp(-np.arange(n) / 8.0) * rng.standard_normal(n)
        ir[0] = 1.0
        write_wav(d / f"room_{i}.wav", Waveform(ir))
    return str(d)


@pytest.fixture
def impulse_rir_dir(tmp_path):
    d = tmp_path / "impulse"
    d.mkdir()
    ir = np.zeros(16)
    ir[0] = 1.0
    write_wav(d / "unit.wav", Waveform(ir))
    return str(d)


def carrier(n=2048):
    return Waveform(0.2 * np.sin(2 * np.pi * 1500 * np.arange(n) / SR))


class TestChannelConfig:
    def test_bad_probability(self):
        with pytest.raises(ConfigurationError):
            ChannelConfig(rir_probability=1.5)

    def test_bad_snr_range(self):
        with pytest.raises(ConfigurationError):
            ChannelConfig(speech_snr_db=(20.0, 5.0))


class TestRealizationRecord:
    def test_roundtrip_with_inf(self):
        real = ChannelRealization(noise_snr_db=INF)
        back = ChannelRealization.from_dict(real.to_dict())
        assert back == real
        assert real.to_dict()["noise_snr_db"] == "inf"


class TestApplyChannel:
    def test_all_disabled_is_identity(self):
        cfg = ChannelConfig(white_noise_enabled=False)
        w = carrier()
        out, real = apply_channel(w, cfg)
        assert np.array_equal(out.samples, w.samples)
        assert real == ChannelRealization()

    def test_unit_impulse_rir_silent_noise_is_identity(self, impulse_rir_dir):
        cfg = ChannelConfig(
            rir_dir=impulse_rir_dir,
            rir_probability=1.0,
            white_noise_snr_db=(INF, INF),
            seed=4,
        )
        w = carrier()
        out, real = apply_channel(w, cfg)
        assert real.rir_file is not None
        assert np.max(np.abs(out.samples - w.samples)) <= 1e-9

    def test_replay_is_bit_exact(self, speech_dir, rir_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, rir_dir=rir_dir, seed=11)
        w = carrier()
        out, real = apply_channel(w, cfg)
        replay = apply_realization(w.samples, real, SR)
        assert np.array_equal(out.samples, np.asarray(replay))

    def test_replay_from_serialized_record(self, speech_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, seed=11)
        w = carrier()
        out, real = apply_channel(w, cfg)
        back = ChannelRealization.from_dict(real.to_dict())
        replay = apply_realization(w.samples, back, SR)
        assert np.array_equal(out.samples, np.asarray(replay))

    def test_speech_overlay_snr_within_tenth_db(self, speech_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir,
                            white_noise_enabled=False, seed=3)
        w = carrier(4000)
        out, real = apply_channel(w, cfg)
        added = out.samples - w.samples
        achieved = 10 * np.log10(np.mean(w.samples**2) / np.mean(added**2))
        assert abs(achieved - real.speech_snr_db) < 0.1

    def test_rir_probability_zero_never_convolves(self, rir_dir):
        cfg = ChannelConfig(rir_dir=rir_dir, rir_probability=0.0,
                            white_noise_enabled=False)
        for seed in range(20):
            _, real = apply_channel(carrier(256), ChannelConfig(
                rir_dir=rir_dir, rir_probability=0.0,
                white_noise_enabled=False, seed=seed))
            assert real.rir_file is None

    def test_white_noise_snr(self):
        cfg = ChannelConfig(white_noise_snr_db=(30.0, 30.0), seed=8)
        w = carrier(8000)
        out, real = apply_channel(w, cfg)
        added = out.samples - w.samples
        achieved = 10 * np.log10(np.mean(w.samples**2) / np.mean(added**2))
        assert abs(achieved - 30.0) < 0.1

    def test_empty_speech_dir_rejected(self, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        cfg = ChannelConfig(speech_corpus_dir=str(empty))
        with pytest.raises(ConfigurationError):
            apply_channel(carrier(), cfg)


class TestEOTSampler:
    def test_equal_seeds_give_equal_streams(self, speech_dir, rir_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, rir_dir=rir_dir, seed=21)
        a, b = EOTSampler(cfg), EOTSampler(cfg)
        x = carrier(512).samples
        for _ in range(4):
            assert np.array_equal(np.asarray(a(x)), np.asarray(b(x)))
        assert a.records == b.records

    def test_successive_draws_differ(self, speech_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, seed=21)
        sampler = EOTSampler(cfg)
        x = carrier(512).samples
        sampler(x)
        sampler(x)
        assert sampler.records[0] != sampler.records[1]

    def test_torch_passthrough_matches_numpy(self, speech_dir, rir_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, rir_dir=rir_dir,
                            rir_probability=1.0, seed=5)
        x = carrier(512).samples
        _, real = apply_channel(carrier(512), cfg)
        out_np = apply_realization(x, real, SR)
        out_t = apply_realization(torch.as_tensor(x), real, SR)
        assert np.allclose(np.asarray(out_np), out_t.detach().numpy(), atol=1e-12)

    def test_gradient_through_fixed_realization(self, speech_dir, rir_dir):
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, rir_dir=rir_dir,
                            rir_probability=1.0, seed=5)
        x0 = carrier(64).samples
        _, real = apply_channel(Waveform(x0), cfg)
        probe = np.random.default_rng(0).normal(size=64)

        def f(x):
            return float(np.dot(np.asarray(apply_realization(x, real, SR)), probe))

        xt = torch.tensor(x0, requires_grad=True)
        (apply_realization(xt, real, SR) * torch.as_tensor(probe)).sum().backward()
        fd = central_difference(f, x0)
        assert rel_err(xt.grad.numpy(), fd) < 1e-3

    def test_fixed_realization_affine_in_input(self, speech_dir, rir_dir):
        # the transform is additive noise plus a convolution, so differences
        # of outputs depend linearly on differences of inputs
        cfg = ChannelConfig(speech_corpus_dir=speech_dir, rir_dir=rir_dir,
                            rir_probability=1.0, seed=9)
        u = carrier(256).samples
        v = np.random.default_rng(1).normal(size=256) * 0.1
        _, real = apply_channel(Waveform(u), cfg)
        f = lambda x: np.asarray(apply_realization(x, real, SR))
        lhs = f(u + 2.0 * v) - f(u)
        rhs = 2.0 * (f(u + v) - f(u))
        assert rel_err(lhs, rhs) < 1e-9
