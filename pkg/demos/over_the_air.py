"""Walkthrough: over-the-air channel simulation and robust optimization.

Builds a tiny speech-interference corpus and a synthetic room impulse
response on the fly, shows a single replayable channel draw, then runs
the perturbation attack *through* the channel sampler so every iteration
sees a fresh random acoustic distortion.

Run: python3 demos/over_the_air.py
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from advst import (
    ChannelConfig,
    CorpusConfig,
    PerturbAttackConfig,
    TargetSpec,
    Waveform,
    apply_channel,
    apply_realization,
    make_eot_sampler,
    run_perturbation_attack,
    train_surrogate,
    write_wav,
)

torch.set_num_threads(1)
SR = 16000

workdir = Path(tempfile.mkdtemp(prefix="ota_demo_"))
speech_dir = workdir / "speech"
rir_dir = workdir / "rir"
speech_dir.mkdir()
rir_dir.mkdir()

rng = np.random.default_rng(0)
for i in range(3):
    n = SR // 2
    babble = 0.3 * np.sin(2 * np.pi * (180 + 60 * i) * np.arange(n) / SR)
    babble += 0.05 * rng.standard_normal(n)
    write_wav(speech_dir / f"speech_{i}.wav", Waveform(babble))
ir = np.exp(-np.arange(128) / 16.0) * rng.standard_normal(128)
ir[0] = 1.0
write_wav(rir_dir / "room.wav", Waveform(ir))

print("training surrogate model ...")
model = train_surrogate(CorpusConfig(), seed=42)
corpus = model.corpus

chan = ChannelConfig(speech_corpus_dir=str(speech_dir), rir_dir=str(rir_dir),
                     rir_probability=0.5, seed=7)

w = corpus.audio(0)
out, realization = apply_channel(w, chan)
print("one channel draw:", realization.to_dict())
replay = apply_realization(w.samples, realization, SR)
print("  replay bit-exact:", bool(np.array_equal(out.samples, np.asarray(replay))))

target_idx = 7
targets = TargetSpec(
    corpus.target_text(target_idx, "EN"),
    {"EN": (corpus.target_text(target_idx, "EN"), corpus.target_tokens(target_idx, "EN"))},
)
cfg = PerturbAttackConfig(languages=("EN",), seed=42, max_iteration=500,
                          ota_enabled=True)
sampler = make_eot_sampler(chan, SR)
result = run_perturbation_attack(model, w, targets, cfg, eot_sampler=sampler)
rec = result.per_language["EN"]
print(f"\nattack through the channel: {result.iterations_used} iterations, "
      f"{len(sampler.records)} channel draws")
print(f"  decoded under the final draw: {rec['text']!r}  exact_match={rec['exact_match']}")
