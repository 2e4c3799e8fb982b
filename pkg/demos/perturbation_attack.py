"""Walkthrough: imperceptible perturbation attack on the bundled surrogate.

Trains the toy speech-translation model, picks a carrier utterance and a
different target sentence, then optimizes a band-limited, budget-bounded
delta until the model translates the carrier to the attacker's sentence
in both English and Chinese.

Run: python3 demos/perturbation_attack.py
"""

import numpy as np
import torch

from advst import (
    CorpusConfig,
    PerturbAttackConfig,
    PerturbationBudget,
    TargetSpec,
    encode,
    greedy_decode,
    run_perturbation_attack,
    train_surrogate,
    write_wav,
)

torch.set_num_threads(1)

print("training surrogate model ...")
model = train_surrogate(CorpusConfig(), seed=42)
corpus = model.corpus
print(f"  training exact-match accuracy: {model.training_accuracy:.2f}")

carrier_idx, target_idx = 15, 9
carrier = corpus.audio(carrier_idx)
languages = ("EN", "ZH")
targets = TargetSpec(
    corpus.target_text(target_idx, "EN"),
    {lang: (corpus.target_text(target_idx, lang), corpus.target_tokens(target_idx, lang))
     for lang in languages},
)

h = encode(model, carrier)
for lang in languages:
    print(f"  clean {lang}: {model.vocabulary.render(greedy_decode(model, h, lang).ids)!r}")
print(f"  target EN: {targets.text('EN')!r}")

cfg = PerturbAttackConfig(
    languages=languages,
    budget=PerturbationBudget(epsilon=0.1, band_low_hz=1000, band_high_hz=4000),
    seed=42,
)
result = run_perturbation_attack(model, carrier, targets, cfg)

print(f"\nconverged after {result.iterations_used} iterations "
      f"(loss {result.loss_trace[0]:.2f} -> {result.loss_trace[-1]:.4f})")
for lang, rec in result.per_language.items():
    print(f"  adversarial {lang}: {rec['text']!r}  exact_match={rec['exact_match']}")

delta = result.adversarial_waveform.samples - carrier.samples
print(f"  max|delta| = {np.max(np.abs(delta)):.4f}  (budget {cfg.budget.epsilon})")
write_wav("demo_x_adv.wav", result.adversarial_waveform)
print("wrote demo_x_adv.wav")
