"""Walkthrough: target cycle optimization, defenses, and semantic scoring.

First picks a more attackable phrasing of the target by round-tripping it
through mock pivot translators, then judges attack outputs against
paraphrase-calibrated thresholds, and finally shows how input defenses
degrade a working adversarial example.

Run: python3 demos/targets_defenses_evaluation.py
"""

import torch

from advst import (
    CorpusConfig,
    DefenseSpec,
    PerturbAttackConfig,
    TableProvider,
    TargetSpec,
    apply_defense,
    attack_success_rate,
    calibrate_thresholds,
    cycle_optimize,
    encode,
    format_asr,
    greedy_decode,
    judge_success,
    run_perturbation_attack,
    train_surrogate,
)

torch.set_num_threads(1)

# --- target cycle optimization with a mock translation backend -------------
table = {
    ("Have you lost your mind?", "EN", "ZH"): "zh", ("zh", "ZH", "EN"): "Are you crazy?",
    ("Have you lost your mind?", "EN", "DE"): "de", ("de", "DE", "EN"): "Are you crazy?",
    ("Have you lost your mind?", "EN", "FR"): "fr", ("fr", "FR", "EN"): "Are you crazy?",
    ("Have you lost your mind?", "EN", "ES"): "es", ("es", "ES", "EN"): "Have you gone mad?",
}
chosen, trace = cycle_optimize(TableProvider(table), "Have you lost your mind?",
                               "EN", ["ZH", "DE", "FR", "ES"], rounds=1)
print(f"cycle-optimized target: {chosen!r}  (votes: {trace.frequency})")

# --- semantic judging ------------------------------------------------------
target = "are you crazy"
thresholds = calibrate_thresholds(target, ["are you crazy", "have you gone mad"])
print(f"thresholds from paraphrases: gamma_e={thresholds.gamma_e:.3f} "
      f"gamma_n={thresholds.gamma_n:.3f}")
outputs = ["are you crazy", "you crazy are", "the weather is nice"]
judged = [judge_success(o, target, thresholds) for o in outputs]
for o, ok in zip(outputs, judged):
    print(f"  {o!r}: success={ok}")
s, t, _ = attack_success_rate(judged)
print(f"  ASR: {format_asr(s, t)}")

# --- defenses vs a working adversarial example -----------------------------
print("\ntraining surrogate model ...")
model = train_surrogate(CorpusConfig(), seed=42)
corpus = model.corpus
target_idx = 9
targets = TargetSpec(
    corpus.target_text(target_idx, "EN"),
    {"EN": (corpus.target_text(target_idx, "EN"), corpus.target_tokens(target_idx, "EN"))},
)
result = run_perturbation_attack(model, corpus.audio(15), targets,
                                 PerturbAttackConfig(languages=("EN",), seed=42))
print(f"undefended: {result.per_language['EN']['text']!r} "
      f"(exact_match={result.per_language['EN']['exact_match']})")
for kind in ("lowpass", "codec", "noise", "quantize", "resample"):
    defended = apply_defense(result.adversarial_waveform, DefenseSpec(kind))
    seq = greedy_decode(model, encode(model, torch.as_tensor(defended.samples)), "EN")
    still = seq.ids == corpus.target_tokens(target_idx, "EN").ids
    print(f"  after {kind:9s}: attack {'survives' if still else 'broken  '} "
          f"-> {model.vocabulary.render(seq.ids)!r}")
