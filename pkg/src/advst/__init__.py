"""Targeted adversarial attacks on autoregressive speech translation."""

__version__ = "0.1.0"

from .audio import (
    DefenseSpec,
    PerturbationBudget,
    Waveform,
    apply_defense,
    bandpass,
    convolve,
    mix_at_snr,
    project_perturbation,
    read_wav,
    write_wav,
)
from .attack_perturb import (
    AttackResult,
    PerturbAttackConfig,
    TargetSpec,
    multi_language_loss,
    run_perturbation_attack,
)
from .evaluation import (
    HashedBowScorer,
    Report,
    ThresholdSet,
    TokenOverlapScorer,
    attack_success_rate,
    build_report,
    calibrate_thresholds,
    esim,
    format_asr,
    judge_success,
    nscore,
)
from .music_attack import (
    MusicAttackConfig,
    NoiseSchedule,
    SurrogateGenerator,
    forward_diffuse,
    latent_prior_kl,
    reverse_generate,
    run_music_attack,
    sharpness_loss,
)
from .ota import (
    ChannelConfig,
    ChannelRealization,
    EOTSampler,
    apply_channel,
    apply_realization,
    make_eot_sampler,
)
from .stmodel import (
    CorpusConfig,
    TokenSequence,
    Vocabulary,
    encode,
    greedy_decode,
    load_checkpoint,
    next_token_logits,
    save_checkpoint,
    sequence_loss,
    train_surrogate,
)
from .tco import TableProvider, cycle_optimize
