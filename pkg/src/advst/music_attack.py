"""Adversarial music: optimize a latent generator's initial noise and
conditioning-encoder parameters so its output translates to the target text.

Includes the sharpened cross-entropy loss, forward/reverse diffusion
utilities, the latent-prior KL regularizer, and an optional over-the-air
transform inside the optimization loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import Waveform
from .attack_perturb import AttackResult, config_hash
from .errors import (
    ConfigurationError,
    GenerationFailureError,
    InvalidInputError,
    OptimizationFailureError,
)
from .stmodel import encode, greedy_decode, sequence_loss

CHORD_VOCAB = ["C", "Dm", "Em", "F", "G", "Am", "Bdim"]

PROMPT_PRESETS = {
    "techno": {"chords": ["Am", "F", "C", "G"], "beats": [1, 2, 1, 2, 1, 2], "te_seed": 11},
    "classical": {"chords": ["C", "G", "Am", "Em"], "beats": [1, 1, 2, 1, 1, 2], "te_seed": 23},
    "orchestral": {"chords": ["F", "G", "Em", "Am"], "beats": [1, 2, 2, 1, 2, 2], "te_seed": 37},
}


def sharpness_loss(logits, targets, alpha):
    """Cross-entropy minus alpha times the mean target logit.

    logits: one vector per target position (P x V); alpha=0 reduces to CE.
    """
    if alpha < 0:
        raise InvalidInputError("alpha must be >= 0")
    if not isinstance(logits, torch.Tensor):
        logits = torch.as_tensor(np.asarray(logits, dtype=np.float64))
    if logits.ndim == 1:
        logits = logits.unsqueeze(0)
    tgt = torch.as_tensor([int(t) for t in targets], dtype=torch.long)
    if logits.shape[0] != tgt.shape[0]:
        raise InvalidInputError(
            f"{logits.shape[0]} logit vectors for {tgt.shape[0]} target positions"
        )
    log_probs = torch.log_softmax(logits, dim=-1)
    ce = -log_probs.gather(1, tgt.unsqueeze(1)).sum()
    if alpha == 0:
        return ce
    penalty = logits.gather(1, tgt.unsqueeze(1)).mean()
    return ce - alpha * penalty


@dataclass
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or len(self.betas) < 1:
            raise ConfigurationError("schedule needs at least one beta")
        if not (np.all(self.betas > 0) and np.all(self.betas < 1)):
            raise ConfigurationError("betas must lie in (0, 1)")
        if not np.all(np.diff(self.betas) > 0):
            raise ConfigurationError("betas must be strictly increasing")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def __len__(self):
        return len(self.betas)

    @classmethod
    def linear(cls, steps, beta_start=1e-4, beta_end=0.02):
        return cls(np.linspace(beta_start, beta_end, steps))


def forward_diffuse(omega_0, schedule, t, rng):
    """One Markov step: sample from N(sqrt(1-beta_t)*omega_{t-1}, beta_t I)."""
    if not 1 <= t <= len(schedule):
        raise InvalidInputError(f"t={t} out of range [1, {len(schedule)}]")
    x = np.asarray(omega_0, dtype=np.float64)
    beta = schedule.betas[t - 1]
    return np.sqrt(1.0 - beta) * x + np.sqrt(beta) * rng.standard_normal(x.shape)


def latent_prior_kl(omega_T, weight=1.0, cap=1e9):
    """Closed-form KL of the fitted Gaussian of the latent vs N(0, 1)."""
    if isinstance(omega_T, torch.Tensor):
        x = omega_T.reshape(-1)
        if x.numel() == 0:
            raise InvalidInputError("latent is empty")
        mu = x.mean()
        var = ((x - mu) ** 2).mean()
        if float(var.detach()) == 0.0:
            return torch.as_tensor(float(cap) * weight, dtype=torch.float64)
        return weight * 0.5 * (var + mu**2 - 1.0 - torch.log(var))
    x = np.asarray(omega_T, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidInputError("latent is empty")
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    if var == 0.0:
        return float(cap) * weight
    return weight * 0.5 * (var + mu**2 - 1.0 - np.log(var))


@dataclass
class GeneratorState:
    omega_T: torch.Tensor  # (slots, tones) initial latent
    theta_c: torch.Tensor  # chord-encoder parameters
    theta_b: torch.Tensor  # beat-encoder parameters
    prompt: str = "techno"
    chords: list = None
    beats: list = None
    steps: int = 8

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        preset = PROMPT_PRESETS.get(self.prompt)
        if preset is None:
            raise ConfigurationError(f"unknown prompt preset: {self.prompt!r}")
        if self.chords is None:
            self.chords = list(preset["chords"])
        if self.beats is None:
            self.beats = list(preset["beats"])
        if not torch.all(torch.isfinite(self.omega_T)):
            raise InvalidInputError("initial latent contains non-finite values")


class SurrogateGenerator:
    """Desk-scale stand-in for a latent-diffusion music generator.

    The latent is a (slots x tones) grid; rendering places windowed
    sinusoids on a fixed tone bank, so the latent directly shapes the
    time-frequency envelope of the output.
    """

    def __init__(self, slots=6, tones=14, tone_low_hz=625.0, tone_step_hz=250.0,
                 slot_duration_s=0.075, sample_rate_hz=16000, amplitude=0.12):
        self.slots = slots
        self.tones = tones
        self.latent_shape = (slots, tones)
        self.sample_rate_hz = sample_rate_hz
        self.gradient_available = True
        n_slot = int(round(slot_duration_s * sample_rate_hz))
        self.num_samples = n_slot * slots
        t = np.arange(self.num_samples) / sample_rate_hz
        basis = np.zeros((slots, tones, self.num_samples))
        ramp = int(0.005 * sample_rate_hz)
        env = np.ones(n_slot)
        env[:ramp] = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
        env[-ramp:] = env[:ramp][::-1]
        for j in range(slots):
            sl = slice(j * n_slot, (j + 1) * n_slot)
            for k in range(tones):
                f = tone_low_hz + tone_step_hz * k
                basis[j, k, sl] = env * np.sin(2 * np.pi * f * t[sl])
        self.basis = torch.as_tensor(amplitude * basis.reshape(slots * tones, self.num_samples))

    def text_embedding(self, prompt):
        seed = PROMPT_PRESETS[prompt]["te_seed"]
        rng = np.random.default_rng(seed)
        return torch.as_tensor(rng.standard_normal((self.slots, self.tones)) * 0.3)

    def chord_embedding(self, chords, theta_c):
        idx = [CHORD_VOCAB.index(c) for c in chords]
        return theta_c[idx].mean(dim=0)  # (tones,)

    def beat_embedding(self, beats, theta_b):
        idx = torch.as_tensor([int(b) for b in beats][: self.slots], dtype=torch.long)
        return theta_b[idx, torch.arange(len(idx))]  # (slots,)

    def init_state(self, prompt="techno", steps=8, seed=0):
        gen = torch.Generator().manual_seed(seed)
        omega_T = torch.randn(self.latent_shape, generator=gen, dtype=torch.float64)
        theta_c = torch.randn((len(CHORD_VOCAB), self.tones), generator=gen,
                              dtype=torch.float64) * 0.1
        theta_b = torch.randn((3, self.slots), generator=gen, dtype=torch.float64) * 0.1
        return GeneratorState(omega_T, theta_c, theta_b, prompt=prompt, steps=steps)

    def reverse_step(self, ce, be, te, omega_next, step_index):
        cond = ce.unsqueeze(0) + be.unsqueeze(1) + te
        return 0.95 * omega_next + 0.05 * torch.tanh(omega_next) + cond / max(step_index + 1, 1)

    def generate_tensor(self, state):
        ce = self.chord_embedding(state.chords, state.theta_c)
        be = self.beat_embedding(state.beats, state.theta_b)
        te = self.text_embedding(state.prompt)
        omega = state.omega_T
        for t in range(state.steps - 1, -1, -1):
            omega = self.reverse_step(ce, be, te, omega, t)
            if not torch.all(torch.isfinite(omega)):
                raise GenerationFailureError("non-finite latent in reverse chain", step=t)
        return omega.reshape(-1) @ self.basis


def reverse_generate(gen, state, as_tensor=False):
    """Run the reverse chain from omega_T and render the final latent."""
    out = gen.generate_tensor(state)
    if as_tensor:
        return out
    return Waveform(out.detach().numpy(), gen.sample_rate_hz)


@dataclass
class MusicAttackConfig:
    languages: tuple = ("EN",)
    max_iteration: int = 1000
    learning_rate: float = 3e-2
    alpha: float = 0.1
    kl_weight: float = 0.1
    prompt: str = "techno"
    steps: int = 8
    loss_mode: str = "self_prefix"
    seed: int = 0
    ota_enabled: bool = False

    def __post_init__(self):
        if self.max_iteration < 1:
            raise ConfigurationError("max_iteration must be >= 1")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.prompt not in PROMPT_PRESETS:
            raise ConfigurationError(f"unknown prompt preset: {self.prompt!r}")

    def to_dict(self):
        return {
            "languages": list(self.languages),
            "max_iteration": self.max_iteration,
            "learning_rate": self.learning_rate,
            "alpha": self.alpha,
            "kl_weight": self.kl_weight,
            "prompt": self.prompt,
            "steps": self.steps,
            "loss_mode": self.loss_mode,
            "seed": self.seed,
            "ota_enabled": self.ota_enabled,
        }


def music_attack_loss(model, h, targets, languages, alpha, loss_mode="self_prefix"):
    """Sharpened CE accumulated over all attack languages at features h."""
    kind = "cross_entropy" if alpha == 0 else ("sharpness", alpha)
    total = None
    for lang in languages:
        part = sequence_loss(model, h, targets.tokens(lang), mode=loss_mode, loss_kind=kind)
        total = part if total is None else total + part
    return total


def run_music_attack(gen, model, targets, cfg, eot_sampler=None):
    """Jointly optimize omega_T, theta_c, theta_b until every attack
    language decodes exactly to its target (or iterations run out)."""
    if not (gen.gradient_available and model.gradient_available):
        raise ConfigurationError("generator and model must be gradient-capable")
    if gen.sample_rate_hz != model.sample_rate_hz:
        raise ConfigurationError("surrogate generator and model rates must match")
    if cfg.ota_enabled and eot_sampler is None:
        raise ConfigurationError("ota_enabled requires an eot_sampler")
    targets.validate(cfg.languages, model.vocabulary.eos_id)

    state = gen.init_state(prompt=cfg.prompt, steps=cfg.steps, seed=cfg.seed)
    state.omega_T.requires_grad_(True)
    state.theta_c.requires_grad_(True)
    state.theta_b.requires_grad_(True)
    opt = torch.optim.Adam([state.omega_T, state.theta_c, state.theta_b], lr=cfg.learning_rate)
    target_ids = {lang: targets.tokens(lang).ids for lang in cfg.languages}

    loss_trace = []
    best = None
    last = None
    iterations = 0
    for it in range(cfg.max_iteration + 1):
        x_adv = gen.generate_tensor(state)
        x_model = eot_sampler(x_adv) if cfg.ota_enabled else x_adv
        h = encode(model, x_model)
        loss = music_attack_loss(model, h, targets, cfg.languages, cfg.alpha, cfg.loss_mode)
        if cfg.kl_weight != 0:
            loss = loss + latent_prior_kl(state.omega_T, weight=cfg.kl_weight)
        loss_val = float(loss.detach())
        if not np.isfinite(loss_val):
            raise OptimizationFailureError("non-finite loss", iteration=it)
        decoded = {lang: greedy_decode(model, h, lang) for lang in cfg.languages}
        loss_trace.append(loss_val)
        iterations = it
        snapshot = (loss_val, x_adv.detach().numpy().copy(), decoded)
        last = snapshot
        if all(decoded[lang].ids == target_ids[lang] for lang in cfg.languages):
            best = snapshot
            break
        if it == cfg.max_iteration:
            break
        opt.zero_grad()
        loss.backward()
        opt.step()

    chosen = best if best is not None else last
    _, x_np, decoded = chosen
    vocab = model.vocabulary
    per_language = {}
    for lang in cfg.languages:
        seq = decoded[lang]
        per_language[lang] = {
            "text": vocab.render(seq.ids),
            "tokens": seq.ids,
            "exact_match": seq.ids == target_ids[lang],
            "esim": None,
            "nscore": None,
            "success": None,
        }
    return AttackResult(
        adversarial_waveform=Waveform(x_np, gen.sample_rate_hz),
        per_language=per_language,
        iterations_used=iterations,
        loss_trace=loss_trace,
        seed=cfg.seed,
        config_hash=config_hash(cfg.to_dict()),
        extra={
            "prompt": cfg.prompt,
            "steps": cfg.steps,
            "alpha": cfg.alpha,
            "kl_weight": cfg.kl_weight,
            "ota_enabled": cfg.ota_enabled,
        },
    )
