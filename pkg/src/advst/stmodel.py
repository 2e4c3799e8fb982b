"""Victim-model abstraction plus a deterministic desk-scale surrogate.

The surrogate maps "tone-word" audio (each word is a fixed-frequency tone
segment) to token sequences in several toy languages that share underlying
meaning ids. It is small enough to train on one CPU core in seconds but
rich enough that targeted attacks are non-trivial.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import Waveform
from .errors import ConfigurationError, InvalidInputError, TrainingFailureError

CHECKPOINT_MAGIC = b"ADVSTCK1"
CHECKPOINT_VERSION = 1


@dataclass
class Vocabulary:
    tokens: list
    bos_id: int
    eos_id: int
    pad_id: int
    language_token: dict  # language id -> token id

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigurationError("vocabulary tokens must be unique")
        if len({self.bos_id, self.eos_id, self.pad_id}) != 3:
            raise ConfigurationError("BOS/EOS/PAD ids must be distinct")

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token):
        return self.tokens.index(token)

    def render(self, ids):
        """Join the body tokens (specials and language tokens skipped)."""
        special = {self.bos_id, self.eos_id, self.pad_id} | set(self.language_token.values())
        return " ".join(self.tokens[i] for i in ids if i not in special)


@dataclass
class TokenSequence:
    ids: list
    terminated: bool = True

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if isinstance(other, TokenSequence):
            return self.ids == other.ids
        return NotImplemented

    def body(self, vocab):
        """Tokens after [BOS, lang], excluding the trailing EOS."""
        out = list(self.ids[2:])
        if out and out[-1] == vocab.eos_id:
            out.pop()
        return out


@dataclass
class EncoderFeatures:
    vectors: torch.Tensor  # frames x dim
    gradient_capable: bool = False


@dataclass
class CorpusConfig:
    """Synthetic tone-word corpus: shared meaning ids, per-language surfaces."""

    languages: tuple = ("EN", "ZH", "DE", "FR")
    num_meanings: int = 12
    sentence_length: int = 3
    num_sentences: int = 20
    word_duration_s: float = 0.15
    tone_amplitude: float = 0.15
    tone_low_hz: float = 1125.0
    tone_step_hz: float = 250.0
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if not self.languages:
            raise ConfigurationError("corpus needs at least one language")
        if self.num_meanings < self.sentence_length:
            raise ConfigurationError("need at least sentence_length meanings")
        if self.num_meanings <= 0:
            raise ConfigurationError("empty word list")

    def tone_hz(self, meaning):
        return self.tone_low_hz + self.tone_step_hz * meaning

    def to_dict(self):
        d = self.__dict__.copy()
        d["languages"] = list(self.languages)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["languages"] = tuple(d.get("languages", ("EN", "ZH", "DE", "FR")))
        return cls(**d)


def build_vocabulary(config):
    tokens = ["<pad>", "<bos>", "<eos>"]
    language_token = {}
    for lang in config.languages:
        language_token[lang] = len(tokens)
        tokens.append(f"<lang:{lang}>")
    word_id = {}
    for lang in config.languages:
        for m in range(config.num_meanings):
            word_id[(lang, m)] = len(tokens)
            tokens.append(f"{lang.lower()}_{m:02d}")
    vocab = Vocabulary(tokens, bos_id=1, eos_id=2, pad_id=0, language_token=language_token)
    return vocab, word_id


def synthesize_sentence(meanings, config):
    """Concatenated tone segments with short cosine ramps at the edges."""
    sr = config.sample_rate_hz
    n_word = int(round(config.word_duration_s * sr))
    ramp = int(0.005 * sr)
    env = np.ones(n_word)
    env[:ramp] = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
    env[-ramp:] = env[:ramp][::-1]
    parts = []
    for m in meanings:
        t = np.arange(n_word) / sr
        parts.append(config.tone_amplitude * env * np.sin(2 * np.pi * config.tone_hz(m) * t))
    return Waveform(np.concatenate(parts), sr)


@dataclass
class Corpus:
    config: CorpusConfig
    sentences: list  # list of meaning-id tuples, unique as sets
    vocab: Vocabulary
    word_id: dict

    def audio(self, index):
        return synthesize_sentence(self.sentences[index], self.config)

    def target_tokens(self, index, language):
        v = self.vocab
        ids = [v.bos_id, v.language_token[language]]
        ids += [self.word_id[(language, m)] for m in self.sentences[index]]
        ids.append(v.eos_id)
        return TokenSequence(ids)

    def target_text(self, index, language):
        return " ".join(
            self.vocab.tokens[self.word_id[(language, m)]] for m in self.sentences[index]
        )


def build_corpus(config, seed):
    """Sample unique meaning-id sentences (unique as unordered sets)."""
    rng = np.random.default_rng(seed)
    sentences, seen = [], set()
    guard = 0
    while len(sentences) < config.num_sentences:
        s = tuple(rng.choice(config.num_meanings, size=config.sentence_length, replace=False))
        key = frozenset(s)
        if key not in seen:
            seen.add(key)
            sentences.append(s)
        guard += 1
        if guard > 100000:
            raise ConfigurationError("cannot sample enough distinct sentences")
    vocab, word_id = build_vocabulary(config)
    return Corpus(config, sentences, vocab, word_id)


class SurrogateModel(torch.nn.Module):
    """Frame band-energy featurizer -> MLP encoder -> mean-pooled context;
    decoder = token embedding + one hidden layer + vocabulary projection."""

    FRAME = 256
    HOP = 128
    BANDS = 32
    D_ENC = 48
    D_EMB = 32
    D_HID = 64

    def __init__(self, vocab, corpus_config, corpus_seed):
        super().__init__()
        self.vocabulary = vocab
        self.corpus_config = corpus_config
        self.corpus_seed = corpus_seed
        self.sample_rate_hz = corpus_config.sample_rate_hz
        self.gradient_available = True
        self.text_to_text_available = False
        v = len(vocab)
        self.enc1 = torch.nn.Linear(self.BANDS, self.D_ENC).double()
        self.enc2 = torch.nn.Linear(self.D_ENC, self.D_ENC).double()
        self.emb = torch.nn.Embedding(v, self.D_EMB).double()
        self.dec_hidden = torch.nn.Linear(self.D_ENC + self.D_EMB, self.D_HID).double()
        self.dec_out = torch.nn.Linear(self.D_HID, v).double()
        self.register_buffer("window", torch.hann_window(self.FRAME, dtype=torch.float64))
        self.register_buffer("band_matrix", self._make_band_matrix())

    def _make_band_matrix(self):
        nbins = self.FRAME // 2 + 1
        freqs = np.fft.rfftfreq(self.FRAME, d=1.0 / self.sample_rate_hz)
        width = (self.sample_rate_hz / 2) / self.BANDS
        mat = np.zeros((self.BANDS, nbins))
        for b in range(self.BANDS):
            mat[b, (freqs >= b * width) & (freqs < (b + 1) * width)] = 1.0
        mat[-1, -1] = 1.0  # Nyquist bin
        return torch.as_tensor(mat)

    def band_energies(self, x):
        """Per-frame log band power; differentiable in the waveform."""
        if x.numel() < self.FRAME:
            raise InvalidInputError(
                f"input too short: need at least {self.FRAME} samples"
            )
        frames = x.unfold(0, self.FRAME, self.HOP) * self.window
        spec = torch.fft.rfft(frames, dim=-1)
        power = spec.real**2 + spec.imag**2
        return torch.log(power @ self.band_matrix.T + 1e-4)

    def encode_tensor(self, x):
        feat = self.band_energies(x)
        return self.enc2(torch.tanh(self.enc1(feat)))

    def step_logits(self, context, prev_ids):
        """Logits given mean-pooled context and previous token id(s)."""
        prev = torch.as_tensor(prev_ids, dtype=torch.long)
        squeeze = prev.ndim == 0
        if squeeze:
            prev = prev.unsqueeze(0)
        e = self.emb(prev)
        ctx = context.unsqueeze(0).expand(e.shape[0], -1)
        h = torch.tanh(self.dec_hidden(torch.cat([ctx, e], dim=-1)))
        out = self.dec_out(h)
        return out[0] if squeeze else out


def _waveform_tensor(w, model):
    if isinstance(w, torch.Tensor):
        return w
    if isinstance(w, Waveform):
        if w.sample_rate_hz != model.sample_rate_hz:
            raise InvalidInputError(
                f"waveform rate {w.sample_rate_hz} != model rate {model.sample_rate_hz}"
            )
        return torch.as_tensor(w.samples)
    return torch.as_tensor(np.asarray(w, dtype=np.float64))


def encode(model, w):
    x = _waveform_tensor(w, model)
    vectors = model.encode_tensor(x)
    return EncoderFeatures(vectors, gradient_capable=x.requires_grad)


def _check_prefix(model, prefix):
    ids = prefix.ids if isinstance(prefix, TokenSequence) else list(prefix)
    v = model.vocabulary
    if len(ids) < 2 or ids[0] != v.bos_id or ids[1] not in v.language_token.values():
        raise InvalidInputError("decoder prefix must start with [BOS, language token]")
    return ids


def next_token_logits(model, h, prefix):
    ids = _check_prefix(model, prefix)
    context = h.vectors.mean(dim=0)
    return model.step_logits(context, ids[-1])


def _argmax_token(logits):
    # ties broken by lowest id
    return int(np.argmax(logits.detach().numpy()))


def greedy_decode(model, h, language, max_len=64):
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    v = model.vocabulary
    ids = [v.bos_id, v.language_token[language]]
    context = h.vectors.mean(dim=0)
    terminated = False
    for _ in range(max_len):
        tok = _argmax_token(model.step_logits(context, ids[-1]))
        ids.append(tok)
        if tok == v.eos_id:
            terminated = True
            break
    return TokenSequence(ids, terminated=terminated)


def _step_ce(logits, target_id):
    return -torch.log_softmax(logits, dim=-1)[target_id]


def sequence_loss(model, h, target, mode="teacher_forced", loss_kind="cross_entropy", max_len=64):
    """Sum of per-position losses for producing `target` from features `h`.

    teacher_forced scores each position against the target's own prefix;
    self_prefix follows the model's greedy chain, scoring min(len) positions.
    loss_kind is "cross_entropy" or ("sharpness", alpha).
    """
    v = model.vocabulary
    ids = _check_prefix(model, target)
    if len(ids) < 4 or ids[2] == v.eos_id:
        raise InvalidInputError("target has an empty body")
    context = h.vectors.mean(dim=0)
    step_logits, step_targets = [], []
    if mode == "teacher_forced":
        for m in range(2, len(ids)):
            step_logits.append(model.step_logits(context, ids[m - 1]))
            step_targets.append(ids[m])
    elif mode == "self_prefix":
        prev = ids[1]
        count = 0
        for _ in range(max_len):
            logits = model.step_logits(context, prev)
            if 2 + count < len(ids):
                step_logits.append(logits)
                step_targets.append(ids[2 + count])
            tok = _argmax_token(logits)
            count += 1
            if tok == v.eos_id:
                break
            prev = tok
    else:
        raise ConfigurationError(f"unknown loss mode: {mode!r}")
    logit_mat = torch.stack(step_logits)
    targets = step_targets
    ce = torch.stack([_step_ce(lg, t) for lg, t in zip(step_logits, targets)]).sum()
    if loss_kind == "cross_entropy":
        return ce
    if isinstance(loss_kind, (tuple, list)) and loss_kind[0] == "sharpness":
        alpha = float(loss_kind[1])
        if alpha < 0:
            raise InvalidInputError("sharpness alpha must be >= 0")
        tgt_idx = torch.as_tensor(targets, dtype=torch.long)
        penalty = logit_mat.gather(1, tgt_idx.unsqueeze(1)).mean()
        return ce - alpha * penalty
    raise ConfigurationError(f"unknown loss kind: {loss_kind!r}")


def train_surrogate(
    corpus_config,
    seed,
    target_accuracy=0.9,
    max_epochs=3000,
    learning_rate=1e-2,
    check_every=25,
):
    """Build the synthetic corpus and train the surrogate to >= 90% exact match.

    Fully deterministic given (corpus_config, seed).
    """
    corpus = build_corpus(corpus_config, seed)
    torch.manual_seed(seed)
    model = SurrogateModel(corpus.vocab, corpus_config, seed)

    # featurizer has no parameters: cache band energies once
    feats = [model.band_energies(torch.as_tensor(corpus.audio(i).samples))
             for i in range(len(corpus.sentences))]
    contexts_input = feats

    pairs = [(s, lang) for s in range(len(corpus.sentences)) for lang in corpus_config.languages]
    steps = []  # (sentence, prev_id, target_id)
    for s, lang in pairs:
        ids = corpus.target_tokens(s, lang).ids
        for m in range(2, len(ids)):
            steps.append((s, ids[m - 1], ids[m]))
    prev_ids = torch.as_tensor([p for _, p, _ in steps], dtype=torch.long)
    tgt_ids = torch.as_tensor([t for _, _, t in steps], dtype=torch.long)
    sent_idx = torch.as_tensor([s for s, _, _ in steps], dtype=torch.long)

    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    ce = torch.nn.CrossEntropyLoss()

    def exact_match_rate():
        model.eval()
        with torch.no_grad():
            good = 0
            for s, lang in pairs:
                h = EncoderFeatures(model.enc2(torch.tanh(model.enc1(contexts_input[s]))))
                if greedy_decode(model, h, lang).ids == corpus.target_tokens(s, lang).ids:
                    good += 1
        model.train()
        return good / len(pairs)

    accuracy = 0.0
    for epoch in range(1, max_epochs + 1):
        contexts = torch.stack(
            [model.enc2(torch.tanh(model.enc1(f))).mean(dim=0) for f in contexts_input]
        )
        e = model.emb(prev_ids)
        hdn = torch.tanh(model.dec_hidden(torch.cat([contexts[sent_idx], e], dim=-1)))
        loss = ce(model.dec_out(hdn), tgt_ids)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if epoch % check_every == 0:
            accuracy = exact_match_rate()
            if accuracy >= target_accuracy:
                break
    else:
        accuracy = exact_match_rate()
    if accuracy < target_accuracy:
        raise TrainingFailureError(
            f"surrogate reached {accuracy:.3f} exact match after {max_epochs} epochs",
            diagnostics={"accuracy": accuracy, "final_loss": float(loss)},
        )
    model.eval()
    model.training_accuracy = accuracy
    model.corpus = corpus
    return model


def save_checkpoint(model, path):
    """Structured binary: magic, version, JSON header, raw float64 arrays."""
    header = {
        "version": CHECKPOINT_VERSION,
        "vocabulary": {
            "tokens": model.vocabulary.tokens,
            "bos_id": model.vocabulary.bos_id,
            "eos_id": model.vocabulary.eos_id,
            "pad_id": model.vocabulary.pad_id,
            "language_token": model.vocabulary.language_token,
        },
        "corpus_config": model.corpus_config.to_dict(),
        "corpus_seed": model.corpus_seed,
        "accuracy": getattr(model, "training_accuracy", None),
        "params": [],
    }
    blobs = []
    for name, p in sorted(model.state_dict().items()):
        arr = p.detach().numpy().astype("<f8")
        header["params"].append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise InvalidInputError("not a surrogate checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        if header["version"] != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {header['version']}")
        vb = header["vocabulary"]
        vocab = Vocabulary(
            vb["tokens"], vb["bos_id"], vb["eos_id"], vb["pad_id"],
            {k: int(v) for k, v in vb["language_token"].items()},
        )
        cfg = CorpusConfig.from_dict(header["corpus_config"])
        model = SurrogateModel(vocab, cfg, header["corpus_seed"])
        state = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * 8)
            state[spec["name"]] = torch.as_tensor(
                np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            )
    model.load_state_dict(state)
    model.eval()
    model.training_accuracy = header.get("accuracy")
    model.corpus = build_corpus(cfg, header["corpus_seed"])
    return model
