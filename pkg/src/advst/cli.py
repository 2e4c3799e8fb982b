"""Configuration-driven command line: one subcommand per job kind, a JSON
config as the sole parameter source, and a manifest for reproducibility."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .audio import (
    DefenseSpec,
    PerturbationBudget,
    Waveform,
    apply_defense,
    read_wav,
    write_wav,
)
from .attack_perturb import (
    AttackResult,
    PerturbAttackConfig,
    TargetSpec,
    run_perturbation_attack,
)
from .errors import AdvstError, ConfigurationError
from .evaluation import (
    Report,
    build_report,
    calibrate_thresholds,
    esim,
    judge_success,
    nscore,
)
from .music_attack import MusicAttackConfig, SurrogateGenerator, run_music_attack
from .ota import ChannelConfig, apply_channel, make_eot_sampler
from .stmodel import CorpusConfig, load_checkpoint, save_checkpoint, train_surrogate
from .tco import TableProvider, cycle_optimize

JOB_KINDS = (
    "train-surrogate",
    "attack-perturb",
    "attack-music",
    "tco",
    "simulate-ota",
    "defend",
    "evaluate",
    "report",
)

_REQUIRED = object()


def _corpus_schema():
    return {
        "languages": (list, ["EN", "ZH", "DE", "FR"]),
        "num_meanings": (int, 12),
        "sentence_length": (int, 3),
        "num_sentences": (int, 20),
        "word_duration_s": (float, 0.15),
        "tone_amplitude": (float, 0.15),
        "tone_low_hz": (float, 1125.0),
        "tone_step_hz": (float, 250.0),
        "sample_rate_hz": (int, 16000),
    }


def _channel_schema():
    return {
        "speech_corpus_dir": ((str, type(None)), None),
        "rir_dir": ((str, type(None)), None),
        "rir_probability": (float, 0.5),
        "speech_snr_db": (list, [5.0, 20.0]),
        "white_noise_snr_db": (list, [40.0, 60.0]),
        "white_noise_enabled": (bool, True),
    }


SCHEMAS = {
    "train-surrogate": {
        "corpus": _corpus_schema(),
        "training": {
            "target_accuracy": (float, 0.9),
            "max_epochs": (int, 3000),
            "learning_rate": (float, 1e-2),
        },
    },
    "attack-perturb": {
        "checkpoint": (str, _REQUIRED),
        "cases": (
            [{"carrier_index": (int, _REQUIRED), "target_index": (int, _REQUIRED)}],
            _REQUIRED,
        ),
        "attack": {
            "languages": (list, ["EN"]),
            "epsilon": (float, 0.1),
            "band_low_hz": (float, 1000.0),
            "band_high_hz": (float, 4000.0),
            "max_iteration": (int, 500),
            "optimizer": (str, "adaptive_moments"),
            "learning_rate": (float, 1e-2),
            "loss_mode": (str, "teacher_forced"),
            "ota_enabled": (bool, False),
        },
        "ota": ((dict, type(None)), None),
        "workers": (int, 1),
    },
    "attack-music": {
        "checkpoint": (str, _REQUIRED),
        "cases": ([{"target_index": (int, _REQUIRED), "seed": (int, 0)}], _REQUIRED),
        "generator": {
            "slots": (int, 6),
            "tones": (int, 14),
            "tone_low_hz": (float, 625.0),
            "tone_step_hz": (float, 250.0),
            "slot_duration_s": (float, 0.075),
            "amplitude": (float, 0.12),
        },
        "attack": {
            "languages": (list, ["EN"]),
            "max_iteration": (int, 1000),
            "learning_rate": (float, 3e-2),
            "alpha": (float, 0.1),
            "kl_weight": (float, 0.1),
            "prompt": (str, "techno"),
            "steps": (int, 8),
            "loss_mode": (str, "self_prefix"),
            "ota_enabled": (bool, False),
        },
        "ota": ((dict, type(None)), None),
    },
    "tco": {
        "target_text": (str, _REQUIRED),
        "source_language": (str, _REQUIRED),
        "pivot_languages": (list, _REQUIRED),
        "rounds": (int, 2),
        "provider": {
            "kind": (str, "table"),
            "table": (
                [
                    {
                        "text": (str, _REQUIRED),
                        "src": (str, _REQUIRED),
                        "tgt": (str, _REQUIRED),
                        "out": (str, _REQUIRED),
                    }
                ],
                [],
            ),
            "supported_languages": (list, []),
        },
    },
    "simulate-ota": {
        "input_wav": (str, _REQUIRED),
        "channel": _channel_schema(),
    },
    "defend": {
        "input_wav": (str, _REQUIRED),
        "defenses": (
            [{"kind": (str, _REQUIRED), "parameters": (dict, {})}],
            _REQUIRED,
        ),
    },
    "evaluate": {
        "results": (str, _REQUIRED),
        "paraphrases": (dict, _REQUIRED),
        "rule": (str, "AND"),
    },
    "report": {
        "results": (list, _REQUIRED),
        "layout": (str, "per_language_table"),
        "attack_languages": (list, []),
    },
}


class ValidationError(ConfigurationError):
    pass


def _validate(doc, schema, path):
    if not isinstance(doc, dict):
        raise ValidationError(f"{path or '<root>'}: expected an object")
    out = {}
    for key in doc:
        if key not in schema:
            raise ValidationError(f"unknown key {path + key!r}")
    for key, spec in schema.items():
        here = f"{path}{key}"
        if isinstance(spec, dict):  # nested object schema
            out[key] = _validate(doc.get(key, {}), spec, here + ".")
            continue
        expected, default = spec
        if key not in doc:
            if default is _REQUIRED:
                raise ValidationError(f"missing required key {here!r}")
            out[key] = default
            continue
        value = doc[key]
        if isinstance(expected, list):  # list of objects with element schema
            if not isinstance(value, list):
                raise ValidationError(f"{here!r} must be a list")
            out[key] = [
                _validate(v, expected[0], f"{here}[{i}].") for i, v in enumerate(value)
            ]
            continue
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or (
            expected in (int, float) and isinstance(value, bool)
        ):
            raise ValidationError(f"{here!r} has wrong type {type(value).__name__}")
        out[key] = value
    return out


@dataclass
class JobConfig:
    kind: str
    params: dict
    seed: int
    output_dir: str

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @property
    def hash(self):
        canonical = json.dumps({"kind": self.kind, "params": self.params, "seed": self.seed},
                               sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def validate_config(document, kind, seed_override=None, out_override=None):
    """Schema-check and fully default a job config document."""
    if kind not in SCHEMAS:
        raise ValidationError(f"unknown job kind: {kind!r}")
    doc = dict(document)
    seed = doc.pop("seed", None)
    out_dir = doc.pop("output_dir", None)
    params = _validate(doc, SCHEMAS[kind], "")
    if seed_override is not None:
        seed = seed_override
    if seed is None:
        raise ValidationError("missing required key 'seed'")
    if out_override is not None:
        out_dir = out_override
    if out_dir is None:
        raise ValidationError("missing output directory ('output_dir' or --out)")
    return JobConfig(kind, params, int(seed), str(out_dir))


class _ArtifactWriter:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.names = []

    def path(self, name):
        self.names.append(name)
        return self.out_dir / name

    def write_json(self, name, obj):
        p = self.path(name)
        p.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def manifest(self, cfg):
        entries = []
        for name in sorted(self.names):
            digest = hashlib.sha256((self.out_dir / name).read_bytes()).hexdigest()
            entries.append({"name": name, "sha256": digest})
        doc = {
            "job": cfg.kind,
            "config_hash": cfg.hash,
            "code_version": __version__,
            "seed": cfg.seed,
            "artifacts": entries,
        }
        (self.out_dir / "manifest.json").write_text(
            json.dumps(doc, sort_keys=True, indent=2) + "\n"
        )
        return doc


def _resolve_targets(corpus, target_index, languages):
    per_language = {
        lang: (corpus.target_text(target_index, lang), corpus.target_tokens(target_index, lang))
        for lang in languages
    }
    return TargetSpec(corpus.target_text(target_index, languages[0]), per_language)


def _score_result(result, targets, languages):
    """Fill esim/nscore/success on an AttackResult using the fallback scorers
    calibrated on the target text itself."""
    for lang in languages:
        rec = result.per_language[lang]
        tgt_text = targets.text(lang)
        thresholds = calibrate_thresholds(tgt_text, [tgt_text])
        out_text = rec["text"]
        if out_text.strip():
            rec["esim"] = esim(out_text, tgt_text)
            rec["nscore"] = nscore(tgt_text, out_text)
            rec["success"] = judge_success(out_text, tgt_text, thresholds)
        else:
            rec["esim"] = 0.0
            rec["nscore"] = 0.0
            rec["success"] = False


def _result_rows(case_id, carrier_id, target_id, result, languages):
    rows = []
    for lang in languages:
        rec = result.per_language[lang]
        rows.append(
            {
                "case": case_id,
                "carrier_id": carrier_id,
                "target_id": target_id,
                "language": lang,
                "seen": True,
                "esim": rec["esim"],
                "nscore": rec["nscore"],
                "success": bool(rec["success"]),
            }
        )
    return rows


def _job_train_surrogate(cfg, writer):
    corpus_cfg = CorpusConfig.from_dict(cfg.params["corpus"])
    tr = cfg.params["training"]
    model = train_surrogate(
        corpus_cfg,
        cfg.seed,
        target_accuracy=tr["target_accuracy"],
        max_epochs=tr["max_epochs"],
        learning_rate=tr["learning_rate"],
    )
    save_checkpoint(model, writer.path("surrogate.ckpt"))
    corpus = model.corpus
    writer.write_json(
        "corpus.json",
        {
            "config": corpus_cfg.to_dict(),
            "seed": cfg.seed,
            "sentences": [list(map(int, s)) for s in corpus.sentences],
            "texts": {
                lang: [corpus.target_text(i, lang) for i in range(len(corpus.sentences))]
                for lang in corpus_cfg.languages
            },
            "accuracy": model.training_accuracy,
        },
    )


def _maybe_sampler(ota_params, seed, sample_rate_hz):
    if ota_params is None:
        return None
    params = _validate(ota_params, _channel_schema(), "ota.")
    chan = ChannelConfig(
        speech_corpus_dir=params["speech_corpus_dir"],
        rir_dir=params["rir_dir"],
        rir_probability=params["rir_probability"],
        speech_snr_db=tuple(params["speech_snr_db"]),
        white_noise_snr_db=tuple(params["white_noise_snr_db"]),
        white_noise_enabled=params["white_noise_enabled"],
        seed=seed,
    )
    return make_eot_sampler(chan, sample_rate_hz)


def _job_attack_perturb(cfg, writer):
    model = load_checkpoint(cfg.params["checkpoint"])
    corpus = model.corpus
    a = cfg.params["attack"]
    languages = tuple(a["languages"])
    rows, results = [], []
    for i, case in enumerate(cfg.params["cases"]):
        targets = _resolve_targets(corpus, case["target_index"], languages)
        attack_cfg = PerturbAttackConfig(
            languages=languages,
            budget=PerturbationBudget(a["epsilon"], a["band_low_hz"], a["band_high_hz"]),
            max_iteration=a["max_iteration"],
            optimizer=a["optimizer"],
            learning_rate=a["learning_rate"],
            loss_mode=a["loss_mode"],
            seed=cfg.seed + i,
            ota_enabled=a["ota_enabled"],
        )
        sampler = _maybe_sampler(cfg.params["ota"], cfg.seed + i, model.sample_rate_hz)
        result = run_perturbation_attack(
            model, corpus.audio(case["carrier_index"]), targets, attack_cfg, eot_sampler=sampler
        )
        _score_result(result, targets, languages)
        write_wav(writer.path(f"x_adv_{i:03d}.wav"), result.adversarial_waveform)
        results.append({"case": i, **case, **result.to_dict()})
        rows.extend(_result_rows(i, case["carrier_index"], case["target_index"], result, languages))
    writer.write_json("results.json", results)
    report = build_report(rows, attack_languages=languages)
    writer.path("results.csv").write_text(report.to_csv())


def _job_attack_music(cfg, writer):
    model = load_checkpoint(cfg.params["checkpoint"])
    corpus = model.corpus
    g = cfg.params["generator"]
    gen = SurrogateGenerator(
        slots=g["slots"],
        tones=g["tones"],
        tone_low_hz=g["tone_low_hz"],
        tone_step_hz=g["tone_step_hz"],
        slot_duration_s=g["slot_duration_s"],
        sample_rate_hz=model.sample_rate_hz,
        amplitude=g["amplitude"],
    )
    a = cfg.params["attack"]
    languages = tuple(a["languages"])
    rows, results = [], []
    for i, case in enumerate(cfg.params["cases"]):
        targets = _resolve_targets(corpus, case["target_index"], languages)
        attack_cfg = MusicAttackConfig(
            languages=languages,
            max_iteration=a["max_iteration"],
            learning_rate=a["learning_rate"],
            alpha=a["alpha"],
            kl_weight=a["kl_weight"],
            prompt=a["prompt"],
            steps=a["steps"],
            loss_mode=a["loss_mode"],
            seed=case["seed"],
            ota_enabled=a["ota_enabled"],
        )
        sampler = _maybe_sampler(cfg.params["ota"], cfg.seed + i, model.sample_rate_hz)
        result = run_music_attack(gen, model, targets, attack_cfg, eot_sampler=sampler)
        _score_result(result, targets, languages)
        write_wav(writer.path(f"music_{i:03d}.wav"), result.adversarial_waveform)
        results.append({"case": i, **case, **result.to_dict()})
        rows.extend(_result_rows(i, "generated", case["target_index"], result, languages))
    writer.write_json("results.json", results)
    report = build_report(rows, attack_languages=languages)
    writer.path("results.csv").write_text(report.to_csv())


def _job_tco(cfg, writer):
    p = cfg.params["provider"]
    if p["kind"] != "table":
        raise ConfigurationError(f"unknown provider kind: {p['kind']!r}")
    table = {(e["text"], e["src"], e["tgt"]): e["out"] for e in p["table"]}
    provider = TableProvider(table, p["supported_languages"])
    chosen, trace = cycle_optimize(
        provider,
        cfg.params["target_text"],
        cfg.params["source_language"],
        cfg.params["pivot_languages"],
        rounds=cfg.params["rounds"],
    )
    writer.write_json("tco.json", {"chosen": chosen, **trace.to_dict()})


def _job_simulate_ota(cfg, writer):
    w = read_wav(cfg.params["input_wav"])
    c = cfg.params["channel"]
    chan = ChannelConfig(
        speech_corpus_dir=c["speech_corpus_dir"],
        rir_dir=c["rir_dir"],
        rir_probability=c["rir_probability"],
        speech_snr_db=tuple(c["speech_snr_db"]),
        white_noise_snr_db=tuple(c["white_noise_snr_db"]),
        white_noise_enabled=c["white_noise_enabled"],
        seed=cfg.seed,
    )
    out, realization = apply_channel(w, chan)
    write_wav(writer.path("ota.wav"), out)
    writer.write_json("realization.json", realization.to_dict())


def _job_defend(cfg, writer):
    w = read_wav(cfg.params["input_wav"])
    metas = []
    for d in cfg.params["defenses"]:
        spec = DefenseSpec(d["kind"], d["parameters"])
        rng = np.random.default_rng(cfg.seed)
        out = apply_defense(w, spec, rng=rng)
        write_wav(writer.path(f"defended_{spec.kind}.wav"), out)
        metas.append(out.meta)
    writer.write_json("defenses.json", metas)


def _job_evaluate(cfg, writer):
    rows = json.loads(Path(cfg.params["results"]).read_text())
    paraphrases = cfg.params["paraphrases"]
    rule = cfg.params["rule"]
    judged = []
    thresholds_out = {}
    for row in rows:
        target = row["target_text"]
        variants = paraphrases.get(target, [target])
        thresholds = calibrate_thresholds(target, variants)
        thresholds_out[target] = thresholds.to_dict()
        out_text = row["output_text"]
        ok = bool(out_text.strip()) and judge_success(out_text, target, thresholds, rule=rule)
        judged.append(
            {
                **row,
                "esim": esim(out_text, target) if out_text.strip() else 0.0,
                "nscore": nscore(target, out_text) if out_text.strip() else 0.0,
                "success": bool(ok),
            }
        )
    writer.write_json("thresholds.json", thresholds_out)
    writer.write_json("judged.json", judged)


def _job_report(cfg, writer):
    rows = []
    for path in cfg.params["results"]:
        rows.extend(json.loads(Path(path).read_text()))
    report = build_report(
        rows,
        layout=cfg.params["layout"],
        attack_languages=tuple(cfg.params["attack_languages"]),
    )
    writer.write_json("report.json", report.to_dict())
    writer.path("report.csv").write_text(report.to_csv())


_JOBS = {
    "train-surrogate": _job_train_surrogate,
    "attack-perturb": _job_attack_perturb,
    "attack-music": _job_attack_music,
    "tco": _job_tco,
    "simulate-ota": _job_simulate_ota,
    "defend": _job_defend,
    "evaluate": _job_evaluate,
    "report": _job_report,
}


def execute_job(cfg):
    """Run a validated job; returns the manifest dict."""
    torch.set_num_threads(1)  # keeps results bit-reproducible across runs
    writer = _ArtifactWriter(cfg.output_dir)
    _JOBS[cfg.kind](cfg, writer)
    return writer.manifest(cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="advst", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in JOB_KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        document = json.loads(Path(args.config).read_text())
        cfg = validate_config(document, args.kind, seed_override=args.seed,
                              out_override=args.out)
        execute_job(cfg)
    except AdvstError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
