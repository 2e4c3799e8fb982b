"""Target Cycle Optimization: replace the attack target with its most
frequent round-trip retranslation through a set of pivot languages."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ConfigurationError


class T2TTProvider:
    """Text-to-text translation backend. Real models attach here; tests use
    table-driven mocks."""

    supported_languages = ()

    def translate(self, text, src, tgt):
        raise NotImplementedError


class TableProvider(T2TTProvider):
    """Deterministic mock: (text, src, tgt) -> text lookup with identity fallback."""

    def __init__(self, table, supported_languages=()):
        self.table = dict(table)
        self.supported_languages = tuple(supported_languages)

    def translate(self, text, src, tgt):
        return self.table.get((text, src, tgt), text)


@dataclass
class CycleTrace:
    rounds: list = field(default_factory=list)  # (pivot, forward text, retranslated text)
    frequency: dict = field(default_factory=dict)
    chosen: str = ""

    def to_dict(self):
        return {
            "rounds": [
                {"pivot": p, "forward": f, "retranslated": r} for p, f, r in self.rounds
            ],
            "frequency": dict(self.frequency),
            "chosen": self.chosen,
        }


def normalize_for_counting(text):
    """Trim, collapse internal whitespace, strip one terminal .?! (counting only)."""
    t = re.sub(r"\s+", " ", text.strip())
    return re.sub(r"[.?!]$", "", t)


def cycle_optimize(provider, target_text, source_language, pivot_languages, rounds=2):
    """Round-trip the target through every pivot and pick the most frequent
    retranslation; the original target gets one vote so an unstable cycle
    cannot promote singleton noise."""
    if rounds < 1:
        raise ConfigurationError("rounds must be >= 1")
    if not pivot_languages:
        raise ConfigurationError("need at least one pivot language")
    if provider.supported_languages:
        unsupported = [p for p in pivot_languages if p not in provider.supported_languages]
        if unsupported:
            raise ConfigurationError(f"pivots not supported by provider: {unsupported}")

    trace = CycleTrace()
    pool = {}  # normalized -> (count, first raw form)
    norm_target = normalize_for_counting(target_text)
    pool[norm_target] = [1, target_text]

    text = target_text
    for _ in range(rounds):
        # each round re-translates the currently most frequent candidate
        for pivot in pivot_languages:
            try:
                forward = provider.translate(text, source_language, pivot)
                back = provider.translate(forward, pivot, source_language)
            except Exception as exc:
                raise type(exc)(f"{exc} (pivot={pivot})") from exc
            trace.rounds.append((pivot, forward, back))
            key = normalize_for_counting(back)
            if key in pool:
                pool[key][0] += 1
            else:
                pool[key] = [1, back]
        best_key = min(pool, key=lambda k: (-pool[k][0], k))
        text = pool[best_key][1]

    # higher count first, then lexicographically smallest normalized form
    best_key = min(pool, key=lambda k: (-pool[k][0], k))
    trace.frequency = {k: v[0] for k, v in sorted(pool.items())}
    trace.chosen = pool[best_key][1]
    return trace.chosen, trace
