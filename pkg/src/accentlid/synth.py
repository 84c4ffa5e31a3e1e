"""Synthetic pseudo-languages with two simulated lexicon-free ASR systems.

Each language draws words from its own weighted syllable inventory; the
inventories overlap so short utterances are genuinely confusable. An ASR
system renders the underlying phone string through its own orthography and
adds a little recognition noise, so the same utterance yields two different
character transcripts.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .corpus import Utterance, parse_manifest

CONSONANTS = "ptkbdgmnlrsvjh"
VOWELS = "aeiou"

# orthographies of the two simulated ASR systems (phone -> grapheme)
ORTHOGRAPHY = {
    "sys_a": {},
    "sys_b": {"k": "c", "j": "y", "v": "w", "u": "oo", "h": "x"},
}


@dataclass(frozen=True)
class SynthConfig:
    languages: tuple[str, ...] = ("aru", "bel", "cim")
    shared_syllables: int = 70
    own_syllables: int = 8
    lexicon_size: int = 120
    min_words: int = 1
    max_words: int = 4
    asr_noise: float = 0.08
    seed: int = 1234


def _syllable_pool():
    cv = [c + v for c in CONSONANTS for v in VOWELS]
    cvc = [c + v + d for c, v, d in itertools.product("ptkmnlrs", VOWELS, "nrslk")]
    return cv + cvc + list(VOWELS)


class SyntheticLanguages:
    def __init__(self, cfg: SynthConfig = SynthConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        pool = _syllable_pool()
        perm = rng.permutation(len(pool))
        shared = [pool[i] for i in perm[:cfg.shared_syllables]]
        rest = [pool[i] for i in perm[cfg.shared_syllables:]]
        self.lexicons: dict[str, tuple[list[str], np.ndarray]] = {}
        for k, lang in enumerate(cfg.languages):
            own = rest[k * cfg.own_syllables:(k + 1) * cfg.own_syllables]
            sylls = shared + own
            # language-specific preference over the shared part too
            sw = rng.dirichlet(np.full(len(sylls), 0.5))
            words = set()
            while len(words) < cfg.lexicon_size:
                n = rng.choice([1, 2, 2, 3, 3, 4])
                words.add("".join(rng.choice(sylls, size=n, p=sw)))
            words = sorted(words)
            ranks = rng.permutation(len(words)) + 1
            zipf = 1.0 / ranks
            self.lexicons[lang] = (words, zipf / zipf.sum())

    def utterance_text(self, lang: str, rng: np.random.Generator) -> str:
        words, p = self.lexicons[lang]
        n = rng.integers(self.cfg.min_words, self.cfg.max_words + 1)
        return " ".join(rng.choice(words, size=n, p=p))

    def recognize(self, phones: str, system: str, rng: np.random.Generator) -> str:
        """Render a phone string as ``system``'s transcript with random substitutions."""
        ortho = ORTHOGRAPHY[system]
        letters = sorted(set(CONSONANTS + VOWELS))
        out = []
        for ch in phones:
            if ch != " " and rng.random() < self.cfg.asr_noise:
                ch = letters[rng.integers(len(letters))]
            out.append(ortho.get(ch, ch))
        return "".join(out)

    def make_split(self, n_per_language: int, split: str, seed: int) -> list[Utterance]:
        rng = np.random.default_rng(seed)
        out = []
        for lang in self.cfg.languages:
            for i in range(n_per_language):
                phones = self.utterance_text(lang, rng)
                trans = {s: self.recognize(phones, s, rng) for s in ORTHOGRAPHY}
                out.append(Utterance(f"{split}-{lang}-{i:04d}", trans, lang, "native",
                                     round(0.35 * len(phones.split()) + 0.4, 2)))
        return out


def generate_corpus(n_train: int = 200, n_test: int = 100, cfg: SynthConfig = SynthConfig()
                    ) -> tuple[list[Utterance], list[Utterance]]:
    langs = SyntheticLanguages(cfg)
    return (langs.make_split(n_train, "train", cfg.seed + 1),
            langs.make_split(n_test, "test", cfg.seed + 2))


def load_bundled(split: str) -> list[Utterance]:
    """The bundled 3-language corpus (``split`` is ``"train"`` or ``"test"``)."""
    text = resources.files("accentlid").joinpath(f"data/synth3_{split}.jsonl").read_text("utf-8")
    return parse_manifest(text.splitlines())
