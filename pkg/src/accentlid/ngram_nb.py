"""Word-internal character n-gram multinomial Naive Bayes over ASR transcripts."""
from __future__ import annotations

import json
import os
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .corpus import LabelSet, LanguageId, ScoreVector, Utterance, atomic_write_text, require_labels

PROFILE_FORMAT = "accentlid-nb-profile"
PROFILE_VERSION = 1


@dataclass(frozen=True)
class NGramFeatureConfig:
    n: int = 4
    pad_char: str = " "
    lowercase: bool = True
    word_internal: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n-gram order must be >= 1")
        if len(self.pad_char) != 1:
            raise ValueError("pad_char must be a single character")
        if not self.word_internal:
            raise ValueError("only word-internal n-grams are supported")


def normalize_text(text: str, config: NGramFeatureConfig = NGramFeatureConfig()) -> str:
    """Lowercase (optional) and collapse whitespace runs."""
    if config.lowercase:
        text = text.lower()
    return " ".join(text.split())


def extract_ngrams(text: str, config: NGramFeatureConfig = NGramFeatureConfig()) -> list[str]:
    """Character n-grams of each space-padded word, in text order.

    Words whose padded form is shorter than ``n`` yield the padded word itself.
    """
    n, pad = config.n, config.pad_char
    out: list[str] = []
    for word in normalize_text(text, config).split():
        padded = pad + word + pad
        if len(padded) < n:
            out.append(padded)
        else:
            out.extend(padded[i:i + n] for i in range(len(padded) - n + 1))
    return out


@dataclass(eq=False)
class NGramProfile:
    """Trained NB model: per-language n-gram counts over a shared vocabulary.

    ``counts`` is a K x V integer matrix whose columns follow ``vocab``.
    """
    config: NGramFeatureConfig
    labels: LabelSet
    vocab: tuple[str, ...]
    counts: np.ndarray
    alpha: float = 0.95
    priors: np.ndarray = None
    _vocab_index: dict = field(init=False, repr=False)
    _log_probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K, V = len(self.labels), len(self.vocab)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (K, V):
            raise ValueError(f"counts shape {self.counts.shape} != ({K}, {V})")
        if np.any(self.counts < 0):
            raise ValueError("negative n-gram count")
        if not self.alpha > 0:
            raise ValueError("smoothing constant alpha must be > 0")
        if self.priors is None:
            self.priors = np.full(K, 1.0 / K)
        self.priors = np.asarray(self.priors, dtype=float)
        if self.priors.shape != (K,) or np.any(self.priors <= 0) or abs(self.priors.sum() - 1) > 1e-12:
            raise ValueError("priors must be K positive numbers summing to 1")
        self._vocab_index = {g: i for i, g in enumerate(self.vocab)}
        denom = self.totals + self.alpha * V
        self._log_probs = np.log(self.counts + self.alpha) - np.log(denom)[:, None]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def count(self, code: str, gram: str) -> int:
        j = self._vocab_index.get(gram)
        return 0 if j is None else int(self.counts[self.labels.index(code), j])

    def log_prob_table(self) -> np.ndarray:
        """K x V matrix of smoothed log P(gram | language)."""
        return self._log_probs

    def features(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """In-vocabulary column indices and multiplicities; OOV grams are dropped."""
        grams = Counter(extract_ngrams(text, self.config))
        idx, mult = [], []
        for g, m in grams.items():
            j = self._vocab_index.get(g)
            if j is not None:
                idx.append(j)
                mult.append(m)
        return np.array(idx, dtype=np.int64), np.array(mult, dtype=float)

    def log_joint(self, text: str) -> np.ndarray:
        idx, mult = self.features(text)
        return np.log(self.priors) + self._log_probs[:, idx] @ mult

    # -- serialization --

    def to_text(self) -> str:
        doc = {
            "format": PROFILE_FORMAT,
            "version": PROFILE_VERSION,
            "config": asdict(self.config),
            "alpha": self.alpha,
            "labels": list(self.labels.codes),
            "priors": [float(p) for p in self.priors],
            "counts": {
                code: {g: int(c) for g, c in zip(self.vocab, row) if c}
                for code, row in zip(self.labels.codes, self.counts)
            },
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NGramProfile":
        doc = json.loads(text)
        if doc.get("format") != PROFILE_FORMAT:
            raise ValueError("not an NB profile")
        if doc.get("version") != PROFILE_VERSION:
            raise ValueError(f"unsupported NB profile version {doc.get('version')!r}")
        labels = LabelSet(doc["labels"])
        vocab = tuple(sorted({g for table in doc["counts"].values() for g in table}))
        col = {g: j for j, g in enumerate(vocab)}
        counts = np.zeros((len(labels), len(vocab)), dtype=np.int64)
        for code, table in doc["counts"].items():
            i = labels.index(code)
            for g, c in table.items():
                counts[i, col[g]] = c
        return cls(NGramFeatureConfig(**doc["config"]), labels, vocab, counts,
                   alpha=doc["alpha"], priors=np.array(doc["priors"]))

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NGramProfile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def count_ngrams(texts_by_label: Iterable[tuple[str, str]],
                 config: NGramFeatureConfig) -> dict[str, Counter]:
    """Per-label n-gram Counters. Shards can be merged by Counter addition."""
    counts: dict[str, Counter] = {}
    for label, text in texts_by_label:
        counts.setdefault(label, Counter()).update(extract_ngrams(text, config))
    return counts


def train_nb(data: Sequence[Utterance], asr_name: str,
             config: NGramFeatureConfig = NGramFeatureConfig(),
             alpha: float = 0.95, prior_mode: str = "uniform",
             labels: LabelSet | None = None) -> NGramProfile:
    """Fit an NB profile on the ``asr_name`` transcripts of labeled utterances.

    ``prior_mode`` is ``"uniform"`` or ``"empirical"`` (utterance frequencies).
    """
    if not data:
        raise ValueError("empty training set")
    require_labels(data)
    labels = labels or LabelSet.from_utterances(data)
    pairs = []
    for u in data:
        if u.label not in labels:
            raise ValueError(f"utterance {u.id!r}: label {u.label!r} not in label set")
        pairs.append((u.label, u.transcript(asr_name)))
    n_utt = Counter(u.label for u in data)
    missing = [c for c in labels.codes if n_utt[c] == 0]
    if missing:
        raise ValueError(f"no training utterances for languages {missing}")

    per_lang = count_ngrams(pairs, config)
    vocab = tuple(sorted(set().union(*per_lang.values())))
    col = {g: j for j, g in enumerate(vocab)}
    counts = np.zeros((len(labels), len(vocab)), dtype=np.int64)
    for code, ctr in per_lang.items():
        i = labels.index(code)
        for g, c in ctr.items():
            counts[i, col[g]] = c

    if prior_mode == "uniform":
        priors = np.full(len(labels), 1.0 / len(labels))
    elif prior_mode == "empirical":
        priors = np.array([n_utt[c] for c in labels.codes], dtype=float)
        priors /= priors.sum()
    else:
        raise ValueError(f"unknown prior_mode {prior_mode!r}")
    return NGramProfile(config, labels, vocab, counts, alpha=alpha, priors=priors)


def score_nb(profile: NGramProfile, text: str, utterance_id: str = "-") -> ScoreVector:
    joint = profile.log_joint(text)
    return ScoreVector(utterance_id, joint - logsumexp(joint), "log_posterior")


def classify_nb(profile: NGramProfile, text: str) -> LanguageId:
    return profile.labels[score_nb(profile, text).argmax()]


def score_utterances(profile: NGramProfile, data: Iterable[Utterance],
                     asr_name: str) -> list[ScoreVector]:
    return [score_nb(profile, u.transcript(asr_name), u.id) for u in data]
