"""Accuracy evaluation, relative error reduction, and synthetic accent experiments."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import Counter
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .backend import fit_backend
from .corpus import LabelSet, LanguageId, ScoreVector, Utterance, split_by_group
from .fusion import FusionConfig, fuse_routes, fuse_systems, log_prob_features
from .ngram_nb import NGramFeatureConfig, score_utterances, train_nb


@dataclass
class EvalReport:
    labels: LabelSet
    overall_accuracy: float
    per_group: dict[str, tuple[int, float]]
    confusion: np.ndarray  # rows: truth, cols: prediction
    n_total: int

    def to_text(self) -> str:
        w = max(len(c) for c in self.labels.codes)
        lines = [f"accuracy {self.overall_accuracy:.4f} ({int(np.trace(self.confusion))}/{self.n_total})",
                 "", "per group:"]
        for g, (n, acc) in sorted(self.per_group.items()):
            lines.append(f"  {g:<12} n={n:<6} acc={acc:.4f}")
        lines += ["", "confusion (rows=truth):", " " * (w + 2) + " ".join(f"{c:>{max(w, 5)}}" for c in self.labels.codes)]
        for code, row in zip(self.labels.codes, self.confusion):
            lines.append(f"  {code:<{w}}" + " ".join(f"{int(v):>{max(w, 5)}}" for v in row))
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {
            "labels": list(self.labels.codes),
            "overall_accuracy": self.overall_accuracy,
            "n_total": self.n_total,
            "per_group": {g: {"n": n, "accuracy": a} for g, (n, a) in sorted(self.per_group.items())},
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, indent=1) + "\n"

    def groups_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["group", "n", "accuracy"])
        for g, (n, a) in sorted(self.per_group.items()):
            wr.writerow([g, n, repr(a)])
        return buf.getvalue()


def evaluate(predictions: Sequence[tuple[str, LanguageId | str]], truth: Sequence[Utterance],
             labels: LabelSet | None = None) -> EvalReport:
    if not predictions:
        raise ValueError("no predictions to evaluate")
    by_id = {u.id: u for u in truth}
    labels = labels or LabelSet.from_utterances(truth)
    K = len(labels)
    confusion = np.zeros((K, K), dtype=np.int64)
    used = []
    correct = {}
    for uid, pred in predictions:
        u = by_id.get(uid)
        if u is None:
            raise KeyError(f"prediction for unknown utterance id {uid!r}")
        if u.label is None:
            raise ValueError(f"utterance {uid!r} has no reference label")
        p = pred.code if isinstance(pred, LanguageId) else pred
        confusion[labels.index(u.label), labels.index(p)] += 1
        correct[uid] = p == u.label
        used.append(u)
    per_group = {}
    for g, members in split_by_group(used).items():
        per_group[g] = (len(members), sum(correct[m.id] for m in members) / len(members))
    n = len(used)
    return EvalReport(labels, float(np.trace(confusion)) / n, per_group, confusion, n)


def relative_error_reduction(baseline_acc: float, improved_acc: float) -> float:
    """Fraction of the baseline's errors removed by the improved system."""
    for a in (baseline_acc, improved_acc):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"accuracy {a!r} outside [0, 1]")
    if baseline_acc == 1.0:
        raise ValueError("relative error reduction is undefined for a perfect baseline")
    return ((1 - baseline_acc) - (1 - improved_acc)) / (1 - baseline_acc)


# -- accent simulation ------------------------------------------------------

def _derive_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "little")


def unigram_distribution(texts: Sequence[str]) -> dict[str, float]:
    """Relative character frequencies, whitespace excluded."""
    ctr = Counter(ch for t in texts for ch in t if not ch.isspace())
    total = sum(ctr.values())
    return {c: n / total for c, n in sorted(ctr.items())}


@dataclass(frozen=True)
class AccentNoiseConfig:
    """Character edit rates at full strength; effective rate is ``rho * rate``."""
    rho: float = 0.0
    sub_rate: float = 0.5
    del_rate: float = 0.1
    ins_rate: float = 0.1
    confusion_source: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if min(self.sub_rate, self.del_rate, self.ins_rate) < 0:
            raise ValueError("edit rates must be nonnegative")

    def stratum(self) -> str:
        return f"rho={self.rho:g}"


def _corrupt(text: str, cfg: AccentNoiseConfig, rng: np.random.Generator,
             alphabet: Sequence[str], probs: np.ndarray) -> str:
    # draws are made for every position regardless of rho, so the edits at a
    # larger rho are a superset of those at a smaller one (same seed)
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    r = cfg.rho
    out = []
    for ch in text:
        u_del, u_sub, u_ins, c_sub, c_ins = rng.random(5)
        if ch.isspace():
            out.append(ch)
            continue
        if u_del < r * cfg.del_rate:
            pass
        elif u_sub < r * cfg.sub_rate:
            out.append(alphabet[int(np.searchsorted(cum, c_sub, side="right"))])
        else:
            out.append(ch)
        if u_ins < r * cfg.ins_rate:
            out.append(alphabet[int(np.searchsorted(cum, c_ins, side="right"))])
    return "".join(out)


def simulate_accent(utt: Utterance, cfg: AccentNoiseConfig) -> Utterance:
    """Seeded character substitutions, deletions and insertions on every transcript.

    Replacement characters come from ``cfg.confusion_source`` when set, else
    uniformly from the characters of the utterance's own transcripts.
    """
    if not utt.transcripts:
        raise ValueError(f"utterance {utt.id!r} has no transcripts")
    if cfg.confusion_source:
        alphabet = sorted(cfg.confusion_source)
        probs = np.array([cfg.confusion_source[c] for c in alphabet], dtype=float)
        probs /= probs.sum()
    else:
        alphabet = sorted({ch for t in utt.transcripts.values() for ch in t if not ch.isspace()}) or ["a"]
        probs = np.full(len(alphabet), 1.0 / len(alphabet))
    new = {}
    for name in sorted(utt.transcripts):
        rng = np.random.default_rng(_derive_seed(cfg.seed, utt.id, name))
        new[name] = _corrupt(utt.transcripts[name], cfg, rng, alphabet, probs)
    return replace(utt, transcripts=new, group=cfg.stratum())


# -- routes -----------------------------------------------------------------

@dataclass(frozen=True)
class SimulatedAcousticRoute:
    """Stand-in for an acoustic LID model whose confidence decays with accent strength.

    Logits are ``strength * (1 - decay * rho)`` on the true class plus unit
    Gaussian noise on every class.
    """
    strength: float = 3.0
    decay: float = 1.2
    noise: float = 1.0

    def score(self, data: Sequence[Utterance], labels: LabelSet, rho: float, seed: int
              ) -> list[ScoreVector]:
        out = []
        margin = self.strength * max(0.0, 1.0 - self.decay * rho)
        for u in data:
            rng = np.random.default_rng(_derive_seed("acoustic", seed, u.id))
            z = rng.normal(0.0, self.noise, size=len(labels))
            z[labels.index(u.label)] += margin
            out.append(ScoreVector(u.id, z - logsumexp(z), "log_posterior"))
        return out


class NBRoute:
    """Per-ASR-system NB models fused by linear interpolation (uniform weights)."""

    def __init__(self, asr_names: Sequence[str], alpha: float = 0.95,
                 config: NGramFeatureConfig = NGramFeatureConfig()):
        self.asr_names = tuple(asr_names)
        self.alpha = alpha
        self.config = config
        self.profiles = []

    def fit(self, train: Sequence[Utterance], labels: LabelSet) -> "NBRoute":
        self.labels = labels
        self.profiles = [train_nb(train, a, self.config, self.alpha, labels=labels)
                         for a in self.asr_names]
        return self

    def score(self, data: Sequence[Utterance]) -> list[ScoreVector]:
        per_sys = [score_utterances(p, data, a) for p, a in zip(self.profiles, self.asr_names)]
        return fuse_systems(per_sys, FusionConfig.uniform(len(per_sys)))


class NBBackendRoute:
    """Fused NB log-posteriors fed to LDA/PLDA.

    Backend training features are cross-fitted (each fold scored by NB trained
    on the other folds) so they resemble test-time NB output.
    """

    def __init__(self, asr_names: Sequence[str], alpha: float = 0.95, folds: int = 5,
                 lda_dim: int = 108):
        self.asr_names = tuple(asr_names)
        self.alpha = alpha
        self.folds = folds
        self.lda_dim = lda_dim

    def fit(self, train: Sequence[Utterance], labels: LabelSet) -> "NBBackendRoute":
        self.labels = labels
        feats = [None] * len(train)
        for f in range(self.folds):
            held = [i for i in range(len(train)) if i % self.folds == f]
            rest = [train[i] for i in range(len(train)) if i % self.folds != f]
            route = NBRoute(self.asr_names, self.alpha).fit(rest, labels)
            for i, s in zip(held, route.score([train[i] for i in held])):
                feats[i] = log_prob_features(s).values
        self.nb = NBRoute(self.asr_names, self.alpha).fit(train, labels)
        self.backend = fit_backend(np.array(feats), [u.label for u in train], labels, self.lda_dim)
        return self

    def score(self, data: Sequence[Utterance]) -> list[ScoreVector]:
        X = np.array([log_prob_features(s).values for s in self.nb.score(data)])
        ll = self.backend.score(X)
        return [ScoreVector(u.id, row - logsumexp(row), "log_posterior") for u, row in zip(data, ll)]


def _accuracy(scores: Sequence[ScoreVector], data: Sequence[Utterance], labels: LabelSet) -> float:
    return float(np.mean([s.argmax() == labels.index(u.label) for s, u in zip(scores, data)]))


@dataclass
class ExperimentResult:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["rho", "seed", "route", "accuracy"])
        for r in self.rows:
            wr.writerow([repr(r["rho"]), r["seed"], r["route"], repr(r["accuracy"])])
        return buf.getvalue()

    def table(self, route: str) -> dict[float, np.ndarray]:
        """rho -> per-seed accuracies for one route."""
        out: dict[float, list] = {}
        for r in self.rows:
            if r["route"] == route:
                out.setdefault(r["rho"], []).append(r["accuracy"])
        return {k: np.array(v) for k, v in out.items()}

    def summary(self, route: str) -> dict[float, tuple[float, float]]:
        """rho -> (mean, standard error) over seeds."""
        res = {}
        for rho, a in self.table(route).items():
            se = a.std(ddof=1) / np.sqrt(len(a)) if len(a) > 1 else 0.0
            res[rho] = (float(a.mean()), float(se))
        return res


def degradation_experiment(train: Sequence[Utterance], test: Sequence[Utterance],
                           rho_grid: Sequence[float], seeds: Sequence[int] = (0, 1, 2, 3, 4),
                           pipeline: Callable[[], object] | None = None,
                           noise: AccentNoiseConfig = AccentNoiseConfig(),
                           acoustic: SimulatedAcousticRoute | None = SimulatedAcousticRoute(),
                           fusion: FusionConfig = FusionConfig()) -> ExperimentResult:
    """Train on clean data; evaluate on accent-corrupted test data for each rho.

    Each test utterance is corrupted towards the character distribution of
    one other language (its simulated L1), chosen per seed. Routes reported:
    ``text`` (the pipeline), ``acoustic`` (simulated) and ``fused``.
    """
    rho_grid = [float(r) for r in rho_grid]
    if len(rho_grid) < 2:
        raise ValueError("need at least 2 rho values")
    if any(b < a for a, b in zip(rho_grid, rho_grid[1:])):
        raise ValueError("rho_grid must be sorted ascending")
    if {u.id for u in train} & {u.id for u in test}:
        raise ValueError("train and test splits overlap")
    labels = LabelSet.from_utterances(train)
    asr_names = sorted(train[0].transcripts)
    route = (pipeline or (lambda: NBRoute(asr_names)))().fit(train, labels)

    l1_dist = {c: unigram_distribution([t for u in train if u.label == c for t in u.transcripts.values()])
               for c in labels.codes}
    result = ExperimentResult()
    for seed in seeds:
        rng = np.random.default_rng(_derive_seed("l1", seed))
        l1 = {}
        for u in test:
            others = [c for c in labels.codes if c != u.label]
            l1[u.id] = others[rng.integers(len(others))]
        for rho in rho_grid:
            noisy = [simulate_accent(u, replace(noise, rho=rho, seed=seed,
                                                confusion_source=l1_dist[l1[u.id]]))
                     for u in test]
            text_scores = route.score(noisy)
            cells = {"text": text_scores}
            if acoustic is not None:
                ac = acoustic.score(noisy, labels, rho, seed)
                cells["acoustic"] = ac
                cells["fused"] = [fuse_routes(a, t, fusion) for a, t in zip(ac, text_scores)]
            for name, scores in cells.items():
                result.rows.append({"rho": rho, "seed": seed, "route": name,
                                    "accuracy": _accuracy(scores, noisy, labels)})
    return result
