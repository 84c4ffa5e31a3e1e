"""Score-vector fusion: NB interpolation, log-prob features, acoustic+text late fusion."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .corpus import EmbeddingVector, ScoreVector, Utterance


class NativeOnlyTuningError(RuntimeError):
    """Refusal to tune route weights on data that is entirely native speech."""


@dataclass(frozen=True)
class FusionConfig:
    weights: tuple[float, ...] = (0.5, 0.5)
    normalize: bool = True
    domain: str = "prob"  # "prob": mixture of posteriors; "log": weighted log-linear

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative with at least one positive")
        if abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if self.domain not in ("prob", "log"):
            raise ValueError(f"unknown fusion domain {self.domain!r}")

    @classmethod
    def uniform(cls, n: int, **kw) -> "FusionConfig":
        return cls(tuple([1.0 / n] * n), **kw)


def to_log_posterior(s: ScoreVector) -> ScoreVector:
    """Normalize a log-likelihood (or raw log-score) vector with uniform priors."""
    if s.space == "log_posterior":
        return s
    return ScoreVector(s.utterance_id, s.values - logsumexp(s.values), "log_posterior")


def fuse_linear(inputs: Sequence[ScoreVector], cfg: FusionConfig) -> ScoreVector:
    """Weighted mixture of posterior distributions, returned as log-posteriors."""
    if len(inputs) != len(cfg.weights):
        raise ValueError(f"{len(inputs)} inputs but {len(cfg.weights)} weights")
    ids = {s.utterance_id for s in inputs}
    if len(ids) != 1:
        raise ValueError(f"cannot fuse scores of different utterances: {sorted(ids)}")
    spaces = {s.space for s in inputs}
    if spaces != {"log_posterior"}:
        raise ValueError(f"fuse_linear needs log_posterior inputs, got spaces {sorted(spaces)}")
    K = {len(s.values) for s in inputs}
    if len(K) != 1:
        raise ValueError(f"mismatched label sets (sizes {sorted(K)})")
    V = np.stack([s.values for s in inputs])
    w = np.asarray(cfg.weights)
    if cfg.domain == "prob":
        keep = w > 0
        out = logsumexp(V[keep] + np.log(w[keep])[:, None], axis=0)
    else:
        out = w @ V
    if cfg.normalize or cfg.domain == "log":
        out = out - logsumexp(out)
    return ScoreVector(inputs[0].utterance_id, out, "log_posterior")


def log_prob_features(fused: ScoreVector) -> EmbeddingVector:
    if fused.space != "log_posterior":
        raise ValueError("log_prob_features expects log_posterior scores")
    return EmbeddingVector(fused.utterance_id, fused.values)


def fuse_routes(acoustic: ScoreVector, text: ScoreVector,
                cfg: FusionConfig = FusionConfig()) -> ScoreVector:
    return fuse_linear([to_log_posterior(acoustic), to_log_posterior(text)], cfg)


def fuse_systems(systems: Sequence[Sequence[ScoreVector]], cfg: FusionConfig) -> list[ScoreVector]:
    """Fuse per-utterance across several systems' score lists, matched by utterance id."""
    if not systems:
        raise ValueError("nothing to fuse")
    index = [{s.utterance_id: s for s in sys} for sys in systems]
    out = []
    for s0 in systems[0]:
        uid = s0.utterance_id
        try:
            parts = [to_log_posterior(ix[uid]) for ix in index]
        except KeyError:
            raise ValueError(f"utterance {uid!r} missing from one of the score inputs") from None
        out.append(fuse_linear(parts, cfg))
    return out


def tune_route_weights(acoustic: Sequence[ScoreVector], text: Sequence[ScoreVector],
                       truth: Sequence[Utterance], labels, grid: int = 21,
                       allow_native: bool = False) -> FusionConfig:
    """Grid-search the acoustic weight for accuracy.

    Refuses when every utterance is in the ``native`` group: on native data the
    acoustic route dominates and the tuned fusion collapses to acoustic-only.
    """
    groups = {u.group for u in truth}
    if groups == {"native"} and not allow_native:
        raise NativeOnlyTuningError(
            "refusing to tune route weights on native-only data; pass allow_native=True to override")
    gold = {u.id: labels.index(u.label) for u in truth}
    best, best_acc = None, -1.0
    for wa in np.linspace(0.0, 1.0, grid):
        cfg = FusionConfig((float(wa), float(1.0 - wa)))
        correct = sum(fuse_routes(a, t, cfg).argmax() == gold[a.utterance_id]
                      for a, t in zip(acoustic, text))
        acc = correct / len(acoustic)
        if acc > best_acc:
            best, best_acc = cfg, acc
    return best
