"""Embedding backend: training-data centering, LDA projection, two-covariance PLDA.

The PLDA model is x = mu + y + e with class variable y ~ N(0, B) and
residual e ~ N(0, W). Each enrolled language is scored by the posterior
predictive density of a new point given that language's training data.
"""
from __future__ import annotations

import json
import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .corpus import LabelSet, LanguageId, ScoreVector, atomic_write_text

log = logging.getLogger(__name__)

RIDGE = 1e-6
MODEL_FORMAT = "accentlid-backend"
MODEL_VERSION = 1


def _group(X: np.ndarray, y: np.ndarray, min_per_class: int = 2):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("expected an N x D matrix and N labels")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    for c in classes:
        n = int(np.sum(y == c))
        if n < min_per_class:
            raise ValueError(f"class {c} has {n} sample(s); need >= {min_per_class}")
    return X, y, classes


def _ridge(S: np.ndarray, eps: float = RIDGE) -> np.ndarray:
    D = S.shape[0]
    return S + eps * np.trace(S) / D * np.eye(D)


def scatter_matrices(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Between- and within-class scatter, both normalized by N."""
    X, y, classes = _group(X, y, min_per_class=1)
    N, D = X.shape
    mean = X.mean(axis=0)
    Sb = np.zeros((D, D))
    Sw = np.zeros((D, D))
    for c in classes:
        Xc = X[y == c]
        mc = Xc.mean(axis=0)
        dm = mc - mean
        Sb += len(Xc) * np.outer(dm, dm)
        R = Xc - mc
        Sw += R.T @ R
    return Sb / N, Sw / N


@dataclass(frozen=True)
class LdaTransform:
    mean: np.ndarray
    projection: np.ndarray  # d x D

    @property
    def d(self) -> int:
        return self.projection.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"dimension mismatch: got {X.shape[-1]}, expected {self.mean.shape[0]}")
        return (X - self.mean) @ self.projection.T


def fit_lda(X: np.ndarray, y: Sequence, d: int = 108, eps: float = RIDGE) -> LdaTransform:
    """Top-``d`` generalized eigenvectors of (S_between, S_within).

    ``d`` is clamped to min(d, K-1, D, rank(S_between)).
    """
    if d < 1:
        raise ValueError("target dimension must be >= 1")
    X, y, classes = _group(X, y)
    N, D = X.shape
    Sb, Sw = scatter_matrices(X, y)
    if np.trace(Sw) <= 0:
        raise ValueError("zero within-class scatter; LDA is undefined")
    rank = np.linalg.matrix_rank(Sb, tol=1e-10 * max(np.trace(Sb), 1e-300))
    d_eff = min(d, len(classes) - 1, D, max(rank, 1))
    if d_eff < d:
        log.info("LDA dimension clamped from %d to %d (K=%d, D=%d, rank=%d)",
                 d, d_eff, len(classes), D, rank)
    evals, evecs = scipy.linalg.eigh(Sb, _ridge(Sw, eps))
    order = np.argsort(evals)[::-1][:d_eff]
    P = evecs[:, order].T
    # deterministic sign: largest-magnitude component positive
    signs = np.sign(P[np.arange(d_eff), np.argmax(np.abs(P), axis=1)])
    P = P * signs[:, None]
    return LdaTransform(X.mean(axis=0), P)


def apply_lda(t: LdaTransform, x: np.ndarray) -> np.ndarray:
    return t.apply(x)


@dataclass(eq=False)
class PldaModel:
    """Two-covariance PLDA with training-set class enrollment."""
    mu: np.ndarray
    B: np.ndarray
    W: np.ndarray
    class_counts: np.ndarray
    class_means: np.ndarray  # K x d
    labels: LabelSet | None = None
    loglik_trace: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def predictive(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-class predictive means (K x d) and covariances (K x d x d)."""
        K, d = self.class_means.shape
        means = np.empty((K, d))
        covs = np.empty((K, d, d))
        for k in range(K):
            ey, cy = _posterior_y(self.B, self.W, self.class_counts[k], self.class_means[k] - self.mu)
            means[k] = self.mu + ey
            covs[k] = _sym(self.W + cy)
        return means, covs

    def score(self, X: np.ndarray) -> np.ndarray:
        """Log predictive densities, N x K (or K for a single vector)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {X.shape[1]}, expected {self.dim}")
        means, covs = self.predictive()
        out = np.empty((len(X), len(means)))
        for k, (m, S) in enumerate(zip(means, covs)):
            L = np.linalg.cholesky(S)
            Z = scipy.linalg.solve_triangular(L, (X - m).T, lower=True)
            logdet = 2 * np.sum(np.log(np.diag(L)))
            out[:, k] = -0.5 * (self.dim * np.log(2 * np.pi) + logdet + np.sum(Z * Z, axis=0))
        return out[0] if single else out

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(), "B": self.B.tolist(), "W": self.W.tolist(),
            "class_counts": [int(n) for n in self.class_counts],
            "class_means": self.class_means.tolist(),
            "labels": list(self.labels.codes) if self.labels else None,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PldaModel":
        return cls(np.array(doc["mu"], dtype=float), np.array(doc["B"], dtype=float),
                   np.array(doc["W"], dtype=float), np.array(doc["class_counts"]),
                   np.array(doc["class_means"], dtype=float),
                   LabelSet(doc["labels"]) if doc.get("labels") else None,
                   n_iter=doc.get("n_iter", 0))


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _posterior_y(B, W, n, centered_mean):
    """Posterior mean and covariance of the class variable given n samples.

    Written as B (B + W/n)^-1 so a singular B is allowed.
    """
    G = scipy.linalg.solve(B + W / n, B, assume_a="sym").T  # B (B + W/n)^-1
    return G @ centered_mean, _sym(B - G @ B)


def plda_log_likelihood(X: np.ndarray, y: np.ndarray, mu, B, W) -> float:
    """Exact marginal log-likelihood of grouped data under the two-covariance model."""
    X, y, classes = _group(X, y, min_per_class=1)
    d = X.shape[1]
    Winv = np.linalg.inv(W)
    _, logdetW = np.linalg.slogdet(W)
    total = 0.0
    for c in classes:
        Z = X[y == c] - mu
        n = len(Z)
        M = W + n * B
        _, logdetM = np.linalg.slogdet(M)
        s = Z.sum(axis=0)
        quad = np.einsum("ij,jk,ik->", Z, Winv, Z)
        quad += s @ (np.linalg.solve(M, s) - Winv @ s) / n
        total += -0.5 * (n * d * np.log(2 * np.pi) + (n - 1) * logdetW + logdetM + quad)
    return float(total)


def fit_plda(X: np.ndarray, y: Sequence, labels: LabelSet | None = None,
             max_iter: int = 50, tol: float = 1e-8, eps: float = RIDGE) -> PldaModel:
    """Method-of-moments initialization followed by EM on (B, W); mu is the global mean.

    ``y`` holds class indices (or codes when ``labels`` is given).
    """
    y = np.asarray(y)
    if labels is not None and y.dtype.kind in "UO":
        y = np.array([labels.index(c) for c in y])
    X, y, classes = _group(X, y)
    N, d = X.shape
    mu = X.mean(axis=0)
    counts = np.array([np.sum(y == c) for c in classes])
    means = np.array([X[y == c].mean(axis=0) for c in classes])
    if labels is not None and not np.array_equal(classes, np.arange(len(labels))):
        raise ValueError("every language in the label set needs training samples")

    W = np.zeros((d, d))
    for c, m in zip(classes, means):
        R = X[y == c] - m
        W += R.T @ R
    W = _sym(W / N)
    if np.trace(W) <= 0:
        raise ValueError("zero within-class scatter; PLDA is undefined")
    W = _ridge(W, eps)
    Cm = means - mu
    B = _sym(Cm.T @ Cm / len(classes) - W / counts.mean())
    ev, V = np.linalg.eigh(B)
    B = _sym((V * np.clip(ev, 0, None)) @ V.T)

    trace = [plda_log_likelihood(X, y, mu, B, W)]
    it = 0
    for it in range(1, max_iter + 1):
        B_acc = np.zeros((d, d))
        W_acc = np.zeros((d, d))
        for c, n, m in zip(classes, counts, means):
            ey, cy = _posterior_y(B, W, n, m - mu)
            B_acc += np.outer(ey, ey) + cy
            R = X[y == c] - mu - ey
            W_acc += R.T @ R + n * cy
        B_new = _sym(B_acc / len(classes))
        W_new = _sym(W_acc / N)
        change = (np.linalg.norm(B_new - B) + np.linalg.norm(W_new - W)) / (
            np.linalg.norm(B) + np.linalg.norm(W))
        B, W = B_new, W_new
        trace.append(plda_log_likelihood(X, y, mu, B, W))
        if change < tol:
            break
    W = _ridge(W, eps)
    return PldaModel(mu, B, W, counts, means, labels, trace, it)


def score_plda(m: PldaModel, x: np.ndarray, utterance_id: str = "-") -> ScoreVector:
    return ScoreVector(utterance_id, m.score(x), "log_likelihood")


def classify_plda(m: PldaModel, x: np.ndarray) -> LanguageId | int:
    k = int(np.argmax(m.score(x)))
    return m.labels[k] if m.labels is not None else k


@dataclass(eq=False)
class Backend:
    """LDA followed by PLDA, as used on top of every embedding route."""
    lda: LdaTransform
    plda: PldaModel
    labels: LabelSet

    def score(self, X: np.ndarray) -> np.ndarray:
        return self.plda.score(self.lda.apply(X))

    def to_text(self) -> str:
        doc = {
            "format": MODEL_FORMAT, "version": MODEL_VERSION,
            "labels": list(self.labels.codes),
            "lda": {"mean": self.lda.mean.tolist(), "projection": self.lda.projection.tolist()},
            "plda": self.plda.to_dict(),
        }
        return json.dumps(doc, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Backend":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError("not a supported backend model file")
        lda = LdaTransform(np.array(doc["lda"]["mean"], dtype=float),
                           np.array(doc["lda"]["projection"], dtype=float))
        return cls(lda, PldaModel.from_dict(doc["plda"]), LabelSet(doc["labels"]))

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Backend":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def fit_backend(X: np.ndarray, codes: Sequence[str], labels: LabelSet,
                lda_dim: int = 108) -> Backend:
    y = np.array([labels.index(c) for c in codes])
    lda = fit_lda(X, y, lda_dim)
    plda = fit_plda(lda.apply(X), y, labels=labels)
    return Backend(lda, plda, labels)
