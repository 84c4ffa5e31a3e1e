"""Character ConvNet over one or more ASR transcripts, with hand-written backprop.

Each branch embeds the characters of one ASR system's transcript, runs a stack
of same-length 1-D convolutions with ReLU and max-pools over time (pad
positions masked out). Branch outputs are concatenated and passed through
fc1 (ReLU, the extracted embedding) and fc2 (class logits).
"""
from __future__ import annotations

import hashlib
import json
import os
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .corpus import EmbeddingVector, LabelSet, Utterance, atomic_write_text, require_labels
from .ngram_nb import normalize_text

PAD, UNK = 0, 1
CHECKPOINT_FORMAT = "accentlid-convnet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvNetSpec:
    branches: tuple[str, ...]
    char_vocabs: tuple[tuple[str, ...], ...]
    labels: tuple[str, ...]
    embed_dim: int = 20
    conv_kernels: tuple[int, ...] = (3, 1, 3, 1)
    channels: int = 64
    fc1_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "char_vocabs", tuple(tuple(v) for v in self.char_vocabs))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "conv_kernels", tuple(self.conv_kernels))
        if self.fc1_dim is None:
            object.__setattr__(self, "fc1_dim", self.channels * len(self.branches))
        if not self.branches or len(self.char_vocabs) != len(self.branches):
            raise ValueError("need one character vocabulary per branch")
        if min(self.embed_dim, self.channels, self.fc1_dim, len(self.labels)) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not self.conv_kernels or any(k < 1 or k % 2 == 0 for k in self.conv_kernels):
            raise ValueError("kernel sizes must be odd (or 1)")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @property
    def receptive_field(self) -> int:
        return 1 + sum(k - 1 for k in self.conv_kernels)

    def vocab_size(self, b: int) -> int:
        return len(self.char_vocabs[b]) + 2

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_data(cls, data: Sequence[Utterance], branches: Sequence[str],
                  labels: LabelSet, **kw) -> "ConvNetSpec":
        vocabs = []
        for b in branches:
            chars = set()
            for u in data:
                chars.update(normalize_text(u.transcript(b)))
            vocabs.append(tuple(sorted(chars)))
        return cls(tuple(branches), tuple(vocabs), labels.codes, **kw)


@dataclass(eq=False)
class ConvNetParams:
    arrays: dict[str, np.ndarray]
    seed: int
    loss_trace: list[float] = field(default_factory=list)

    def copy(self) -> "ConvNetParams":
        return ConvNetParams({k: v.copy() for k, v in self.arrays.items()}, self.seed,
                             list(self.loss_trace))


def param_shapes(spec: ConvNetSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for b in range(len(spec.branches)):
        shapes[f"b{b}.embed"] = (spec.vocab_size(b), spec.embed_dim)
        cin = spec.embed_dim
        for i, k in enumerate(spec.conv_kernels):
            shapes[f"b{b}.conv{i}.w"] = (k, cin, spec.channels)
            shapes[f"b{b}.conv{i}.b"] = (spec.channels,)
            cin = spec.channels
    shapes["fc1.w"] = (spec.channels * len(spec.branches), spec.fc1_dim)
    shapes["fc1.b"] = (spec.fc1_dim,)
    shapes["fc2.w"] = (spec.fc1_dim, spec.num_classes)
    shapes["fc2.b"] = (spec.num_classes,)
    return shapes


def init_params(spec: ConvNetSpec, seed: int = 0) -> ConvNetParams:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        elif name.endswith(".embed"):
            arrays[name] = rng.normal(0.0, 1.0, size=shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return ConvNetParams(arrays, seed)


def encode(spec: ConvNetSpec, b: int, text: str) -> np.ndarray:
    """Character indices for branch ``b``, right-padded to the receptive field."""
    index = {c: i + 2 for i, c in enumerate(spec.char_vocabs[b])}
    ids = [index.get(c, UNK) for c in normalize_text(text)]
    ids += [PAD] * max(0, spec.receptive_field - len(ids))
    return np.array(ids, dtype=np.int64)


def _conv(H, w, bias):
    k = w.shape[0]
    p = (k - 1) // 2
    L = H.shape[0]
    Hp = np.pad(H, ((p, p), (0, 0)))
    Z = np.broadcast_to(bias, (L, w.shape[2])).copy()
    for j in range(k):
        Z += Hp[j:j + L] @ w[j]
    return Z, Hp


def _conv_back(dZ, Hp, w):
    k = w.shape[0]
    p = (k - 1) // 2
    L = dZ.shape[0]
    dw = np.empty_like(w)
    dHp = np.zeros_like(Hp)
    for j in range(k):
        dw[j] = Hp[j:j + L].T @ dZ
        dHp[j:j + L] += dZ @ w[j].T
    return dw, dZ.sum(axis=0), dHp[p:p + L]


def _forward(P, spec, encoded):
    cache = {"branches": []}
    pooled = []
    for b, ids in enumerate(encoded):
        H = P[f"b{b}.embed"][ids]
        layers = []
        for i in range(len(spec.conv_kernels)):
            Z, Hp = _conv(H, P[f"b{b}.conv{i}.w"], P[f"b{b}.conv{i}.b"])
            layers.append((Z, Hp))
            H = np.maximum(Z, 0.0)
        real = ids != PAD
        if not real.any():
            real = np.ones_like(real)
        Hm = np.where(real[:, None], H, -np.inf)
        arg = np.argmax(Hm, axis=0)
        pooled.append(H[arg, np.arange(H.shape[1])])
        cache["branches"].append((ids, layers, arg, H.shape))
    h = np.concatenate(pooled)
    a1 = h @ P["fc1.w"] + P["fc1.b"]
    emb = np.maximum(a1, 0.0)
    logits = emb @ P["fc2.w"] + P["fc2.b"]
    cache.update(h=h, a1=a1, emb=emb)
    return logits, emb, cache


def _backward(P, spec, cache, dlogits):
    G = {}
    emb, a1, h = cache["emb"], cache["a1"], cache["h"]
    G["fc2.w"] = np.outer(emb, dlogits)
    G["fc2.b"] = dlogits.copy()
    da1 = (P["fc2.w"] @ dlogits) * (a1 > 0)
    G["fc1.w"] = np.outer(h, da1)
    G["fc1.b"] = da1
    dh = P["fc1.w"] @ da1
    C = spec.channels
    for b, (ids, layers, arg, shape) in enumerate(cache["branches"]):
        dH = np.zeros(shape)
        dH[arg, np.arange(C)] = dh[b * C:(b + 1) * C]
        for i in reversed(range(len(layers))):
            Z, Hp = layers[i]
            dZ = dH * (Z > 0)
            dw, db, dH = _conv_back(dZ, Hp, P[f"b{b}.conv{i}.w"])
            G[f"b{b}.conv{i}.w"] = dw
            G[f"b{b}.conv{i}.b"] = db
        dE = np.zeros_like(P[f"b{b}.embed"])
        np.add.at(dE, ids, dH)
        G[f"b{b}.embed"] = dE
    return G


def _encode_utt(spec, u: Utterance):
    return [encode(spec, b, u.transcript(name)) for b, name in enumerate(spec.branches)]


def forward(params: ConvNetParams, spec: ConvNetSpec, utterance: Utterance
            ) -> tuple[np.ndarray, np.ndarray]:
    """(logits, fc1 embedding) for one utterance."""
    logits, emb, _ = _forward(params.arrays, spec, _encode_utt(spec, utterance))
    return logits, emb


def loss_and_grad(params: ConvNetParams, spec: ConvNetSpec, batch: Sequence[Utterance]
                  ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over ``batch`` and its gradient."""
    P = params.arrays
    labels = LabelSet(spec.labels)
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in P.items()}
    for u in batch:
        logits, _, cache = _forward(P, spec, _encode_utt(spec, u))
        logp = logits - logsumexp(logits)
        y = labels.index(u.label)
        total -= logp[y]
        dlogits = np.exp(logp)
        dlogits[y] -= 1.0
        for k, g in _backward(P, spec, cache, dlogits).items():
            grads[k] += g
    n = len(batch)
    return total / n, {k: g / n for k, g in grads.items()}


def train(spec: ConvNetSpec, data: Sequence[Utterance], lr: float = 0.05, epochs: int = 200,
          batch: int = 4, seed: int = 0, init: ConvNetParams | None = None) -> ConvNetParams:
    """Mini-batch gradient descent on cross-entropy; deterministic given ``seed``."""
    if not data:
        raise ValueError("empty training set")
    require_labels(data)
    for u in data:
        for name in spec.branches:
            u.transcript(name)
    params = init.copy() if init is not None else init_params(spec, seed)
    rng = np.random.default_rng(seed + 1)
    trace = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), batch):
            chunk = [data[i] for i in order[start:start + batch]]
            loss, grads = loss_and_grad(params, spec, chunk)
            losses.append(loss * len(chunk))
            for k, g in grads.items():
                params.arrays[k] -= lr * g
        trace.append(float(sum(losses) / len(data)))
    params.loss_trace = trace
    return params


def predict(params: ConvNetParams, spec: ConvNetSpec, data: Sequence[Utterance]) -> list[str]:
    return [spec.labels[int(np.argmax(forward(params, spec, u)[0]))] for u in data]


def extract_embeddings(params: ConvNetParams, spec: ConvNetSpec,
                       data: Sequence[Utterance]) -> list[EmbeddingVector]:
    return [EmbeddingVector(u.id, forward(params, spec, u)[1]) for u in data]


def checkpoint_text(params: ConvNetParams, spec: ConvNetSpec) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "spec": asdict(spec), "spec_hash": spec.hash(),
        "seed": params.seed, "loss_trace": params.loss_trace,
        "arrays": {k: v.tolist() for k, v in sorted(params.arrays.items())},
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n"


def save_checkpoint(path: str | os.PathLike, params: ConvNetParams, spec: ConvNetSpec) -> None:
    atomic_write_text(path, checkpoint_text(params, spec))


def load_checkpoint(path: str | os.PathLike) -> tuple[ConvNetParams, ConvNetSpec]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a supported ConvNet checkpoint")
    spec = ConvNetSpec(**doc["spec"])
    if spec.hash() != doc["spec_hash"]:
        raise ValueError(f"{path}: spec hash mismatch")
    shapes = param_shapes(spec)
    arrays = {k: np.array(v, dtype=float).reshape(shapes[k]) for k, v in doc["arrays"].items()}
    return ConvNetParams(arrays, doc["seed"], doc["loss_trace"]), spec
