"""Data model and file formats: manifests, score sidecars, embedding sidecars.

Manifest: one JSON object per line with keys ``id``, ``transcripts``,
``label``, ``group`` and ``duration_sec``.

Score file (TSV)::

    #space log_posterior
    id<TAB>en<TAB>et
    utt1<TAB>-0.01<TAB>-4.6

Embedding file (TSV)::

    id<TAB>dim=3
    utt1<TAB>0.1<TAB>0.2<TAB>0.3
"""
from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

UNGROUPED = "ungrouped"
SCORE_SPACES = ("log_posterior", "log_likelihood", "raw")


class FormatError(ValueError):
    """A file did not parse according to its declared format."""


@dataclass(frozen=True)
class LanguageId:
    code: str
    index: int


class LabelSet:
    """Ordered, duplicate-free set of language codes with dense indices."""

    def __init__(self, codes: Iterable[str]):
        codes = tuple(codes)
        if len(set(codes)) != len(codes):
            raise ValueError(f"duplicate language codes in label set: {codes}")
        if any(not c for c in codes):
            raise ValueError("empty language code")
        self.codes = codes
        self._index = {c: i for i, c in enumerate(codes)}

    def __len__(self) -> int:
        return len(self.codes)

    def __iter__(self):
        return (LanguageId(c, i) for i, c in enumerate(self.codes))

    def __contains__(self, code: str) -> bool:
        return code in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.codes == other.codes

    def __hash__(self) -> int:
        return hash(self.codes)

    def __repr__(self) -> str:
        return f"LabelSet({list(self.codes)!r})"

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise KeyError(f"unknown language code {code!r}; known: {list(self.codes)}") from None

    def __getitem__(self, key: int | str) -> LanguageId:
        if isinstance(key, str):
            return LanguageId(key, self.index(key))
        return LanguageId(self.codes[key], key)

    @classmethod
    def from_utterances(cls, data: Iterable["Utterance"]) -> "LabelSet":
        """Sorted codes of every labeled utterance."""
        return cls(sorted({u.label for u in data if u.label is not None}))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LabelSet":
        """One code per line; blank lines and ``#`` comments are ignored."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(ln.strip() for ln in lines if ln.strip() and not ln.startswith("#"))

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, "".join(c + "\n" for c in self.codes))


@dataclass(frozen=True)
class Utterance:
    id: str
    transcripts: Mapping[str, str] = field(default_factory=dict)
    label: str | None = None
    group: str | None = None
    duration_sec: float | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("utterance id must be a nonempty string")
        if self.duration_sec is not None and not self.duration_sec >= 0:
            raise ValueError(f"{self.id}: duration_sec must be >= 0")

    def transcript(self, asr_name: str) -> str:
        try:
            return self.transcripts[asr_name]
        except KeyError:
            raise KeyError(f"utterance {self.id!r} has no transcript for ASR system {asr_name!r}") from None

    def to_record(self) -> dict:
        rec: dict = {"id": self.id, "transcripts": dict(self.transcripts)}
        if self.label is not None:
            rec["label"] = self.label
        if self.group is not None:
            rec["group"] = self.group
        if self.duration_sec is not None:
            rec["duration_sec"] = self.duration_sec
        return rec


@dataclass(frozen=True)
class ScoreVector:
    utterance_id: str
    values: np.ndarray
    space: str = "log_posterior"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.space not in SCORE_SPACES:
            raise ValueError(f"unknown score space {self.space!r}")
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError(f"{self.utterance_id}: score vector must be a nonempty 1-D array")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{self.utterance_id}: non-finite score")
        if self.space == "log_posterior" and abs(logsumexp(vals)) > 1e-6:
            raise ValueError(f"{self.utterance_id}: log-posteriors do not normalize "
                             f"(logsumexp={logsumexp(vals):.3g})")

    def argmax(self) -> int:
        # np.argmax returns the first maximum: lowest index wins ties
        return int(np.argmax(self.values))


@dataclass(frozen=True)
class EmbeddingVector:
    utterance_id: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1:
            raise ValueError(f"{self.utterance_id}: embedding must be 1-D")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{self.utterance_id}: non-finite embedding value")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(x))


# -- manifests --------------------------------------------------------------

def _parse_record(rec, lineno: int) -> Utterance:
    def bad(fieldname, msg):
        return FormatError(f"line {lineno}: field {fieldname!r}: {msg}")

    if not isinstance(rec, dict):
        raise FormatError(f"line {lineno}: record is not an object")
    uid = rec.get("id")
    if not isinstance(uid, str) or not uid:
        raise bad("id", "required nonempty string")
    transcripts = rec.get("transcripts", {})
    if not isinstance(transcripts, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in transcripts.items()):
        raise bad("transcripts", "must map ASR names to strings")
    label = rec.get("label")
    if label is not None and (not isinstance(label, str) or not label):
        raise bad("label", "must be a nonempty string")
    group = rec.get("group")
    if group is not None and not isinstance(group, str):
        raise bad("group", "must be a string")
    dur = rec.get("duration_sec")
    if dur is not None:
        if isinstance(dur, bool) or not isinstance(dur, (int, float)) or not dur >= 0:
            raise bad("duration_sec", "must be a nonnegative number")
        dur = float(dur)
    return Utterance(uid, transcripts, label, group, dur)


def parse_manifest(lines: Iterable[str]) -> list[Utterance]:
    out: list[Utterance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"line {lineno}: invalid JSON: {e.msg}") from None
        utt = _parse_record(rec, lineno)
        if utt.id in seen:
            raise FormatError(f"line {lineno}: duplicate utterance id {utt.id!r}")
        seen.add(utt.id)
        out.append(utt)
    return out


def load_dataset(path: str | os.PathLike) -> list[Utterance]:
    """Read a line-delimited JSON manifest."""
    with open(path, encoding="utf-8") as fh:
        try:
            return parse_manifest(fh)
        except FormatError as e:
            raise FormatError(f"{path}: {e}") from None


def dump_dataset(data: Iterable[Utterance]) -> str:
    return "".join(json.dumps(u.to_record(), ensure_ascii=False, sort_keys=True) + "\n"
                   for u in data)


def save_dataset(path: str | os.PathLike, data: Iterable[Utterance]) -> None:
    atomic_write_text(path, dump_dataset(data))


def split_by_group(data: Iterable[Utterance]) -> dict[str, list[Utterance]]:
    groups: dict[str, list[Utterance]] = {}
    for u in data:
        groups.setdefault(u.group if u.group is not None else UNGROUPED, []).append(u)
    return groups


def require_labels(data: Sequence[Utterance]) -> None:
    """Training refuses unlabeled utterances."""
    for u in data:
        if u.label is None:
            raise ValueError(f"utterance {u.id!r} has no label; training data must be labeled")


# -- score sidecars ---------------------------------------------------------

def dump_scores(scores: Sequence[ScoreVector], labels: LabelSet) -> str:
    spaces = {s.space for s in scores}
    if len(spaces) > 1:
        raise ValueError(f"mixed score spaces in one file: {sorted(spaces)}")
    space = spaces.pop() if spaces else "log_posterior"
    rows = [f"#space {space}", "\t".join(("id",) + labels.codes)]
    for s in scores:
        if len(s.values) != len(labels):
            raise ValueError(f"{s.utterance_id}: {len(s.values)} scores for {len(labels)} labels")
        rows.append("\t".join([s.utterance_id] + [_fmt(v) for v in s.values]))
    return "\n".join(rows) + "\n"


def save_scores(path: str | os.PathLike, scores: Sequence[ScoreVector], labels: LabelSet) -> None:
    atomic_write_text(path, dump_scores(scores, labels))


def read_score_header(path: str | os.PathLike) -> tuple[str, tuple[str, ...]]:
    with open(path, encoding="utf-8") as fh:
        first, second = fh.readline(), fh.readline()
    return _parse_score_header(first, second)


def _parse_score_header(first: str, second: str) -> tuple[str, tuple[str, ...]]:
    first = first.rstrip("\n")
    if not first.startswith("#space "):
        raise FormatError("line 1: expected '#space <log_posterior|log_likelihood|raw>'")
    space = first[len("#space "):].strip()
    if space not in SCORE_SPACES:
        raise FormatError(f"line 1: unknown score space {space!r}")
    header = second.rstrip("\n").split("\t")
    if len(header) < 2 or header[0] != "id":
        raise FormatError("line 2: expected 'id<TAB>code1<TAB>...'")
    return space, tuple(header[1:])


def load_scores(path: str | os.PathLike, labels: LabelSet | None = None
                ) -> tuple[list[ScoreVector], LabelSet]:
    """Read a score file, reindexing columns into ``labels`` order.

    With ``labels=None`` the header order defines the label set.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise FormatError(f"{path}: missing header lines")
    space, codes = _parse_score_header(lines[0], lines[1])
    if labels is None:
        labels = LabelSet(codes)
    for c in codes:
        if c not in labels:
            raise FormatError(f"{path}: line 2: unknown language code {c!r}")
    if len(set(codes)) != len(codes) or len(codes) != len(labels):
        raise FormatError(f"{path}: line 2: header codes {codes} are not a permutation of {labels.codes}")
    perm = np.array([codes.index(c) for c in labels.codes])

    out, seen = [], set()
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != len(codes) + 1:
            raise FormatError(f"{path}: line {lineno}: expected {len(codes) + 1} columns, got {len(cols)}")
        uid = cols[0]
        if uid in seen:
            raise FormatError(f"{path}: line {lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        try:
            vals = np.array([float(v) for v in cols[1:]])
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric score") from None
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}: line {lineno}: non-finite score")
        try:
            out.append(ScoreVector(uid, vals[perm], space))
        except ValueError as e:
            raise FormatError(f"{path}: line {lineno}: {e}") from None
    return out, labels


# -- embedding sidecars -----------------------------------------------------

def dump_embeddings(embs: Sequence[EmbeddingVector]) -> str:
    dims = {len(e.values) for e in embs}
    if len(dims) > 1:
        raise ValueError(f"inconsistent embedding dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    rows = [f"id\tdim={dim}"]
    rows += ["\t".join([e.utterance_id] + [_fmt(v) for v in e.values]) for e in embs]
    return "\n".join(rows) + "\n"


def save_embeddings(path: str | os.PathLike, embs: Sequence[EmbeddingVector]) -> None:
    atomic_write_text(path, dump_embeddings(embs))


def load_embeddings(path: str | os.PathLike) -> list[EmbeddingVector]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: missing header")
    head = lines[0].split("\t")
    if len(head) != 2 or head[0] != "id" or not head[1].startswith("dim="):
        raise FormatError(f"{path}: line 1: expected 'id<TAB>dim=D'")
    try:
        dim = int(head[1][4:])
    except ValueError:
        raise FormatError(f"{path}: line 1: bad dimension {head[1]!r}") from None
    out, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != dim + 1:
            raise FormatError(f"{path}: line {lineno}: expected {dim} values, got {len(cols) - 1}")
        if cols[0] in seen:
            raise FormatError(f"{path}: line {lineno}: duplicate utterance id {cols[0]!r}")
        seen.add(cols[0])
        try:
            vals = np.array([float(v) for v in cols[1:]])
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric value") from None
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}: line {lineno}: non-finite value")
        out.append(EmbeddingVector(cols[0], vals))
    return out

