import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accentlid.corpus import (UNGROUPED, EmbeddingVector, FormatError, LabelSet, ScoreVector,
                              Utterance, load_dataset, load_embeddings, load_scores,
                              save_dataset, save_embeddings, save_scores, split_by_group)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestManifest:
    def test_empty(self, tmp_path):
        assert load_dataset(write(tmp_path / "m.jsonl", "")) == []

    def test_one_record(self, tmp_path):
        p = write(tmp_path / "m.jsonl", '{"id": "u1", "transcripts": {"et": "tere"}, "label": "et"}\n')
        [u] = load_dataset(p)
        assert u.id == "u1" and u.transcripts == {"et": "tere"} and u.label == "et" and u.group is None

    def test_duplicate_id(self, tmp_path):
        rec = '{"id": "u1", "transcripts": {"et": "a"}}\n'
        with pytest.raises(FormatError, match="duplicate utterance id 'u1'"):
            load_dataset(write(tmp_path / "m.jsonl", rec * 2))

    @pytest.mark.parametrize("line, field", [
        ('{"transcripts": {}}', "id"),
        ('{"id": "u", "transcripts": {"et": 3}}', "transcripts"),
        ('{"id": "u", "duration_sec": -1}', "duration_sec"),
        ('{"id": "u", "label": ""}', "label"),
    ])
    def test_malformed_names_line_and_field(self, tmp_path, line, field):
        p = write(tmp_path / "m.jsonl", '{"id": "ok"}\n' + line + "\n")
        with pytest.raises(FormatError, match=f"line 2: field '{field}'"):
            load_dataset(p)

    def test_bad_json(self, tmp_path):
        with pytest.raises(FormatError, match="line 1"):
            load_dataset(write(tmp_path / "m.jsonl", "{nope\n"))

    utterances = st.lists(
        st.builds(Utterance, id=st.text(min_size=1, max_size=5),
                  transcripts=st.dictionaries(st.sampled_from(["en", "et"]), st.text(max_size=20)),
                  label=st.none() | st.sampled_from(["en", "et"]),
                  group=st.none() | st.text(max_size=4),
                  duration_sec=st.none() | st.floats(0, 100)),
        unique_by=lambda u: u.id, max_size=8)

    @settings(max_examples=40, deadline=None)
    @given(utterances)
    def test_round_trip(self, tmp_path_factory, data):
        p = tmp_path_factory.mktemp("rt") / "m.jsonl"
        save_dataset(p, data)
        assert load_dataset(p) == data


class TestScores:
    def test_permutation(self, tmp_path):
        p = write(tmp_path / "s.tsv", "#space raw\nid\ten\tet\nu1\t0.1\t0.9\n")
        scores, labels = load_scores(p, LabelSet(["et", "en"]))
        np.testing.assert_array_equal(scores[0].values, [0.9, 0.1])

    def test_non_numeric(self, tmp_path):
        p = write(tmp_path / "s.tsv", "#space raw\nid\ten\tet\nu1\t0.1\tx\n")
        with pytest.raises(FormatError, match="line 3"):
            load_scores(p)

    def test_single_language_log_posterior(self, tmp_path):
        p = write(tmp_path / "s.tsv", "#space log_posterior\nid\tet\nu1\t0.0\n")
        scores, _ = load_scores(p, LabelSet(["et"]))
        assert scores[0].values.tolist() == [0.0]

    def test_unnormalized_log_posterior_rejected(self, tmp_path):
        p = write(tmp_path / "s.tsv", "#space log_posterior\nid\ten\tet\nu1\t0.0\t0.0\n")
        with pytest.raises(FormatError):
            load_scores(p)

    def test_unknown_code(self, tmp_path):
        p = write(tmp_path / "s.tsv", "#space raw\nid\ten\tfi\nu1\t0\t0\n")
        with pytest.raises(FormatError, match="unknown language code 'fi'"):
            load_scores(p, LabelSet(["en", "et"]))

    @pytest.mark.parametrize("tok", ["nan", "inf", "-inf"])
    def test_non_finite(self, tmp_path, tok):
        p = write(tmp_path / "s.tsv", f"#space raw\nid\ten\nu1\t{tok}\n")
        with pytest.raises(FormatError, match="non-finite"):
            load_scores(p)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), max_size=6))
    def test_round_trip(self, tmp_path_factory, rows):
        labels = LabelSet(["a", "b", "c"])
        scores = [ScoreVector(f"u{i}", r, "log_likelihood") for i, r in enumerate(rows)]
        p = tmp_path_factory.mktemp("s") / "s.tsv"
        save_scores(p, scores, labels)
        back, lab = load_scores(p)
        assert lab == labels
        for a, b in zip(scores, back):
            assert a.utterance_id == b.utterance_id and a.space == b.space
            np.testing.assert_array_equal(a.values, b.values)


class TestEmbeddings:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        embs = [EmbeddingVector(f"u{i}", rng.normal(size=5)) for i in range(4)]
        save_embeddings(tmp_path / "e.tsv", embs)
        assert (tmp_path / "e.tsv").read_text().startswith("id\tdim=5\n")
        back = load_embeddings(tmp_path / "e.tsv")
        for a, b in zip(embs, back):
            np.testing.assert_array_equal(a.values, b.values)

    def test_inconsistent_dim(self, tmp_path):
        p = write(tmp_path / "e.tsv", "id\tdim=2\nu1\t1\t2\nu2\t1\n")
        with pytest.raises(FormatError, match="line 3"):
            load_embeddings(p)


class TestSplitByGroup:
    def test_single_group(self):
        data = [Utterance(f"u{i}", group="native") for i in range(3)]
        assert list(split_by_group(data)) == ["native"]

    def test_mixed(self):
        data = [Utterance("a", group="native"), Utterance("b", group="B1"), Utterance("c", group="B1")]
        g = split_by_group(data)
        assert set(g) == {"native", "B1"} and UNGROUPED not in g

    def test_empty(self):
        assert split_by_group([]) == {}

    @given(st.lists(st.none() | st.sampled_from(["native", "A2", "B1"]), max_size=20))
    def test_partition(self, groups):
        data = [Utterance(f"u{i}", group=g) for i, g in enumerate(groups)]
        parts = split_by_group(data)
        assert sum(len(v) for v in parts.values()) == len(data)
        ids = [u.id for v in parts.values() for u in v]
        assert sorted(ids) == sorted(u.id for u in data)


def test_label_set_rejects_duplicates():
    with pytest.raises(ValueError):
        LabelSet(["en", "en"])


def test_label_set_bijection():
    ls = LabelSet(["et", "en", "fi"])
    assert [ls.index(c) for c in ls.codes] == [0, 1, 2]
    assert ls[1].code == "en" and ls["fi"].index == 2
