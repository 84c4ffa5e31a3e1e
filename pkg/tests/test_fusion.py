import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from accentlid.backend import fit_backend
from accentlid.corpus import LabelSet, ScoreVector, Utterance
from accentlid.fusion import (FusionConfig, NativeOnlyTuningError, fuse_linear, fuse_routes,
                              log_prob_features, tune_route_weights)
from accentlid.ngram_nb import score_nb, train_nb


def lp(*probs, uid="u"):
    return ScoreVector(uid, np.log(probs), "log_posterior")


logits = st.lists(st.floats(-30, 30), min_size=3, max_size=3).map(
    lambda v: ScoreVector("u", np.array(v) - logsumexp(v), "log_posterior"))
weight = st.floats(0, 1)


class TestFuseLinear:
    @given(logits, weight)
    def test_idempotent(self, s, w):
        out = fuse_linear([s, s], FusionConfig((w, 1 - w)))
        np.testing.assert_allclose(out.values, s.values, atol=1e-12, rtol=0)

    @given(logits, logits)
    def test_passthrough(self, a, b):
        out = fuse_linear([a, b], FusionConfig((1.0, 0.0)))
        np.testing.assert_allclose(out.values, a.values, atol=1e-12, rtol=0)

    def test_hand_mixture(self):
        out = fuse_linear([lp(0.8, 0.2), lp(0.2, 0.8)], FusionConfig((0.5, 0.5)))
        np.testing.assert_allclose(out.values, [math.log(0.5)] * 2, atol=1e-12, rtol=0)

    @given(logits, logits, weight)
    def test_valid_log_posterior(self, a, b, w):
        out = fuse_linear([a, b], FusionConfig((w, 1 - w)))
        assert abs(logsumexp(out.values)) < 1e-9

    @given(logits, logits, weight, st.permutations([0, 1, 2]))
    def test_language_permutation_equivariance(self, a, b, w, perm):
        cfg = FusionConfig((w, 1 - w))
        pa = ScoreVector("u", a.values[perm], a.space)
        pb = ScoreVector("u", b.values[perm], b.space)
        np.testing.assert_allclose(fuse_linear([pa, pb], cfg).values,
                                   fuse_linear([a, b], cfg).values[perm], atol=1e-12)

    @given(logits, logits, weight)
    def test_system_order_covariance(self, a, b, w):
        np.testing.assert_allclose(fuse_linear([a, b], FusionConfig((w, 1 - w))).values,
                                   fuse_linear([b, a], FusionConfig((1 - w, w))).values, atol=1e-12)

    def test_mismatched_label_sets(self):
        with pytest.raises(ValueError, match="mismatched"):
            fuse_linear([lp(0.5, 0.5), lp(0.2, 0.3, 0.5)], FusionConfig())

    def test_mixed_spaces(self):
        ll = ScoreVector("u", [-1.0, -2.0], "log_likelihood")
        with pytest.raises(ValueError, match="log_posterior"):
            fuse_linear([lp(0.5, 0.5), ll], FusionConfig())

    def test_different_utterances(self):
        with pytest.raises(ValueError, match="different utterances"):
            fuse_linear([lp(0.5, 0.5, uid="a"), lp(0.5, 0.5, uid="b")], FusionConfig())

    def test_log_domain(self):
        out = fuse_linear([lp(0.8, 0.2), lp(0.2, 0.8)], FusionConfig((0.5, 0.5), domain="log"))
        np.testing.assert_allclose(out.values, [math.log(0.5)] * 2, atol=1e-12)
        out = fuse_linear([lp(0.9, 0.1), lp(0.5, 0.5)], FusionConfig((0.5, 0.5), domain="log"))
        p = np.sqrt([0.45, 0.05])
        np.testing.assert_allclose(np.exp(out.values), p / p.sum(), atol=1e-12)

    @pytest.mark.parametrize("w", [(0.5, 0.6), (-0.5, 1.5), (0.0, 0.0), ()])
    def test_bad_weights(self, w):
        with pytest.raises(ValueError):
            FusionConfig(w)


class TestRoutes:
    def test_confident_route_wins(self):
        out = fuse_routes(lp(0.9, 0.1), lp(0.05, 0.95))
        np.testing.assert_allclose(np.exp(out.values), [0.475, 0.525], atol=1e-12)
        assert out.argmax() == 1

    def test_acoustic_passthrough(self):
        a = lp(0.3, 0.7)
        np.testing.assert_allclose(fuse_routes(a, lp(0.9, 0.1), FusionConfig((1.0, 0.0))).values,
                                   a.values, atol=1e-12)

    def test_uniform(self):
        out = fuse_routes(lp(0.25, 0.25, 0.25, 0.25), lp(0.25, 0.25, 0.25, 0.25))
        np.testing.assert_allclose(out.values, np.log(0.25), atol=1e-12)

    def test_log_likelihood_normalized(self):
        ll = ScoreVector("u", [-100.0, -100.0 + math.log(3)], "log_likelihood")
        out = fuse_routes(ll, lp(0.25, 0.75), FusionConfig((1.0, 0.0)))
        np.testing.assert_allclose(np.exp(out.values), [0.25, 0.75], atol=1e-12)


class TestLogProbFeatures:
    def test_uniform(self):
        e = log_prob_features(lp(0.25, 0.25, 0.25, 0.25))
        np.testing.assert_allclose(e.values, [math.log(0.25)] * 4)
        assert e.values.shape == (4,)

    def test_requires_log_posterior(self):
        with pytest.raises(ValueError):
            log_prob_features(ScoreVector("u", [1.0, 2.0], "raw"))

    def test_end_to_end_backend_on_nb_features(self):
        pairs = [("A", "aa bb"), ("B", "cc dd")]
        train = [Utterance("t0", {"et": "aa bb"}, "A"), Utterance("t1", {"et": "cc dd"}, "B")]
        prof = train_nb(train, "et")
        texts = {"A": ["aa", "bb", "aa bb", "bb bb", "aa aa bb"], "B": ["cc", "dd", "cc dd", "dd dd", "cc cc dd"]}
        feats, codes = [], []
        for code, ts in texts.items():
            for t in ts:
                feats.append(log_prob_features(score_nb(prof, t)).values)
                codes.append(code)
        labels = LabelSet(["A", "B"])
        be = fit_backend(np.array(feats), codes, labels)
        pred = np.argmax(be.score(np.array(feats)), axis=1)
        assert [labels.codes[i] for i in pred] == codes
        assert pairs  # features built from the two-language NB example


class TestTuningGuardrail:
    def setup_method(self):
        self.labels = LabelSet(["a", "b"])
        self.ac = [lp(0.9, 0.1, uid="u1"), lp(0.4, 0.6, uid="u2")]
        self.tx = [lp(0.6, 0.4, uid="u1"), lp(0.1, 0.9, uid="u2")]

    def test_refuses_native_only(self):
        truth = [Utterance("u1", label="a", group="native"), Utterance("u2", label="b", group="native")]
        with pytest.raises(NativeOnlyTuningError):
            tune_route_weights(self.ac, self.tx, truth, self.labels)
        cfg = tune_route_weights(self.ac, self.tx, truth, self.labels, allow_native=True)
        assert sum(cfg.weights) == pytest.approx(1.0)

    def test_allows_mixed(self):
        truth = [Utterance("u1", label="a", group="native"), Utterance("u2", label="b", group="B1")]
        tune_route_weights(self.ac, self.tx, truth, self.labels)
