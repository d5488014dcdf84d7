import math

import numpy as np
import pytest

from seqtag.corpus import TagSet
from seqtag.crf import (
    Transitions,
    bio_constraint_penalty,
    crf_marginals,
    crf_nll_grad,
    log_partition,
    path_score,
    viterbi,
)

from helpers import enumerate_crf


def random_instance(rng, n=None, n_tags=None, scale=1.0):
    n = n if n is not None else int(rng.integers(1, 5))
    n_tags = n_tags if n_tags is not None else int(rng.integers(1, 5))
    emis = rng.normal(scale=scale, size=(n, n_tags))
    trans = Transitions(
        rng.normal(scale=scale, size=(n_tags, n_tags)),
        rng.normal(scale=scale, size=n_tags),
        rng.normal(scale=scale, size=n_tags),
    )
    return emis, trans


class TestLogPartition:
    def test_uniform_two_by_two(self):
        emis = np.zeros((2, 2))
        trans = Transitions.zeros(2)
        assert log_partition(emis, trans) == pytest.approx(math.log(4.0), abs=1e-12)

    def test_single_position_closed_form(self):
        emis = np.array([[0.3, -1.2, 2.0]])
        trans = Transitions.zeros(3)
        expected = math.log(sum(math.exp(v) for v in emis[0]))
        assert log_partition(emis, trans) == pytest.approx(expected, abs=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            emis, trans = random_instance(rng)
            expected, _, _, _, _ = enumerate_crf(emis, trans.matrix, trans.start, trans.end)
            assert log_partition(emis, trans) == pytest.approx(expected, abs=1e-10)

    def test_emission_shift_invariance(self):
        rng = np.random.default_rng(5)
        emis, trans = random_instance(rng, n=4, n_tags=3)
        base = log_partition(emis, trans)
        shifted = emis.copy()
        shifted[2] += 7.5
        assert log_partition(shifted, trans) == pytest.approx(base + 7.5, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            log_partition(np.zeros((2, 3)), Transitions.zeros(2))

    def test_stable_for_large_scores(self):
        emis = np.full((5, 3), 1e3)
        trans = Transitions.zeros(3)
        value = log_partition(emis, trans)
        assert np.isfinite(value)
        assert value == pytest.approx(5e3 + 5 * math.log(3), rel=1e-12)


class TestViterbi:
    def test_zero_transitions_is_positionwise_argmax(self):
        rng = np.random.default_rng(0)
        emis = rng.normal(size=(6, 4))
        trans = Transitions.zeros(4)
        path, _ = viterbi(emis, trans)
        assert path == list(np.argmax(emis, axis=1))

    def test_single_position(self):
        emis = np.array([[0.1, 0.9, -2.0]])
        trans = Transitions(np.zeros((3, 3)), np.array([0.0, 0.0, 3.5]), np.zeros(3))
        path, score = viterbi(emis, trans)
        assert path == [2]
        assert score == pytest.approx(3.5 - 2.0)

    def test_score_is_path_score(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            emis, trans = random_instance(rng)
            path, score = viterbi(emis, trans)
            assert score == pytest.approx(path_score(emis, trans, path), abs=1e-10)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            emis, trans = random_instance(rng)
            _, _, best_score, _, _ = enumerate_crf(emis, trans.matrix, trans.start, trans.end)
            _, score = viterbi(emis, trans)
            assert score == pytest.approx(best_score, abs=1e-10)

    def test_ties_break_toward_lower_index(self):
        emis = np.zeros((3, 3))
        trans = Transitions.zeros(3)
        path, _ = viterbi(emis, trans)
        assert path == [0, 0, 0]


class TestMarginals:
    def test_uniform_symmetry(self):
        emis = np.zeros((3, 2))
        trans = Transitions.zeros(2)
        np.testing.assert_allclose(crf_marginals(emis, trans), 0.5, atol=1e-12)

    def test_single_position_softmax(self):
        rng = np.random.default_rng(3)
        emis = rng.normal(size=(1, 4))
        trans = Transitions(np.zeros((4, 4)), rng.normal(size=4), rng.normal(size=4))
        scores = emis[0] + trans.start + trans.end
        expected = np.exp(scores - scores.max())
        expected /= expected.sum()
        np.testing.assert_allclose(crf_marginals(emis, trans)[0], expected, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            emis, trans = random_instance(rng)
            m = crf_marginals(emis, trans)
            np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            emis, trans = random_instance(rng)
            _, _, _, expected, _ = enumerate_crf(emis, trans.matrix, trans.start, trans.end)
            np.testing.assert_allclose(crf_marginals(emis, trans), expected, atol=1e-9)

    def test_invariant_under_emission_shift(self):
        rng = np.random.default_rng(6)
        emis, trans = random_instance(rng, n=4, n_tags=3)
        base = crf_marginals(emis, trans)
        shifted = emis.copy()
        shifted[1] += -3.3
        np.testing.assert_allclose(crf_marginals(shifted, trans), base, atol=1e-9)


class TestNllGrad:
    def test_peaked_emissions_near_zero_loss(self):
        n, n_tags = 4, 3
        gold = [0, 2, 1, 1]
        emis = np.full((n, n_tags), -100.0)
        emis[np.arange(n), gold] = 100.0
        loss, *_ = crf_nll_grad(emis, Transitions.zeros(n_tags), gold)
        assert 0.0 <= loss < 1e-6

    def test_uniform_loss_log4(self):
        loss, *_ = crf_nll_grad(np.zeros((2, 2)), Transitions.zeros(2), [0, 1])
        assert loss == pytest.approx(math.log(4.0), abs=1e-12)

    def test_gold_probability_in_unit_interval(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            emis, trans = random_instance(rng)
            n, n_tags = emis.shape
            gold = rng.integers(0, n_tags, size=n)
            loss, *_ = crf_nll_grad(emis, trans, gold)
            p = math.exp(-loss)
            assert 0.0 < p <= 1.0 + 1e-12
            log_z, *_ = enumerate_crf(emis, trans.matrix, trans.start, trans.end)
            expected = math.exp(path_score(emis, trans, gold) - log_z)
            assert p == pytest.approx(expected, abs=1e-10)

    def test_emission_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            emis, trans = random_instance(rng)
            n, n_tags = emis.shape
            gold = rng.integers(0, n_tags, size=n)
            _, d_emis, _, _, _ = crf_nll_grad(emis, trans, gold)
            np.testing.assert_allclose(d_emis.sum(axis=1), 0.0, atol=1e-9)

    def test_transition_gradient_matches_enumeration(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            emis, trans = random_instance(rng)
            n, n_tags = emis.shape
            gold = rng.integers(0, n_tags, size=n)
            _, d_emis, d_matrix, d_start, d_end = crf_nll_grad(emis, trans, gold)
            _, _, _, marg, pairs = enumerate_crf(emis, trans.matrix, trans.start, trans.end)
            gold_pairs = np.zeros_like(trans.matrix)
            for a, b in zip(gold[:-1], gold[1:]):
                gold_pairs[a, b] += 1.0
            np.testing.assert_allclose(d_matrix, pairs - gold_pairs, atol=1e-9)
            onehot = np.zeros_like(emis)
            onehot[np.arange(n), gold] = 1.0
            np.testing.assert_allclose(d_emis, marg - onehot, atol=1e-9)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        emis, trans = random_instance(rng, n=3, n_tags=3)
        gold = np.array([1, 0, 2])
        loss, d_emis, d_matrix, d_start, d_end = crf_nll_grad(emis, trans, gold)
        step = 1e-6

        def loss_at(e, m, s, z):
            return crf_nll_grad(e, Transitions(m, s, z), gold)[0]

        for target, grad in (("emis", d_emis), ("matrix", d_matrix),
                             ("start", d_start), ("end", d_end)):
            arrays = {"emis": emis.copy(), "matrix": trans.matrix.copy(),
                      "start": trans.start.copy(), "end": trans.end.copy()}
            arr = arrays[target]
            flat = arr.ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                lp = loss_at(arrays["emis"], arrays["matrix"], arrays["start"], arrays["end"])
                flat[idx] = orig - step
                lm = loss_at(arrays["emis"], arrays["matrix"], arrays["start"], arrays["end"])
                flat[idx] = orig
                numeric = (lp - lm) / (2 * step)
                analytic = grad.ravel()[idx]
                assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8) < 1e-6

    def test_out_of_range_gold(self):
        with pytest.raises(ValueError, match="range"):
            crf_nll_grad(np.zeros((2, 2)), Transitions.zeros(2), [0, 5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            crf_nll_grad(np.zeros((2, 2)), Transitions.zeros(2), [0])


class TestBioConstraints:
    def test_forbidden_transitions_penalized(self):
        tagset = TagSet(["PER", "LOC"])
        matrix, start = bio_constraint_penalty(tagset)
        idx = tagset.index
        assert matrix[idx("O"), idx("I-PER")] == -1e4
        assert matrix[idx("B-LOC"), idx("I-PER")] == -1e4
        assert matrix[idx("B-PER"), idx("I-PER")] == 0.0
        assert matrix[idx("I-PER"), idx("I-PER")] == 0.0
        assert start[idx("I-LOC")] == -1e4
        assert start[idx("B-LOC")] == 0.0

    def test_constrained_viterbi_never_emits_orphan_inside(self):
        rng = np.random.default_rng(11)
        tagset = TagSet(["PER"])
        matrix_pen, start_pen = bio_constraint_penalty(tagset)
        for _ in range(50):
            emis = rng.normal(scale=3.0, size=(5, len(tagset)))
            trans = Transitions.zeros(len(tagset)).penalized(matrix_pen, start_pen)
            path, _ = viterbi(emis, trans)
            labels = [tagset.label(i) for i in path]
            from seqtag.corpus import validate_bio

            assert validate_bio(labels) == []
