import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import f1_score as sk_f1

from dgda.metrics import confusion_counts, f1_is_degenerate, f1_score

binary_pairs = st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n)))


class TestF1:
    def test_perfect(self):
        assert f1_score([1, 0, 1], [1, 0, 1]) == 1.0

    def test_hand_computed(self):
        # tp=2 fp=1 fn=1 -> precision 2/3, recall 2/3
        assert f1_score([1, 1, 1, 0, 0], [1, 1, 0, 1, 0]) == pytest.approx(2 / 3, abs=1e-15)

    def test_all_negative_is_degenerate_zero(self):
        assert f1_score([0, 0], [0, 0]) == 0.0
        assert f1_is_degenerate([0, 0], [0, 0])
        assert not f1_is_degenerate([0, 1], [1, 1])

    def test_counts(self):
        assert confusion_counts([1, 0, 1, 0], [1, 1, 0, 0]) == (1, 1, 1, 1)

    @pytest.mark.parametrize("preds,labels", [([1], [1, 0]), ([], []), ([2], [1])])
    def test_invalid(self, preds, labels):
        with pytest.raises(ValueError):
            f1_score(preds, labels)

    @given(binary_pairs)
    def test_matches_sklearn(self, pair):
        preds, labels = pair
        assert f1_score(preds, labels) == pytest.approx(sk_f1(labels, preds, zero_division=0), abs=1e-12)

    @given(binary_pairs, st.integers(0, 2**31))
    def test_permutation_invariant(self, pair, seed):
        preds, labels = pair
        perm = np.random.default_rng(seed).permutation(len(preds))
        assert f1_score([preds[i] for i in perm], [labels[i] for i in perm]) == f1_score(preds, labels)
