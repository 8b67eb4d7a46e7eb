import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepifsac.augmentation import apply_plan, cutmix


def batch(b, n, seed=0):
    return np.random.default_rng(seed).standard_normal((b, n))


def test_zero_probability_is_identity():
    x = batch(16, 5)
    out, plan = cutmix(x, 0.0, seed=1)
    assert np.array_equal(out, x) and plan.keep.all()


def test_full_swap_when_nothing_kept():
    x = batch(4, 3)
    keep = np.zeros((4, 3), dtype=np.uint8)
    partner = np.array([1, 2, 3, 0])
    assert np.array_equal(apply_plan(x, keep, partner), x[partner])


def test_two_row_swap_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    keep = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    assert np.array_equal(apply_plan(x, keep, np.array([1, 0])), [[1.0, 4.0], [3.0, 4.0]])


@settings(max_examples=40, deadline=None)
@given(b=st.integers(1, 20), n=st.integers(1, 6), p=st.floats(0.0, 0.95), seed=st.integers(0, 10_000))
def test_every_cell_is_own_or_same_column_of_partner(b, n, p, seed):
    x = batch(b, n, seed)
    out, plan = cutmix(x, p, seed=seed)
    assert out.shape == x.shape
    for i in range(b):
        for j in range(n):
            assert out[i, j] == (x[i, j] if plan.keep[i, j] else x[plan.partner[i], j])
            assert out[i, j] in x[:, j]
    if b > 1:
        assert (plan.partner != np.arange(b)).all()
    assert ((plan.partner >= 0) & (plan.partner < b)).all()


def test_corrupted_fraction_near_probability():
    _, plan = cutmix(batch(128, 20), 0.3, seed=5)
    assert 0.25 <= 1 - plan.keep.mean() <= 0.35


def test_partners_cover_other_rows_uniformly():
    counts = np.zeros((5, 5))
    for s in range(2000):
        _, plan = cutmix(batch(5, 1), 0.3, seed=s)
        counts[np.arange(5), plan.partner] += 1
    assert np.all(np.diag(counts) == 0)
    off = counts[~np.eye(5, dtype=bool)]
    assert off.min() > 400 and off.max() < 600


def test_seeded_runs_repeat():
    x = batch(10, 4)
    a, pa = cutmix(x, 0.3, seed=9)
    b, pb = cutmix(x, 0.3, seed=9)
    assert np.array_equal(a, b) and np.array_equal(pa.partner, pb.partner)


def test_single_row_batch_keeps_itself():
    x = batch(1, 4)
    out, plan = cutmix(x, 0.5, seed=0)
    assert np.array_equal(out, x) and plan.partner.tolist() == [0]


@pytest.mark.parametrize("p", [-0.1, 1.0])
def test_probability_bounds(p):
    with pytest.raises(ValueError):
        cutmix(batch(3, 2), p, seed=0)


def test_needs_randomness_source():
    with pytest.raises(ValueError, match="seed or a generator"):
        cutmix(batch(3, 2), 0.3)
