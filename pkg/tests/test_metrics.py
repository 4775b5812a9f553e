from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from occugen.metrics import (
    FeatureEmbedder,
    evaluate_run,
    fid,
    iou,
    iou_pmf,
    kid,
    pairwise_iou,
    polynomial_kernel,
    psd_sqrt,
)


def kid_oracle(a, b):
    """Unbiased MMD^2 by explicit double loops."""
    d = a.shape[1]
    k = lambda x, y: (float(np.dot(x, y)) / d + 1.0) ** 3
    m, n = len(a), len(b)
    xx = sum(k(a[i], a[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    yy = sum(k(b[i], b[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    xy = sum(k(a[i], b[j]) for i in range(m) for j in range(n)) / (m * n)
    return 1000.0 * (xx + yy - 2 * xy)


def test_iou_examples():
    assert iou({1, 2, 3}, {2, 3, 4}) == 0.5
    assert iou(set(), set()) == 1.0
    assert iou({1}, set()) == 0.0
    with pytest.raises(ValueError):
        iou(np.zeros(3, bool), np.zeros(4, bool))


@given(arrays(bool, (3, 3, 2)), arrays(bool, (3, 3, 2)))
def test_iou_matches_enumeration(a, b):
    inter = union = 0
    for idx in product(range(3), range(3), range(2)):
        inter += a[idx] and b[idx]
        union += a[idx] or b[idx]
    want = 1.0 if union == 0 else inter / union
    assert iou(a, b) == pytest.approx(want)
    sa = {i for i in product(range(3), range(3), range(2)) if a[i]}
    sb = {i for i in product(range(3), range(3), range(2)) if b[i]}
    assert iou(sa, sb) == pytest.approx(want)
    assert iou(a, b) == iou(b, a)


def test_pairwise_iou_and_pmf():
    g = [np.ones((2, 2, 2)), np.ones((2, 2, 2)), np.zeros((2, 2, 2))]
    vals = pairwise_iou(g)
    assert vals == [1.0, 0.0, 0.0]
    pmf = iou_pmf(vals)
    assert pmf.sum() == pytest.approx(1.0)
    assert pmf[0] == pytest.approx(2 / 3) and pmf[-1] == pytest.approx(1 / 3)
    assert iou_pmf([]).sum() == 0


def test_fid_self_is_zero():
    x = np.random.default_rng(0).normal(size=(300, 12))
    assert fid(x, x) <= 1e-6


def test_fid_one_dimensional_formula():
    rng = np.random.default_rng(1)
    a = rng.normal(1.0, 2.0, size=(500, 1))
    b = rng.normal(-0.5, 0.5, size=(400, 1))
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    want = (a.mean() - b.mean()) ** 2 + (sa - sb) ** 2
    assert fid(a, b) == pytest.approx(want, rel=1e-9)


def test_fid_gaussian_mean_shift():
    rng = np.random.default_rng(2)
    d = 1.5
    shift = np.zeros(4)
    shift[0] = d
    a = rng.normal(size=(10_000, 4))
    b = rng.normal(size=(10_000, 4)) + shift
    assert fid(a, b) == pytest.approx(d**2, rel=0.05)


@given(st.integers(0, 10_000))
def test_fid_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(30, 5)), rng.normal(1, 2, size=(40, 5))
    assert fid(a, b) >= 0
    assert fid(a, b) == pytest.approx(fid(b, a), rel=1e-6, abs=1e-8)


def test_psd_sqrt_of_singular_matrix():
    v = np.array([[1.0, 2.0, 0.0]])
    m = v.T @ v
    s = psd_sqrt(m)
    assert np.allclose(s @ s, m, atol=1e-10)
    assert np.allclose(s, s.T)


@given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_kid_matches_loop_oracle(m, n, d, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, d)), rng.normal(0.3, 1.2, size=(n, d))
    assert kid(a, b) == pytest.approx(kid_oracle(a, b), rel=1e-9, abs=1e-9)


def test_kid_at_fifty():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(50, 8)), rng.normal(0.5, 1, size=(50, 8))
    assert kid(a, b) == pytest.approx(kid_oracle(a, b), rel=1e-10)


def test_kernel_and_input_checks():
    x = np.ones((2, 4))
    assert np.allclose(polynomial_kernel(x, x), 8.0)
    with pytest.raises(ValueError):
        kid(np.ones((1, 3)), np.ones((5, 3)))
    with pytest.raises(ValueError):
        fid(np.ones((5, 3)), np.ones((5, 2)))


def test_embedder_is_seeded():
    rng = np.random.default_rng(0)
    grids = (rng.random((4, 32, 32, 16)) > 0.7).astype(float)
    e1, e2, e3 = FeatureEmbedder(0), FeatureEmbedder(0), FeatureEmbedder(1)
    f = e1(list(grids))
    assert f.shape == (4, e1.dim)
    assert np.array_equal(f, e2(list(grids)))
    assert not np.allclose(f, e3(list(grids)))


def test_evaluate_run_self_comparison():
    rng = np.random.default_rng(0)
    grids = [(rng.random((32, 32, 16)) > 0.7).astype(float) for _ in range(6)]
    out = evaluate_run(grids, grids, FeatureEmbedder(0), prediction_groups=[grids[:3]])
    assert out["FID"] <= 1e-6
    assert out["n_windows"] == 6 and out["unknown_pct"] is None
    assert 0.0 <= out["iou_mean"] <= 1.0
    with pytest.raises(ValueError):
        evaluate_run(grids, grids[:3], FeatureEmbedder(0))
