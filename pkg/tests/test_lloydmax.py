import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowra.codebook import Codebook, default_codebook
from lowra.errors import ConfigError, DataError, ShapeError
from lowra.lloydmax import (
    MseTable,
    WeightedSamples,
    average_thresholds,
    bin_codes,
    build_mse_table,
    channel_samples,
    lloyd_fit_channel,
    weighted_bin_means,
    weighted_mse,
)


def independent_bin_means(values, weights, thresholds, levels):
    out = []
    for j in range(levels):
        lo = -np.inf if j == 0 else thresholds[j - 1]
        hi = np.inf if j == levels - 1 else thresholds[j]
        sel = (values > lo) & (values <= hi)
        out.append(np.dot(weights[sel], values[sel]) / weights[sel].sum() if sel.any() else np.nan)
    return np.array(out)


def random_samples(rng, n=256):
    return WeightedSamples(np.clip(rng.standard_normal(n) / 2.5, -1, 1), rng.uniform(0.05, 3.0, n))


def test_weighted_centroid_formula():
    s = WeightedSamples([-1.0, 1.0], [1.0, 3.0])
    mean = weighted_bin_means(s, np.array([]), np.array([0.0]))
    assert mean.tolist() == [0.5]


def test_symmetric_two_cluster():
    s = WeightedSamples([-1, -0.5, 0.5, 1], np.ones(4))
    book, trace = lloyd_fit_channel(s, default_codebook(1), max_iters=10)
    assert book.mappings.tolist() == [-0.75, 0.75]
    assert book.thresholds.tolist() == [0.0]
    assert trace.converged
    assert trace.mse[-1] == pytest.approx(0.0625)


def test_two_bit_fixed_point(rng):
    s = random_samples(rng, 64)
    book, trace = lloyd_fit_channel(s, default_codebook(2), max_iters=200)
    assert trace.converged
    means = independent_bin_means(s.values, s.weights, book.thresholds, 4)
    ok = ~np.isnan(means)
    np.testing.assert_allclose(book.mappings[ok], means[ok], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(book.thresholds, (book.mappings[1:] + book.mappings[:-1]) / 2, rtol=1e-12)
    assert weighted_mse(s, book) <= weighted_mse(s, default_codebook(2))


def test_trace_non_increasing(rng):
    for p in (1, 2, 4):
        _, trace = lloyd_fit_channel(random_samples(rng), default_codebook(p), max_iters=50)
        assert all(b <= a for a, b in zip(trace.mse, trace.mse[1:-1]))
        assert trace.iterations_run == len(trace.mse) - 1


def test_default_two_iterations(rng):
    _, trace = lloyd_fit_channel(random_samples(rng), default_codebook(4))
    assert trace.iterations_run <= 2


def test_empty_bin_keeps_codepoint():
    s = WeightedSamples([0.9, 0.95, 1.0], np.ones(3))
    book, _ = lloyd_fit_channel(s, default_codebook(1), max_iters=1)
    assert book.mappings[0] == -1.0
    assert book.mappings[1] == pytest.approx(0.95)


def test_sample_validation():
    with pytest.raises(DataError):
        WeightedSamples([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(DataError):
        WeightedSamples([1.0], [-1.0])
    with pytest.raises(ShapeError):
        WeightedSamples([1.0, 2.0], [1.0])
    with pytest.raises(ConfigError):
        lloyd_fit_channel(WeightedSamples([1.0], [1.0]), default_codebook(1), max_iters=0)
    with pytest.raises(ConfigError):
        channel_samples([0.5], [1.0], weight_power=3)


def test_weight_power_squares():
    s = channel_samples([0.5, -1.0], [2.0, 3.0], weight_power=2)
    assert s.weights.tolist() == [4.0, 9.0]
    assert channel_samples([0.0, 0.0], [0.0, 0.0]).weights.tolist() == [1.0, 1.0]


def _optimal_one_bit_sse(values, weights):
    order = np.argsort(values)
    v, w = values[order], weights[order]

    def sse(sl):
        if sl.stop - sl.start == 0:
            return 0.0
        m = np.dot(w[sl], v[sl]) / w[sl].sum()
        return float(np.dot(w[sl], (v[sl] - m) ** 2))

    return min(sse(slice(0, k)) + sse(slice(k, v.size)) for k in range(v.size + 1))


def _one_bit_fixed_points(values, weights):
    """Contiguous splits of the sorted distinct values that are Lloyd fixed points."""
    v = np.unique(values)
    points = []
    for k in range(1, v.size):
        lo, hi = values <= v[k - 1], values > v[k - 1]
        m0 = np.dot(weights[lo], values[lo]) / weights[lo].sum()
        m1 = np.dot(weights[hi], values[hi]) / weights[hi].sum()
        t = (m0 + m1) / 2
        if v[k - 1] <= t < v[k]:
            points.append(k)
    return points


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from([-0.9, -0.6, -0.3, 0.1, 0.4, 0.8]), min_size=2, max_size=12),
       st.data())
def test_tiny_one_bit_matches_exhaustive(values, data):
    values = np.array(values)
    weights = np.array(data.draw(st.lists(st.sampled_from([0.5, 1.0, 2.0]),
                                          min_size=values.size, max_size=values.size)))
    s = WeightedSamples(values, weights)
    book, trace = lloyd_fit_channel(s, default_codebook(1), max_iters=100)
    codes = bin_codes(values, book.thresholds)
    fitted = float(np.dot(weights, (values - book.mappings[codes]) ** 2))
    means = independent_bin_means(values, weights, book.thresholds, 2)
    ok = ~np.isnan(means)
    np.testing.assert_allclose(book.mappings[ok], means[ok], rtol=1e-9, atol=1e-12)
    # An empty bin that keeps its codepoint is a fixed point too, so only
    # compare against the optimum when both bins are used.
    if ok.all() and len(_one_bit_fixed_points(values, weights)) == 1:
        assert fitted == pytest.approx(_optimal_one_bit_sse(values, weights), rel=1e-9, abs=1e-12)


def test_average_identical_thresholds(rng):
    s = [random_samples(rng), random_samples(rng)]
    book, _ = lloyd_fit_channel(s[0], default_codebook(2), max_iters=100)
    shared, refit = average_thresholds([book, book], [s[0], s[0]])
    np.testing.assert_allclose(shared, book.thresholds, rtol=0, atol=0)
    np.testing.assert_allclose(refit[0].mappings, book.mappings, rtol=1e-12)


def test_average_one_bit_mean():
    a = Codebook(1, [-0.5, 0.5], [0.0])
    b = Codebook(1, [-0.3, 0.7], [0.2])
    samples = [WeightedSamples([-0.5, 0.5], [1, 1]), WeightedSamples([-0.3, 0.7], [1, 1])]
    shared, books = average_thresholds([a, b], samples)
    assert shared.tolist() == [pytest.approx(0.1)]
    assert all(np.allclose(bk.thresholds, [0.1]) for bk in books)


def test_average_refit_never_hurts(rng):
    samples = [random_samples(rng) for _ in range(8)]
    fitted = [lloyd_fit_channel(s, default_codebook(2), 2)[0] for s in samples]
    shared, refit = average_thresholds(fitted, samples)
    np.testing.assert_allclose(shared, np.mean([b.thresholds for b in fitted], axis=0))
    for old, new, s in zip(fitted, refit, samples):
        stale = Codebook(2, np.clip(old.mappings, np.r_[-np.inf, shared], np.r_[shared, np.inf]), shared)
        assert weighted_mse(s, new) <= weighted_mse(s, stale) + 1e-15


def test_average_rejects_mixed_precisions(rng):
    s = random_samples(rng)
    with pytest.raises(ShapeError):
        average_thresholds([default_codebook(1), default_codebook(2)], [s, s])


def test_mse_table_exact_cases():
    book = default_codebook(2)
    row_a = np.tile(book.mappings * 3.0, 16)            # one 64-element block, absmax 3
    row_b = np.full(64, 2.5)                             # constant channel
    table, books = build_mse_table(np.stack([row_a, row_b]), (1, 2, 4))
    assert table.mse[0, 1] == 0.0 and table.mse[0, 2] == 0.0
    assert np.all(table.mse[1] == 0.0)
    assert set(books) == {1, 2, 4} and len(books[2]) == 2
    assert books[2][0].mappings.dtype == np.float32


def test_mse_table_monotone_in_precision(rng):
    w = (rng.standard_normal((120, 128)) * rng.uniform(0.1, 3, (120, 1))).astype(np.float32)
    table, _ = build_mse_table(w, (1, 2, 4))
    assert table.channels == 120 and table.params.tolist() == [128] * 120
    assert np.all(table.column(4) <= table.column(2))
    assert np.all(table.column(2) <= table.column(1))


def test_mse_table_original_scale(rng):
    w = rng.standard_normal((3, 64)).astype(np.float32)
    small, _ = build_mse_table(w, (2,))
    big, _ = build_mse_table(w * 4, (2,))
    np.testing.assert_allclose(big.mse, small.mse * 16, rtol=1e-5)


def test_mse_table_helpers():
    t = MseTable((1, 2, 4), np.arange(6.0).reshape(2, 3), [8, 8])
    r = t.restrict((2, 4))
    assert r.precisions == (2, 4) and r.mse.tolist() == [[1, 2], [4, 5]]
    both = MseTable.concat([t, t])
    assert both.channels == 4
    with pytest.raises(ConfigError):
        t.restrict((3,))
    with pytest.raises(DataError):
        MseTable((1,), [[-1.0]], [4])
