import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdc.errors import DataError
from msdc.series import (NormalizationStats, PowerSeries, WindowSpec, compute_normalization,
                         denormalize, make_windows, normalize, stitch_predictions, window_centers)


def series(values, interval=3.0):
    return PowerSeries(0.0, interval, values)


def test_power_series_rejects_nonfinite_and_bad_interval():
    with pytest.raises(DataError):
        series([1.0, np.nan])
    with pytest.raises(DataError):
        PowerSeries(0.0, 0.0, [1.0])


def test_cleaning_clamps_negatives():
    assert series([-3.0, 2.0]).cleaned().values.tolist() == [0.0, 2.0]


def test_power_series_is_immutable():
    s = series([1.0, 2.0])
    with pytest.raises(ValueError):
        s.values[0] = 5.0


class TestNormalization:
    def test_constant_series_is_degenerate(self):
        with pytest.raises(DataError):
            compute_normalization(series([100.0, 100.0, 100.0]))
        with pytest.raises(DataError):
            compute_normalization(series([5.0]))

    def test_population_std(self):
        stats = compute_normalization(series([0.0, 100.0, 200.0]))
        # sqrt(((100)^2 + 0 + 100^2) / 3)
        assert stats.mean == 100.0
        assert stats.std == pytest.approx(81.64965809277261, rel=1e-12)

    def test_normalize_values(self):
        stats = NormalizationStats(100.0, 81.6497)
        out = normalize(series([0.0, 100.0, 200.0]), stats)
        np.testing.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)
        stats = NormalizationStats(7.0, 2.0)
        assert normalize(np.array([7.0, 9.0]), stats).tolist() == [0.0, 1.0]

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
           st.floats(-1e3, 1e3), st.floats(1e-3, 1e4))
    def test_round_trip(self, xs, mean, std):
        stats = NormalizationStats(mean, std)
        x = np.asarray(xs)
        back = denormalize(normalize(x, stats), stats)
        np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9 * (abs(mean) + std))


class TestWindows:
    def test_spec_invariants(self):
        with pytest.raises(DataError):
            WindowSpec(4, 4, 1)
        with pytest.raises(DataError):
            WindowSpec(6, 2, 3)

    @given(st.integers(2, 40), st.integers(1, 39), st.integers(-50, 50))
    def test_nested_and_centered(self, w, q, t):
        if q >= w:
            return
        spec = WindowSpec(w, q, 1)
        inp, out = spec.input_range(t), spec.output_range(t)
        assert len(inp) == w and len(out) == q
        assert inp.start == t - w // 2 and inp.stop - 1 == t + (w + 1) // 2 - 1
        assert out.start == t - q // 2 and out.stop - 1 == t + (q + 1) // 2 - 1
        assert inp.start <= out.start and out.stop <= inp.stop

    def test_hand_enumerated_tiling(self):
        # w=6, q=2, stride=2, T=8: outputs [0,1], [2,3], [4,5], [6,7]
        spec = WindowSpec(6, 2, 2)
        T = 8
        agg = series(np.arange(T, dtype=float) * 10)
        app = series(np.arange(T, dtype=float))
        batch = make_windows(agg, app, np.zeros(T, int), spec, NormalizationStats(0.0, 1.0))
        assert batch.centers.tolist() == [1, 3, 5, 7]
        assert batch.target_power.tolist() == [[0, 1], [2, 3], [4, 5], [6, 7]]
        # center 1 input covers -2..3, replicate-padded on the left
        assert batch.inputs[0].tolist() == [0, 0, 0, 10, 20, 30]
        # center 7 input covers 4..9, replicate-padded on the right
        assert batch.inputs[-1].tolist() == [40, 50, 60, 70, 70, 70]

    def test_full_size_windows(self):
        spec = WindowSpec(400, 64, 64)
        T = 1000
        batch = make_windows(series(np.random.default_rng(0).random(T)), series(np.zeros(T)),
                             np.zeros(T, int), spec, NormalizationStats(0.5, 0.3))
        assert batch.inputs.shape[1] == 400
        assert batch.target_power.shape[1] == 64

    def test_single_fit_case(self):
        spec = WindowSpec(12, 4, 4)
        centers = window_centers(12, spec)
        assert len(centers) == 3  # ceil(12 / 4)

    def test_trailing_window_anchored_to_end(self):
        spec = WindowSpec(8, 4, 4)
        centers = window_centers(10, spec)
        starts = centers - 2
        assert starts.tolist() == [0, 4, 6]

    def test_errors(self):
        spec = WindowSpec(6, 4, 2)
        with pytest.raises(DataError):
            make_windows(series(np.ones(3)), series(np.ones(3)), np.zeros(3, int), spec,
                         NormalizationStats(0, 1))
        with pytest.raises(DataError):
            make_windows(series(np.ones(8)), series(np.ones(7)), np.zeros(8, int), spec,
                         NormalizationStats(0, 1))

    @settings(max_examples=60)
    @given(st.integers(2, 30), st.integers(1, 29), st.integers(1, 29), st.integers(1, 120))
    def test_identity_stitch_reproduces_target(self, w, q, stride, T):
        if not (q < w and stride <= q and T >= q):
            return
        spec = WindowSpec(w, q, stride)
        rng = np.random.default_rng(T)
        app = series(rng.random(T) * 100)
        batch = make_windows(series(rng.random(T)), app, np.zeros(T, int), spec,
                             NormalizationStats(0, 1))
        out = stitch_predictions(zip(batch.centers, batch.target_power), T)
        # averaging k copies of a value is exact only up to rounding
        np.testing.assert_allclose(out.values, app.values, rtol=1e-12, atol=0)


class TestStitch:
    def test_tiling_concatenates(self):
        out = stitch_predictions([(1, [1.0, 2.0]), (3, [3.0, 4.0])], 4)
        assert out.values.tolist() == [1, 2, 3, 4]

    def test_overlap_is_averaged(self):
        out = stitch_predictions([(1, [1.0, 10.0]), (2, [20.0, 4.0])], 3)
        assert out.values.tolist() == [1, 15, 4]

    def test_clamped_at_zero(self):
        out = stitch_predictions([(1, [-3.0, 2.0])], 2)
        assert out.values.tolist() == [0, 2]

    def test_gap_is_an_error(self):
        with pytest.raises(DataError):
            stitch_predictions([(1, [1.0, 2.0])], 4)
