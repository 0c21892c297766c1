import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpsep.evaluation import (
    ica_comparison, match_sources, model_selection_sweep, monotone_fraction,
    temporal_comparison, timeshift_correlation, write_sweep_csv,
)
from gpsep.model import DimensionError, Hyperparams, TimeShifts
from gpsep.optim import FitConfig, fit
from gpsep.synth import SynthConfig, generate

TINY_SYNTH = SynthConfig(height=8, width=8, n_images=15, n_timepoints=10,
                         centers=((2, 2), (2, 6), (6, 4)), widths=1.5, seed=0)
QUICK = FitConfig(max_iters=150, report_mc=4)


def _brute_force(est, truth):
    n = len(truth)
    c = np.array([[abs(np.corrcoef(e, t)[0, 1]) for t in truth] for e in est])
    return max(sum(c[p[i], i] for i in range(n)) for p in itertools.permutations(range(n)))


class TestMatchSources:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 20))
        m = match_sources(x, x)
        np.testing.assert_array_equal(m.permutation, [0, 1, 2])
        np.testing.assert_allclose(m.correlations, 1.0)

    def test_negated_and_reversed(self, rng):
        x = rng.normal(size=(3, 20))
        m = match_sources(-x[::-1], x)
        np.testing.assert_array_equal(m.permutation, [2, 1, 0])
        np.testing.assert_array_equal(m.signs, -1.0)
        np.testing.assert_allclose(m.correlations, 1.0)

    @given(arrays(float, (3, 6), elements=st.floats(-10, 10)), arrays(float, (3, 6), elements=st.floats(-10, 10)))
    def test_matches_brute_force(self, est, truth):
        if np.any(np.ptp(est, axis=1) < 1e-6) or np.any(np.ptp(truth, axis=1) < 1e-6):
            return
        assert match_sources(est, truth).total == pytest.approx(_brute_force(est, truth), abs=1e-9)

    def test_invariant_to_scale_offset_and_order(self, rng):
        est, truth = rng.normal(size=(4, 30)), rng.normal(size=(4, 30))
        a = match_sources(est, truth)
        perm = [3, 1, 0, 2]
        b = match_sources(est[perm] * 7.0 - 2.0, truth)
        np.testing.assert_allclose(b.correlations, a.correlations, rtol=1e-12)
        np.testing.assert_array_equal(np.array(perm)[b.permutation], a.permutation)

    def test_hungarian_path_agrees_with_enumeration(self, rng):
        truth = rng.normal(size=(8, 40))
        perm = rng.permutation(8)
        est = truth[perm] + 0.1 * rng.normal(size=(8, 40))
        m = match_sources(est, truth)
        np.testing.assert_array_equal(perm[m.permutation], np.arange(8))

    def test_constant_row_is_degenerate(self, rng):
        est = rng.normal(size=(2, 10))
        est[1] = 3.0
        m = match_sources(est, rng.normal(size=(2, 10)))
        assert m.degenerate.sum() == 1
        assert m.correlations[m.degenerate][0] == 0.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            match_sources(rng.normal(size=(2, 5)), rng.normal(size=(3, 5)))


class TestTimeshiftCorrelation:
    def test_examples(self):
        t = np.linspace(0.1, 0.9, 9)
        assert timeshift_correlation(t, t) == pytest.approx(1.0)
        assert timeshift_correlation(1 - t, t) == pytest.approx(-1.0)

    @given(st.floats(0.01, 100), st.floats(-5, 5))
    def test_affine_invariance(self, scale, shift):
        t = np.random.default_rng(1).uniform(size=50)
        assert timeshift_correlation(scale * t + shift, t) == pytest.approx(1.0, abs=1e-12)

    def test_accepts_time_shifts(self):
        t = np.linspace(-2, 2, 7)
        r = timeshift_correlation(TimeShifts(t), 1 / (1 + np.exp(-t)))
        assert r == pytest.approx(1.0)

    def test_constant_raises(self):
        with pytest.raises(ValueError):
            timeshift_correlation(np.ones(4), np.arange(4.0))

    def test_shuffled_times_are_uncorrelated(self):
        rng = np.random.default_rng(0)
        truth = rng.uniform(size=50)
        r = np.array([timeshift_correlation(rng.permutation(truth), truth) for _ in range(1000)])
        assert np.mean(np.abs(r) < 0.4) >= 0.99


@pytest.fixture(scope="module")
def tiny_fit():
    data, truth = generate(TINY_SYNTH)
    return fit(data, Hyperparams(), QUICK), truth


def test_temporal_comparison_shapes(tiny_fit):
    tr, truth = tiny_fit
    m = temporal_comparison(tr.state, truth)
    assert m.correlations.shape == (3,)
    assert np.all((m.correlations >= 0) & (m.correlations <= 1))


def test_monotone_fraction_range(tiny_fit):
    tr, _ = tiny_fit
    f = monotone_fraction(tr.state)
    assert f.shape == (3,) and np.all((f >= 0) & (f <= 1))


class TestSweep:
    def test_table_shape_and_determinism(self, tmp_path):
        rows = model_selection_sweep(TINY_SYNTH, 2, [1, 2], fit_cfg=QUICK, report_mc=4)
        assert [(r["fold"], r["n_sources"]) for r in rows] == [(0, 1), (0, 2), (1, 1), (1, 2)]
        assert all(len(r["map_norms"]) == r["n_sources"] and r["error"] == "" for r in rows)
        again = model_selection_sweep(TINY_SYNTH, 2, [1, 2], fit_cfg=QUICK, report_mc=4)
        assert rows == again
        write_sweep_csv(tmp_path / "s.csv", rows)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "fold,n_sources,elbo,norm_0,norm_1,error" and len(lines) == 5

    def test_order_independent(self):
        fwd = model_selection_sweep(TINY_SYNTH, 1, [1, 2], fit_cfg=QUICK, report_mc=4)
        rev = model_selection_sweep(TINY_SYNTH, 1, [2, 1], fit_cfg=QUICK, report_mc=4)
        assert fwd == rev[::-1]

    def test_failed_cell_is_recorded(self):
        rows = model_selection_sweep(TINY_SYNTH, 1, [1], hp=Hyperparams(sigma=1e-300), fit_cfg=QUICK, report_mc=4)
        assert rows[0]["error"] and np.isnan(rows[0]["elbo"])


def test_ica_comparison_runs():
    data, truth = generate(replace(TINY_SYNTH, hide_times=False))
    res = ica_comparison(data, truth, fit_cfg=QUICK)
    d = res.to_dict()
    assert len(d["model_temporal"]) == 3 and len(d["ica_temporal"]) == 3
    assert 0 <= res.ica_mean <= 1 and 0 <= res.model_mean <= 1


def test_ica_comparison_needs_times():
    data, truth = generate(TINY_SYNTH)
    with pytest.raises(ValueError):
        ica_comparison(data, truth, fit_cfg=QUICK)
