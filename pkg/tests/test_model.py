import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpsep.model import (
    DataMatrix,
    DimensionError,
    ElboBreakdown,
    GridGeometry,
    Hyperparams,
    ModelState,
    NoiseDraws,
    TimeShifts,
    init_model,
    inverse_squash,
    load_checkpoint,
    save_checkpoint,
    squash,
)


def _data(P=5, H=2, W=3, times=None):
    return DataMatrix(np.arange(P * H * W, dtype=float).reshape(P, H * W), observed_times=times,
                      grid=GridGeometry(H, W))


class TestDataMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            DataMatrix(np.array([[1.0, np.nan]]))

    def test_grid_must_match_features(self):
        with pytest.raises(DimensionError):
            DataMatrix(np.zeros((2, 5)), grid=GridGeometry(2, 3))

    def test_times_length_checked(self):
        with pytest.raises(DimensionError):
            DataMatrix(np.zeros((3, 2)), observed_times=np.zeros(2))

    def test_values_are_read_only(self):
        d = _data()
        with pytest.raises(ValueError):
            d.values[0, 0] = 1.0

    def test_flat_grid_accepts_any_width(self):
        assert DataMatrix(np.zeros((2, 7))).n_features == 7


class TestHyperparams:
    @pytest.mark.parametrize("kw", [
        {"sigma": 0.0}, {"lam": -1.0}, {"n_sources": 0}, {"n_features_rff": 0}, {"n_mc": 0},
        {"control_points": [0.5]}, {"control_points": [0.6, 0.2]}, {"control_points": [0.0, 1.5]},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Hyperparams(**kw)

    def test_round_trip(self):
        hp = Hyperparams(sigma=0.1, lam=7.0, n_sources=2, control_points=np.linspace(0, 1, 5))
        back = Hyperparams.from_dict(hp.to_dict())
        assert back.to_dict() == hp.to_dict()


def test_squash_inverse():
    x = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(inverse_squash(squash(x)), x, atol=1e-10)
    assert squash(0.0) == 0.5


def test_inverse_squash_clips_endpoints():
    assert np.all(np.isfinite(inverse_squash(np.array([0.0, 1.0]))))


class TestInit:
    def test_documented_values(self):
        d = _data()
        hp = Hyperparams(n_sources=1, n_features_rff=4)
        st = init_model(d, hp, seed=0)
        np.testing.assert_array_equal(st.temporal.p, np.ones((1, 4)))
        np.testing.assert_array_equal(st.spatial.mu, np.zeros((1, 6)))
        np.testing.assert_array_equal(st.temporal.s, 1.0)
        np.testing.assert_array_equal(st.temporal.l, 1.0)
        np.testing.assert_array_equal(st.temporal.r, 0.0)
        assert st.spatial.alpha == 1.0
        assert st.spatial.beta == pytest.approx(2.0)
        assert np.std(st.temporal.m) < 0.05
        np.testing.assert_array_equal(st.shifts.t, 0.0)
        assert 0.0 <= st.phases.min() and st.phases.max() < 2 * np.pi

    def test_deterministic(self):
        d = _data()
        a = init_model(d, Hyperparams(), seed=7)
        b = init_model(d, Hyperparams(), seed=7)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())
        np.testing.assert_array_equal(a.phases, b.phases)

    def test_observed_times_mapped(self):
        d = _data(times=np.full(5, 0.5))
        st = init_model(d, Hyperparams(), seed=0)
        np.testing.assert_array_equal(st.shifts.t, 0.0)


@given(st.lists(st.floats(-30.0, 30.0), min_size=1, max_size=30))
def test_positive_parameters_stay_positive(vals):
    d = _data()
    hp = Hyperparams(n_sources=2, n_features_rff=3)
    state = init_model(d, hp, seed=0)
    x = state.to_vector()
    x = x + np.resize(np.asarray(vals), x.size)
    new = state.with_vector(x)
    for v in (new.temporal.p, new.temporal.s, new.temporal.l, new.spatial.alpha, new.spatial.beta, new.sigma):
        assert np.all(np.asarray(v) > 0)
    assert np.all(np.isfinite(new.shifts.times))


def test_vector_round_trip():
    state = init_model(_data(), Hyperparams(n_sources=2, n_features_rff=3), seed=2)
    x = state.to_vector()
    np.testing.assert_array_equal(state.with_vector(x).to_vector(), x)
    assert sum(s.stop - s.start for s in state.block_slices().values()) == x.size


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    hp = Hyperparams(n_sources=2, n_features_rff=3)
    state = init_model(_data(), hp, seed=2)
    x = state.to_vector()
    state = state.with_vector(x + rng.standard_normal(x.size) / 3.0)
    save_checkpoint(tmp_path / "c.json", state, hp)
    back, hp2 = load_checkpoint(tmp_path / "c.json")
    np.testing.assert_array_equal(back.to_vector(), state.to_vector())
    np.testing.assert_array_equal(back.phases, state.phases)
    assert back.seed == state.seed
    assert back.spatial.grid == state.spatial.grid
    assert hp2.to_dict() == hp.to_dict()


def test_checkpoint_rejects_other_documents(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.json")


def test_elbo_breakdown_total():
    br = ElboBreakdown(loglik=-10.0, constraint=-1.5, kl_spatial=2.0, kl_omega=0.25, kl_weights=0.125)
    assert br.total == pytest.approx(-10.0 - 1.5 - 2.0 - 0.25 - 0.125, rel=1e-12)


def test_noise_draw_shapes(rng):
    d = NoiseDraws.sample(rng, 2, 3, 9)
    assert d.zeta.shape == (2, 3) and d.epsilon.shape == (2, 3) and d.kappa.shape == (2, 9)
    z = NoiseDraws.zeros(2, 3, 9)
    assert not z.kappa.any()


def test_time_shifts_in_unit_interval():
    ts = TimeShifts(np.array([-50.0, 0.0, 50.0]))
    assert np.all((ts.times >= 0) & (ts.times <= 1))


def test_model_state_block_names():
    assert "shifts.t" in ModelState.BLOCKS and "log_sigma" in ModelState.BLOCKS
