import datetime as dt
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from optbayes.market_data import (
    DataError, NormalizedSurface, OptionGrid, SurfaceObservation, black_call, implied_vol, load_series,
    normalize, repair_monotone, vol_to_price, write_series,
)

HEADER = "date,spot,rate,expiry,moneyness,vol\n"


def _rows(date, grid, spot=100.0, rate=0.01, vol=0.2, skip=()):
    out = []
    for tau in grid.expiries:
        for k in grid.moneyness:
            if (tau, k) in skip:
                continue
            out.append(f"{date},{spot},{rate},{tau!r},{k!r},{vol}\n")
    return out


class TestOptionGrid:
    def test_defaults(self, grid):
        assert grid.n_instruments == 49
        assert grid.shape == (7, 7)
        assert grid.T == 2.0

    @pytest.mark.parametrize("exp,mon", [((1.0, 0.5), (1.0,)), ((1.0,), (0.9, 0.9)), ((-1.0,), (1.0,)), ((), (1.0,))])
    def test_rejects_bad_axes(self, exp, mon):
        with pytest.raises(ValueError):
            OptionGrid(exp, mon)

    def test_with_strike_inserts_in_order(self, grid):
        g = grid.with_strike(0.97)
        assert g.moneyness == (0.8, 0.9, 0.95, 0.97, 1.0, 1.05, 1.1, 1.2)


class TestVolToPrice:
    def test_atm_value_matches_quadrature(self):
        # independent oracle: integrate the lognormal payoff against the normal density
        s = 0.2
        payoff = lambda z: max(math.exp(-0.5 * s * s + s * z) - 1.0, 0.0) * stats.norm.pdf(z)
        oracle, _ = integrate.quad(payoff, -12, 12, points=[0.1], epsabs=1e-14, epsrel=1e-13)
        assert vol_to_price(0.2, 1.0, 1.0, 1.0, 0.0) == pytest.approx(oracle, rel=1e-12)
        assert vol_to_price(0.2, 1.0, 1.0, 1.0, 0.0) == pytest.approx(0.0797, abs=1e-4)

    def test_zero_vol_limit_is_intrinsic(self):
        assert vol_to_price(1e-8, 1.0, 0.8, 1.0, 0.0) == pytest.approx(0.2, abs=1e-12)

    def test_infinite_vol_limit_is_spot(self):
        assert vol_to_price(1e3, 1.0, 1.0, 1.0, 0.0) == pytest.approx(1.0, abs=1e-12)

    @given(vol=st.floats(0.01, 2.0), k=st.floats(0.5, 1.5), tau=st.floats(0.02, 3.0), r=st.floats(-0.02, 0.1))
    def test_within_no_arbitrage_bounds(self, vol, k, tau, r):
        p = vol_to_price(vol, 1.0, k, tau, r)
        assert max(1.0 - k * math.exp(-r * tau), 0.0) - 1e-15 <= p <= 1.0

    @given(vol=st.floats(0.1, 1.5), k=st.floats(0.8, 1.25), tau=st.floats(0.1, 2.0), r=st.floats(0.0, 0.08))
    def test_strictly_increasing_in_vol(self, vol, k, tau, r):
        # kept away from the region where vega underflows relative to the price
        assert vol_to_price(vol * 1.01, 1.0, k, tau, r) > vol_to_price(vol, 1.0, k, tau, r)

    @given(vol=st.floats(0.1, 1.0), k=st.floats(0.9, 1.1), tau=st.floats(1 / 12, 2.0), r=st.floats(0.0, 0.05))
    def test_round_trip_through_implied_vol(self, vol, k, tau, r):
        p = vol_to_price(vol, 100.0, 100.0 * k, tau, r)
        iv = implied_vol(p, 100.0, 100.0 * k, tau, r)
        np.testing.assert_allclose(vol_to_price(iv, 100.0, 100.0 * k, tau, r), p, rtol=1e-10)


class TestNormalize:
    def test_scale_invariance(self, grid):
        vols = 0.2 + 0.05 * np.random.default_rng(0).uniform(0, 1, (7, 1)) - 0.02 * (grid.ks - 1.0)
        a = normalize(SurfaceObservation(dt.date(2021, 1, 4), 1.0, 0.0, vols, grid))
        b = normalize(SurfaceObservation(dt.date(2021, 1, 4), 100.0, 0.0, vols, grid))
        np.testing.assert_array_equal(a.z, b.z)

    def test_zero_strike_column(self, flat_obs):
        z = normalize(flat_obs).z
        assert np.all(z[:, 0] == 1.0)
        assert z.shape == (7, 8)

    def test_flat_surface_monotone(self, flat_obs):
        z = normalize(flat_obs).z
        assert np.all(np.diff(z, axis=1) <= 0)
        assert np.all(np.diff(z[:, 1:], axis=0) >= 0)

    def test_zero_rate_matches_spot_moneyness_prices(self, flat_obs):
        g = flat_obs.grid
        direct = vol_to_price(0.2, 100.0, 100.0 * g.ks[None, :], g.taus[:, None], 0.0) / 100.0
        np.testing.assert_allclose(normalize(flat_obs).z[:, 1:], direct, rtol=1e-13)

    def test_forward_moneyness_with_rates(self, grid):
        obs = SurfaceObservation(dt.date(2021, 1, 4), 50.0, 0.05, np.full(grid.shape, 0.25), grid)
        direct = obs.prices() / obs.spot
        np.testing.assert_allclose(normalize(obs).z[:, 1:], direct, rtol=1e-12)
        assert np.all((normalize(obs).z >= 0) & (normalize(obs).z <= 1))


class TestRepair:
    def test_small_violation_is_projected(self, caplog):
        z = np.array([[1.0, 0.5, 0.5 + 5e-5, 0.2]])
        with caplog.at_level(logging.WARNING):
            out = repair_monotone(z)
        assert np.all(np.diff(out) <= 0)
        np.testing.assert_allclose(out[0, 1:3], 0.5 + 2.5e-5)
        assert "repairing" in caplog.text

    def test_large_violation_is_an_error(self):
        with pytest.raises(DataError):
            repair_monotone(np.array([[1.0, 0.4, 0.5]]))

    def test_surface_rejects_out_of_range(self, grid):
        z = np.ones((7, 8))
        z[0, 3] = 1.5
        with pytest.raises(DataError):
            NormalizedSurface(grid, z)


class TestLoadSeries:
    def test_two_complete_dates(self, tmp_path, grid):
        p = tmp_path / "d.csv"
        p.write_text(HEADER + "".join(_rows("2021-01-05", grid) + _rows("2021-01-04", grid)))
        series = load_series(p, grid)
        assert [o.date for o in series] == [dt.date(2021, 1, 4), dt.date(2021, 1, 5)]
        assert all(o.vols.size == 49 for o in series)

    def test_missing_cell_drops_date(self, tmp_path, grid, caplog):
        p = tmp_path / "d.csv"
        rows = _rows("2021-01-04", grid) + _rows("2021-01-05", grid, skip={(0.5, 0.95)})
        p.write_text(HEADER + "".join(rows))
        with caplog.at_level(logging.WARNING):
            series = load_series(p, grid)
        assert len(series) == 1
        assert "2021-01-05" in caplog.text

    @pytest.mark.parametrize("field,value", [("vol", "0.0"), ("spot", "-1")])
    def test_nonpositive_values_name_the_row(self, tmp_path, grid, field, value):
        rows = _rows("2021-01-04", grid)
        parts = rows[3].rstrip("\n").split(",")
        parts[{"vol": 5, "spot": 1}[field]] = value
        rows[3] = ",".join(parts) + "\n"
        p = tmp_path / "d.csv"
        p.write_text(HEADER + "".join(rows))
        with pytest.raises(DataError, match=r"d\.csv:5"):
            load_series(p, grid)

    def test_round_trip_is_exact(self, tmp_path, grid):
        vols = np.random.default_rng(1).uniform(0.1, 0.4, grid.shape)
        series = [SurfaceObservation(dt.date(2021, 1, 4 + i), 100.0 + i / 3, 0.01, vols, grid) for i in range(3)]
        p = tmp_path / "d.csv"
        write_series(p, series)
        back = load_series(p, grid)
        assert [o.spot for o in back] == [o.spot for o in series]
        for a, b in zip(back, series):
            np.testing.assert_array_equal(a.vols, b.vols)
            assert a.log_price == math.log(a.spot)

    def test_instrument_order_matches_grid(self, tmp_path, grid):
        rows = []
        for i, tau in enumerate(grid.expiries):
            for j, k in enumerate(grid.moneyness):
                rows.append(f"2021-01-04,100,0,{tau!r},{k!r},{0.1 + 0.01 * i + 0.001 * j}\n")
        p = tmp_path / "d.csv"
        p.write_text(HEADER + "".join(reversed(rows)))
        (obs,) = load_series(p, grid)
        expected = 0.1 + 0.01 * np.arange(7)[:, None] + 0.001 * np.arange(7)[None, :]
        np.testing.assert_allclose(obs.vols, expected, rtol=1e-15)


class TestBlackCall:
    def test_vectorized_matches_scalar(self):
        k = np.array([0.8, 1.0, 1.2])
        out = black_call(1.0, k, 0.3, 0.5)
        np.testing.assert_allclose(out, [black_call(1.0, v, 0.3, 0.5) for v in k], rtol=0, atol=0)
