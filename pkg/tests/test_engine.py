import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from optbayes.engine import (
    EngineConfig, InstanceError, LikelihoodState, Mode, increments, log_prior, move_matrix, penalty_matrix,
    posterior, run, step, with_mode,
)
from optbayes.market_data import OptionGrid, SurfaceObservation, normalize
from optbayes.models.density import transition_log_density
from optbayes.models.families import ModelFamily, ModelInstance
from optbayes.models.pricing import model_surface
from optbayes.penalty import PenaltyConfig, PenaltyMode, penalty

H = 1 / 252
GAUSS = [ModelInstance.create("BlackScholes", sigma=s) for s in (0.1, 0.2, 0.4)]


def make_series(n=11, seed=0, grid=OptionGrid(), vol=0.2, rate=0.0):
    rng = np.random.default_rng(seed)
    x = np.log(100) + np.concatenate(([0.0], np.cumsum(0.012 * rng.standard_normal(n - 1))))
    days = [dt.date(2021, 1, 1) + dt.timedelta(days=i) for i in range(n)]
    return [SurfaceObservation(d, float(np.exp(v)), rate, np.full(grid.shape, vol) + 0.01 * rng.standard_normal((7, 1)),
                               grid) for d, v in zip(days, x)]


class TestPosterior:
    def test_uniform_at_start(self):
        cfg = EngineConfig()
        post = posterior(LikelihoodState.initial(3, cfg), GAUSS)
        np.testing.assert_allclose(post.weights, 1 / 3, rtol=1e-15)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
    def test_softmax_is_stable(self, ell):
        universe = [GAUSS[0]] * len(ell)
        w = posterior(LikelihoodState(np.array(ell), 1, EngineConfig()), universe).weights
        assert np.all(np.isfinite(w)) and np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert w[np.argmax(ell)] == w.max()

    def test_family_prior(self):
        uni = GAUSS + [ModelInstance.create("Merton")]
        np.testing.assert_allclose(np.exp(log_prior(uni, True)), [1 / 3] * 3 + [1.0])
        post = posterior(LikelihoodState(np.zeros(4), 0, EngineConfig(family_prior=True)), uni)
        assert post.by_family == {ModelFamily.BLACK_SCHOLES: pytest.approx(0.5), ModelFamily.MERTON: pytest.approx(0.5)}

    def test_mismatched_universe(self):
        with pytest.raises(ValueError):
            posterior(LikelihoodState.initial(2, EngineConfig()), GAUSS)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EngineConfig(beta=1.5)
        with pytest.raises(ValueError):
            EngineConfig(h=0.0)
        assert EngineConfig(mode="MovesOnly").mode is Mode.MOVES_ONLY


class TestRecursion:
    def test_conjugate_gaussian(self):
        """Beta = 1 moves-only posterior equals the closed-form product of normal likelihoods."""
        series = make_series()
        res = run(series, GAUSS, EngineConfig(beta=1.0, mode=Mode.MOVES_ONLY, floor=-np.inf))
        y = np.diff([o.log_price for o in series])
        logl = np.array([stats.norm.logpdf(y, -0.5 * s * s * H, s * np.sqrt(H)).sum() for s in (0.1, 0.2, 0.4)])
        exact = np.exp(logl - special.logsumexp(logl))
        np.testing.assert_allclose(res.posterior(10, GAUSS).weights, exact, rtol=1e-10, atol=1e-300)

    def test_run_equals_repeated_steps(self):
        series = make_series(6)
        uni = GAUSS + [ModelInstance.create("Kou"), ModelInstance.create("Heston")]
        cfg = EngineConfig(beta=0.9, lam=50.0)
        res = run(series, uni, cfg)
        state = LikelihoodState.initial(len(uni), cfg)
        for t in range(1, 6):
            state = step(state, series[t - 1], series[t], uni)
            np.testing.assert_allclose(res.ell[t], state.ell, rtol=1e-12)
        assert state.t == 5

    def test_beta_zero_keeps_only_last_day(self):
        series = make_series(5)
        res = run(series, GAUSS, EngineConfig(beta=0.0))
        np.testing.assert_allclose(res.ell[4], res.logp[3] - res.q[3], rtol=1e-15)

    def test_discounting(self):
        series = make_series(4)
        cfg = EngineConfig(beta=0.5, mode=Mode.MOVES_ONLY)
        res = run(series, GAUSS, cfg)
        expected = 0.25 * res.logp[0] + 0.5 * res.logp[1] + res.logp[2]
        np.testing.assert_allclose(res.ell[3], expected, rtol=1e-14)

    def test_modes_split_terms(self):
        series = make_series(4)
        moves = run(series, GAUSS, EngineConfig(mode=Mode.MOVES_ONLY))
        opts = run(series, GAUSS, EngineConfig(mode=Mode.OPTIONS_ONLY))
        both = run(series, GAUSS, EngineConfig(mode=Mode.COMBINED))
        assert np.all(moves.q == 0) and np.all(opts.logp == 0)
        np.testing.assert_allclose(both.ell, moves.ell + opts.ell, rtol=1e-12)

    def test_increments_match_components(self):
        series = make_series(3, rate=0.02)
        uni = [ModelInstance.create("Merton"), ModelInstance.create("SABR")]
        cfg = EngineConfig(lam=7.0)
        logp, q = increments(uni, series[1], series[2], cfg)
        for i, m in enumerate(uni):
            assert logp[i] == transition_log_density(m, None, series[1].log_price, series[2].log_price, H, 0.02)
            assert q[i] == pytest.approx(penalty(model_surface(m, 0.02, series[2].grid), normalize(series[2]),
                                                 PenaltyConfig(7.0)), rel=1e-12)

    def test_penalty_matrix_naive(self):
        series = make_series(3)
        cfg = PenaltyConfig(2.0, PenaltyMode.NAIVE, 1e-2)
        out = penalty_matrix(GAUSS, series, cfg)
        assert out[1, 2] == pytest.approx(penalty(model_surface(GAUSS[2], 0.0, series[2].grid), normalize(series[2]), cfg),
                                          rel=1e-12)

    def test_move_matrix_shape(self):
        assert move_matrix(GAUSS, make_series(5), H).shape == (4, 3)

    def test_single_day(self):
        res = run(make_series(1), GAUSS, EngineConfig())
        assert res.ell.shape == (1, 3)

    def test_instance_error_names_instance(self):
        bad = ModelInstance.create("BlackScholes", sigma=-1.0)
        with pytest.raises(InstanceError, match="sigma=-1.0"):
            run(make_series(3), GAUSS + [bad], EngineConfig())

    def test_with_mode(self):
        assert with_mode(EngineConfig(), "OptionsOnly").mode is Mode.OPTIONS_ONLY
