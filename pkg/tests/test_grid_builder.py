"""
Tests for the recursive marginal and product quantization grids
"""

import numpy as np
import pytest

from src.config import GBM2D_PARAMS, GBM_PARAMS
from src.errors import ConfigurationError, UnsupportedLawError
from src.models.sde_models import GbmModel, Schedule, build_model
from src.quantization.grid_builder import (
    build_grids,
    component_laws,
    initial_step,
    joint_weights,
    marginal_laws,
    pmq,
    rmq_1d,
    transition_matrix,
)
from src.quantization.quantize_core import Grid1D

SUMMARY_COLUMNS = [
    'step', 'dim', 'scheme', 'codewords', 'distortion', 'converged',
    'newton_iterations', 'lloyd_iterations', 'fallback', 'empty_region_merges',
    'weight_sum_residual', 'transition_row_residual',
]


@pytest.fixture(params=['heston_grids', 'sabr_grids', 'gbm2d_grids'])
def grids(request):
    return request.getfixturevalue(request.param)


class TestProbabilityConservation:

    def test_joint_weights_sum_to_one(self, grids):
        for step in grids:
            assert abs(step.weights.sum() - 1.0) < 1e-10
            assert np.all(step.weights >= 0.0)

    def test_marginals_agree_with_joint_weights(self, grids):
        for step in grids:
            for n, grid in enumerate(step.grids):
                np.testing.assert_allclose(grid.weights, step.marginal_weights(n), atol=1e-9)

    def test_transition_rows_are_stochastic(self, grids):
        for step in grids[1:]:
            assert step.transition.shape == (grids[step.index - 1].size, step.size)
            assert np.all(step.transition >= 0.0)
            np.testing.assert_allclose(step.transition.sum(axis=1), 1.0, atol=1e-10)

    def test_weights_propagate_through_transitions(self, grids):
        # p_{k+2} = p_k T_{k+1} T_{k+2}
        for k in range(len(grids) - 2):
            two_step = grids[k].flat_weights @ grids[k + 1].transition @ grids[k + 2].transition
            np.testing.assert_allclose(two_step, grids[k + 2].flat_weights, atol=1e-9)

    def test_codewords_stay_above_lower_bound(self, grids):
        for step in grids:
            for n, grid in enumerate(step.grids):
                assert grid.codewords[0] >= grids.model.lower_bounds[n]


class TestSequence:

    def test_initial_step_is_the_starting_point(self, heston_grids, heston_model):
        step = heston_grids[0]
        assert step.shape == (1, 1)
        np.testing.assert_allclose(step.codewords[:, 0], heston_model.x0)
        assert step.transition is None

    def test_shapes_follow_the_schedule(self, heston_grids):
        assert len(heston_grids) == 7
        for step in heston_grids[1:]:
            assert step.shape == (14, 8)
            assert step.codewords.shape == (2, 14 * 8)
        assert heston_grids.dt == pytest.approx(1.0 / 6.0)

    def test_summary_table(self, gbm2d_grids):
        table = gbm2d_grids.summary()
        assert list(table.columns) == SUMMARY_COLUMNS
        assert len(table) == 2 * len(gbm2d_grids)
        assert (table['weight_sum_residual'] < 1e-10).all()
        assert set(table['scheme']) == {'euler'}

    def test_single_size_is_broadcast(self, gbm2d_model):
        grids = pmq(gbm2d_model, Schedule(1.0, 2, (5,)))
        assert grids[-1].shape == (5, 5)

    def test_threads_give_identical_grids(self, gbm2d_model):
        schedule = Schedule(1.0, 3, (6, 7))
        serial = pmq(gbm2d_model, schedule)
        threaded = pmq(gbm2d_model, schedule, threads=2)
        for a, b in zip(serial, threaded):
            for ga, gb in zip(a.grids, b.grids):
                np.testing.assert_array_equal(ga.codewords, gb.codewords)
            np.testing.assert_array_equal(a.weights, b.weights)


class TestMarginalLaws:

    def test_correlation_sign_leaves_marginal_grids_unchanged(self):
        schedule = Schedule(1.0, 3, (6, 7))
        plus = pmq(build_model('gbm2d', {**GBM2D_PARAMS, 'rho': 0.6}), schedule)
        minus = pmq(build_model('gbm2d', {**GBM2D_PARAMS, 'rho': -0.6}), schedule)
        for a, b in zip(plus, minus):
            for ga, gb in zip(a.grids, b.grids):
                np.testing.assert_allclose(ga.codewords, gb.codewords, rtol=0.0, atol=1e-12)
        assert not np.allclose(plus[-1].weights, minus[-1].weights, atol=1e-6)

    def test_autonomous_dimensions_use_their_own_mixture(self, heston_grids, heston_model):
        step = heston_grids[2]
        laws = component_laws(heston_model, step, heston_grids.dt, heston_grids.schemes)
        targets = marginal_laws(heston_model, step, heston_grids.dt, heston_grids.schemes, laws)
        assert targets[0] is laws[0]
        assert len(targets[1]) == step.grids[1].size
        assert len(laws[1]) == step.size
        assert targets[1].mean == pytest.approx(laws[1].mean, rel=1e-7)


class TestSchemeChecks:

    def test_wo2_needs_an_autonomous_dimension(self, heston_model):
        with pytest.raises(ConfigurationError):
            pmq(heston_model, Schedule(1.0, 2, (6, 4)), ('wo2', 'euler'))

    def test_scheme_count(self, heston_model):
        with pytest.raises(ConfigurationError):
            pmq(heston_model, Schedule(1.0, 2, (6, 4)), ('euler',))

    def test_unknown_scheme(self, heston_model):
        with pytest.raises(ConfigurationError):
            pmq(heston_model, Schedule(1.0, 2, (6, 4)), ('euler', 'milstein'))

    def test_size_count(self, heston_model):
        with pytest.raises(ConfigurationError):
            pmq(heston_model, Schedule(1.0, 2, (6, 4, 3)), ('euler', 'wo2'))

    def test_correlated_three_factor_law_is_unsupported(self):
        corr = [[1.0, 0.3, 0.2], [0.3, 1.0, 0.1], [0.2, 0.1, 1.0]]
        model = GbmModel({'x0': [100.0, 90.0, 80.0], 'r': 0.0, 'sigma': 0.2, 'rho': corr})
        with pytest.raises(UnsupportedLawError):
            pmq(model, Schedule(1.0, 1, (4,)))

    def test_uncorrelated_three_factor_law_factorizes(self):
        model = GbmModel({'x0': [100.0, 90.0, 80.0], 'r': 0.0, 'sigma': 0.2})
        grids = pmq(model, Schedule(1.0, 2, (3,)))
        assert grids[-1].shape == (3, 3, 3)
        assert abs(grids[-1].weights.sum() - 1.0) < 1e-10


class TestScalarModels:

    def test_rmq_preserves_the_euler_mean(self):
        model = build_model('gbm', GBM_PARAMS)
        grids = rmq_1d(model, Schedule(1.0, 4, (12,)))
        growth = 1.0 + GBM_PARAMS['r'] * grids.dt
        for step in grids:
            mean = step.flat_weights @ step.grids[0].codewords
            assert mean == pytest.approx(GBM_PARAMS['x0'] * growth ** step.index, rel=1e-7)

    def test_rmq_rejects_multi_factor_models(self, heston_model):
        with pytest.raises(ConfigurationError):
            rmq_1d(heston_model, Schedule(1.0, 2, (6,)))

    def test_build_grids_dispatches_on_dimension(self):
        model = build_model('gbm', GBM_PARAMS)
        grids = build_grids(model, Schedule(1.0, 2, (6,)))
        assert grids[-1].shape == (6,)
        assert grids.schemes == ('euler',)


class TestBuildingBlocks:

    def test_transition_from_a_point_mass(self, gbm2d_model):
        step = initial_step(gbm2d_model)
        laws = component_laws(gbm2d_model, step, 0.25, ('euler', 'euler'))
        grids = (Grid1D([105.0, 115.0]), Grid1D([80.0, 90.0, 100.0]))
        T = transition_matrix(laws, grids, gbm2d_model.correlation)
        assert T.shape == (1, 6)
        np.testing.assert_allclose(T.sum(), 1.0, atol=1e-12)

    def test_joint_weights_reshape(self):
        T = np.array([[0.5, 0.5, 0.0, 0.0], [0.0, 0.25, 0.25, 0.5]])
        w = joint_weights(np.array([0.5, 0.5]), T, (2, 2))
        np.testing.assert_allclose(w, [[0.25, 0.375], [0.125, 0.25]])


def test_twenty_codeword_mean_matches_the_lognormal_mean():
    model = build_model('gbm', GBM_PARAMS)
    grids = rmq_1d(model, Schedule(1.0, 12, (20,)))
    mean = grids[-1].flat_weights @ grids[-1].grids[0].codewords
    assert mean == pytest.approx(GBM_PARAMS['x0'] * np.exp(GBM_PARAMS['r']), rel=1e-3)


def test_pmq_in_one_dimension_is_rmq():
    model = build_model('gbm', GBM_PARAMS)
    schedule = Schedule(1.0, 3, (7,))
    a, b = pmq(model, schedule), rmq_1d(model, schedule)
    for sa, sb in zip(a, b):
        np.testing.assert_allclose(sa.grids[0].codewords, sb.grids[0].codewords, rtol=0.0, atol=1e-12)
        np.testing.assert_allclose(sa.weights, sb.weights, rtol=0.0, atol=1e-12)
