"""
Tests for saving, loading and exporting grid sequences
"""

import numpy as np
import pandas as pd
import pytest

import src.data.grid_store as grid_store
from src.config import GBM2D_PARAMS
from src.data.grid_store import (
    check_provenance,
    export_grids_text,
    load_grids,
    params_hash,
    read_header,
    save_grids,
)
from src.errors import ProvenanceError
from src.models.sde_models import Schedule, build_model
from src.quantization.grid_builder import pmq

SCHEDULE = Schedule(1.0, 2, (4, 5))


@pytest.fixture(scope='module')
def small_grids(gbm2d_model):
    return pmq(gbm2d_model, SCHEDULE)


@pytest.fixture
def saved(small_grids, tmp_path):
    return save_grids(small_grids, tmp_path / 'grid.npz')


class TestRoundTrip:

    def test_arrays_are_restored_exactly(self, small_grids, saved):
        loaded = load_grids(saved)
        assert len(loaded) == len(small_grids)
        for a, b in zip(small_grids, loaded):
            for ga, gb in zip(a.grids, b.grids):
                np.testing.assert_array_equal(ga.codewords, gb.codewords)
                assert ga.support == gb.support
            np.testing.assert_array_equal(a.weights, b.weights)
            if a.transition is None:
                assert b.transition is None
            else:
                np.testing.assert_array_equal(a.transition, b.transition)

    def test_marginal_weights_are_renormalized(self, gbm2d_model, tmp_path):
        grids = pmq(gbm2d_model, SCHEDULE)
        step = grids[-1]
        step.weights *= 1.0 + 5e-9
        loaded = load_grids(save_grids(grids, tmp_path / "drift.npz"))
        for grid in loaded[-1].grids:
            assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(grid.weights >= 0.0)

    def test_model_and_schedule_are_restored(self, small_grids, saved):
        loaded = load_grids(saved)
        assert loaded.model.name == 'gbm2d'
        assert loaded.schedule == SCHEDULE
        assert loaded.schemes == small_grids.schemes
        check_provenance(loaded, small_grids.model, SCHEDULE, small_grids.schemes)

    def test_readable_by_numpy(self, saved):
        with np.load(saved) as archive:
            assert 'step2_transition' in archive.files
            assert archive['step2_joint_weights'].shape == (4, 5)
            assert archive['step1_dim2_codewords'].dtype == np.dtype('<f8')

    def test_rebuilds_are_byte_identical(self, gbm2d_model, small_grids, saved, tmp_path):
        again = save_grids(pmq(gbm2d_model, SCHEDULE), tmp_path / 'again.npz')
        assert saved.read_bytes() == again.read_bytes()

    def test_header(self, small_grids, saved):
        header = read_header(saved)
        assert header['params_hash'] == params_hash('gbm2d', GBM2D_PARAMS)
        assert header['schedule'] == {'horizon': 1.0, 'steps': 2, 'sizes': [4, 5]}
        assert header['byte_order'] == 'little'
        assert header['supports'][0][1] is None
        assert len(header['distortions']) == 3


class TestProvenance:

    def test_hash_ignores_number_types(self):
        assert params_hash('gbm', {'x0': 100, 'r': 0.05}) == params_hash('gbm', {'r': 0.05, 'x0': 100.0})

    def test_hash_depends_on_the_model(self):
        assert params_hash('gbm', {'x0': 100.0}) != params_hash('gbm', {'x0': 101.0})
        assert params_hash('gbm', {'x0': 100.0}) != params_hash('heston', {'x0': 100.0})

    def test_expected_hash_mismatch(self, saved):
        other = params_hash('gbm2d', dict(GBM2D_PARAMS, rho=-0.5))
        with pytest.raises(ProvenanceError):
            load_grids(saved, expected_hash=other)

    def test_different_model(self, small_grids):
        other = build_model('gbm2d', dict(GBM2D_PARAMS, rho=-0.5))
        with pytest.raises(ProvenanceError):
            check_provenance(small_grids, other)

    def test_different_schedule(self, small_grids, gbm2d_model):
        with pytest.raises(ProvenanceError):
            check_provenance(small_grids, gbm2d_model, Schedule(1.0, 3, (4, 5)))

    def test_unknown_format_version(self, saved, monkeypatch):
        monkeypatch.setattr(grid_store, 'GRID_FORMAT_VERSION', 99)
        with pytest.raises(ProvenanceError, match="not supported"):
            load_grids(saved)

    def test_missing_header(self, tmp_path):
        path = tmp_path / 'bare.npz'
        np.savez(path, step0_joint_weights=np.ones((1, 1)))
        with pytest.raises(ProvenanceError):
            read_header(path)


class TestTextExport:

    def test_table_layout(self, small_grids, tmp_path):
        table = export_grids_text(small_grids, tmp_path / 'grid.csv')
        assert list(table.columns) == ['array', 'step', 'i', 'j', 'value']
        assert set(table['array']) == {'codeword', 'weight', 'joint_weight', 'transition'}
        joint = table[(table['array'] == 'joint_weight') & (table['step'] == 2)]
        assert len(joint) == 20
        assert joint['value'].sum() == pytest.approx(1.0, abs=1e-12)

    def test_values_are_lossless(self, small_grids, tmp_path):
        path = tmp_path / 'grid.csv'
        export_grids_text(small_grids, path)
        table = pd.read_csv(path, float_precision='round_trip')
        codewords = table[(table['array'] == 'codeword') & (table['step'] == 2) & (table['j'] == 1)]
        np.testing.assert_array_equal(codewords['value'].to_numpy(), small_grids[2].grids[0].codewords)

    def test_transitions_can_be_left_out(self, small_grids, tmp_path):
        table = export_grids_text(small_grids, tmp_path / 'grid.csv', transitions=False)
        assert 'transition' not in set(table['array'])
