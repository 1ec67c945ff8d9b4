"""
Tests for configuration parsing and the command-line tasks
"""

import json

import pandas as pd
import pytest

from src.cli import main, parse_config
from src.config import EXIT_CONFIG, EXIT_OK, EXIT_PROVENANCE
from src.errors import ConfigError

GBM_MODEL = {'name': 'gbm', 'params': {'x0': 100.0, 'r': 0.05, 'sigma': 0.2}}
SMALL_SCHEDULE = {'horizon': 1.0, 'steps': 4, 'sizes': [8]}


def write_config(tmp_path, config, name='run.json'):
    path = tmp_path / name
    path.write_text(json.dumps(config, indent=2))
    return path


def run(command, config_path, out_dir, *extra):
    return main([command, '--config', str(config_path), '--out', str(out_dir), *extra])


class TestParseConfig:

    def test_unknown_key_names_its_line(self):
        text = '{\n  "task": "quantize",\n  "modle": {}\n}'
        with pytest.raises(ConfigError, match="line 3: unknown key 'modle'"):
            parse_config(text)

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config('{"task": "quantize",\n "model": }')

    def test_zero_horizon_is_rejected(self):
        config = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': dict(SMALL_SCHEDULE, horizon=0)}
        with pytest.raises(ConfigError, match="horizon"):
            parse_config(json.dumps(config, indent=1))

    def test_non_integer_steps(self):
        config = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': dict(SMALL_SCHEDULE, steps=2.5)}
        with pytest.raises(ConfigError, match="steps"):
            parse_config(json.dumps(config))

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            parse_config(json.dumps({'task': 'simulate', 'model': GBM_MODEL}))

    def test_unknown_model(self):
        config = {'task': 'quantize', 'model': {'name': 'cir', 'params': {}}, 'schedule': SMALL_SCHEDULE}
        with pytest.raises(ConfigError, match="unknown model"):
            parse_config(json.dumps(config))

    def test_model_is_required(self):
        with pytest.raises(ConfigError, match="'model' is required"):
            parse_config(json.dumps({'task': 'quantize', 'schedule': SMALL_SCHEDULE}))

    def test_calibration_block_is_required(self):
        with pytest.raises(ConfigError):
            parse_config(json.dumps({'task': 'calibrate', 'model': GBM_MODEL}))

    def test_option_defaults(self):
        config = {'task': 'price', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
                  'options': [{'kind': 'european-put', 'strike': 100.0}]}
        spec = parse_config(json.dumps(config)).options[0]
        assert spec.rate == 0.05
        assert spec.numeraire == 'spot'

    def test_barrier_list_expands_to_a_ladder(self):
        config = {'task': 'price', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
                  'options': [{'kind': 'up-and-out-call', 'strike': 100.0, 'barrier': [110, 120, 130]}]}
        specs = parse_config(json.dumps(config)).options
        assert [s.barrier for s in specs] == [110, 120, 130]
        assert [s.name for s in specs] == ['opt1_b1', 'opt1_b2', 'opt1_b3']

    def test_invalid_option(self):
        config = {'task': 'price', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
                  'options': [{'kind': 'european-put', 'strike': -1.0}]}
        with pytest.raises(ConfigError, match="option 1"):
            parse_config(json.dumps(config))

    def test_optimizer_block(self):
        config = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
                  'optimizer': {'strategy': 'lloyd', 'lloyd_max_iters': 50}}
        assert parse_config(json.dumps(config)).optimizer.strategy == 'lloyd'

    def test_out_dir_override(self, tmp_path):
        config = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
                  'output': {'dir': 'elsewhere'}}
        assert parse_config(json.dumps(config), tmp_path).out_dir == tmp_path


class TestCommands:

    def test_quantize(self, tmp_path):
        config = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
                  'output': {'text_export': True}}
        assert run('quantize', write_config(tmp_path, config), tmp_path) == EXIT_OK
        assert (tmp_path / 'grid.npz').exists()
        assert (tmp_path / 'grid.csv').exists()
        summary = pd.read_csv(tmp_path / 'grid_summary.csv')
        assert len(summary) == 5

    def test_price_with_an_empty_book(self, tmp_path):
        config = {'task': 'price', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE, 'options': []}
        assert run('price', write_config(tmp_path, config), tmp_path) == EXIT_OK
        assert (tmp_path / 'prices.csv').read_text().strip() == 'id,kind,strike,barrier,maturity,price'

    def test_price_on_a_saved_grid(self, tmp_path):
        quantize = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE}
        assert run('quantize', write_config(tmp_path, quantize, 'q.json'), tmp_path) == EXIT_OK
        price = {'task': 'price', 'model': GBM_MODEL,
                 'options': [{'kind': 'european-call', 'strike': 100.0}]}
        code = run('price', write_config(tmp_path, price, 'p.json'), tmp_path, '--grid', str(tmp_path / 'grid.npz'))
        assert code == EXIT_OK
        table = pd.read_csv(tmp_path / 'prices.csv')
        assert table.loc[0, 'price'] > 0.0

    def test_grid_built_for_another_model(self, tmp_path):
        quantize = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE}
        assert run('quantize', write_config(tmp_path, quantize, 'q.json'), tmp_path) == EXIT_OK
        other = {'name': 'gbm', 'params': {'x0': 100.0, 'r': 0.05, 'sigma': 0.3}}
        price = {'task': 'price', 'model': other, 'grid_file': str(tmp_path / 'grid.npz'),
                 'options': [{'kind': 'european-call', 'strike': 100.0}]}
        assert run('price', write_config(tmp_path, price, 'p.json'), tmp_path) == EXIT_PROVENANCE

    def test_compare_mc(self, tmp_path):
        config = {
            'task': 'compare-mc', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE,
            'options': [{'kind': 'european-put', 'strike': 100.0},
                        {'kind': 'bermudan-put', 'strike': 100.0}],
            'mc': {'paths': 2000, 'steps_per_year': 4, 'block_paths': 500},
        }
        assert run('compare-mc', write_config(tmp_path, config), tmp_path, '--seed', '3') == EXIT_OK
        table = pd.read_csv(tmp_path / 'compare_mc.csv')
        assert list(table.columns) == ['id', 'kind', 'strike', 'barrier', 'pmq_price',
                                       'mc_mean', 'mc_stderr', 'z_score']
        assert table.loc[0, 'mc_stderr'] > 0.0
        assert pd.isna(table.loc[1, 'mc_mean'])

    def test_calibrate(self, tmp_path):
        quotes = tmp_path / 'quotes.csv'
        quotes.write_text(
            "maturity_years,strike,kind,market_implied_vol,volume\n"
            "0.5,95,put,0.2,10\n0.5,105,call,0.2,10\n1.0,100,put,0.2,10\n"
        )
        config = {
            'task': 'calibrate', 'model': GBM_MODEL,
            'calibration': {'quotes': str(quotes), 'spot': 100.0, 'rate': 0.05, 'init': {'sigma': 0.25},
                            'budget': 4, 'sizes': [8], 'steps_per_year': 4, 'min_steps': 2},
        }
        assert run('calibrate', write_config(tmp_path, config), tmp_path) == EXIT_OK
        for name in ('calibration_report.csv', 'calibration_residuals.csv', 'calibration_trace.csv'):
            assert (tmp_path / name).exists()
        trace = pd.read_csv(tmp_path / 'calibration_trace.csv')
        assert len(trace) <= 4

    def test_malformed_quote_file(self, tmp_path):
        quotes = tmp_path / 'quotes.csv'
        quotes.write_text("maturity_years,strike,kind,market_implied_vol,volume\n0.5,abc,put,0.2,10\n")
        config = {'task': 'calibrate', 'model': GBM_MODEL,
                  'calibration': {'quotes': str(quotes), 'spot': 100.0, 'init': {'sigma': 0.25}}}
        assert run('calibrate', write_config(tmp_path, config), tmp_path) == EXIT_CONFIG

    def test_task_and_command_must_match(self, tmp_path):
        config = {'task': 'quantize', 'model': GBM_MODEL, 'schedule': SMALL_SCHEDULE}
        assert run('price', write_config(tmp_path, config), tmp_path) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert run('quantize', tmp_path / 'absent.json', tmp_path) == EXIT_CONFIG

    def test_invalid_model_parameters(self, tmp_path):
        model = {'name': 'gbm', 'params': {'x0': -1.0, 'r': 0.05, 'sigma': 0.2}}
        config = {'task': 'quantize', 'model': model, 'schedule': SMALL_SCHEDULE}
        assert run('quantize', write_config(tmp_path, config), tmp_path) == EXIT_CONFIG
