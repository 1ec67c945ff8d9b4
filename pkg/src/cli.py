"""
Command-line front end

    python -m src.cli quantize   --config run.json [--out DIR] [--threads N]
    python -m src.cli price      --config run.json [--grid FILE]
    python -m src.cli compare-mc --config run.json [--seed N]
    python -m src.cli calibrate  --config run.json

Exit codes: 0 success, 2 configuration or data error, 3 grid provenance
mismatch, 4 numerical failure (a diagnostics.json is written to the output
directory).
"""

import argparse
import json
import logging
import re
import sys
import traceback
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from src.config import (
    CALIB_MAX_EVALS,
    CALIB_STEPS_PER_YEAR,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    MIN_CALIB_STEPS,
    MONEYNESS_BAND,
    TABLE_FLOAT_FORMAT,
    TABLE_SEPARATOR,
    TABLES_DIR,
)
from src.errors import ConfigError, PMQError
from src.models.oracles import McConfig, mc_price, option_functional
from src.models.sde_models import MODEL_CATALOG, Schedule, build_model
from src.pricing.pricing import OptionSpec, price_book, price_option
from src.quantization.grid_builder import SCHEMES, build_grids
from src.quantization.quantize_core import OptimizerConfig

logger = logging.getLogger(__name__)

TASKS = ('quantize', 'price', 'compare-mc', 'calibrate')

# Allowed keys per configuration block
TOP_LEVEL_KEYS = {'task', 'model', 'schedule', 'schemes', 'optimizer', 'options', 'mc',
                  'grid_file', 'calibration', 'output'}
MODEL_KEYS = {'name', 'params'}
SCHEDULE_KEYS = {'horizon', 'steps', 'sizes'}
OPTION_KEYS = {f.name for f in fields(OptionSpec)}
OPTIMIZER_KEYS = {f.name for f in fields(OptimizerConfig)}
MC_KEYS = {f.name for f in fields(McConfig)}
CALIBRATION_KEYS = {'quotes', 'spot', 'rate', 'init', 'fixed', 'bounds', 'budget',
                    'moneyness_band', 'sizes', 'schemes', 'steps_per_year', 'min_steps'}
OUTPUT_KEYS = {'dir', 'text_export'}

COMPARE_COLUMNS = ['id', 'kind', 'strike', 'barrier', 'pmq_price', 'mc_mean', 'mc_stderr', 'z_score']


@dataclass
class RunConfig:
    """Validated run configuration"""
    task: str
    model_name: Optional[str] = None
    model_params: dict = field(default_factory=dict)
    schedule: Optional[Schedule] = None
    schemes: Optional[tuple] = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    options: list = field(default_factory=list)
    mc: McConfig = field(default_factory=McConfig)
    grid_file: Optional[Path] = None
    calibration: dict = field(default_factory=dict)
    out_dir: Path = TABLES_DIR
    text_export: bool = False

    def build_model(self):
        return build_model(self.model_name, self.model_params)


# ---------------------------------------------------------------------------
# Configuration parsing
# ---------------------------------------------------------------------------

class _Locator:
    """Line numbers of keys in the raw JSON text"""

    def __init__(self, text):
        self.text = text

    def line(self, key, after=0):
        match = re.compile(r'"%s"\s*:' % re.escape(key)).search(self.text, after)
        if match is None:
            return None, after
        return self.text.count('\n', 0, match.start()) + 1, match.start()

    def error(self, key, message, after=0):
        line, _ = self.line(key, after)
        where = f"line {line}: " if line is not None else ""
        return ConfigError(f"{where}{message}")


def _check_keys(block, allowed, name, locator, after=0):
    if not isinstance(block, dict):
        raise locator.error(name, f"'{name}' must be an object", after)
    for key in block:
        if key not in allowed:
            raise locator.error(key, f"unknown key '{key}' in '{name}'", after)


def _parse_options(raw, locator, model_name, rate, after):
    if not isinstance(raw, list):
        raise locator.error('options', "'options' must be a list", after)
    specs = []
    for i, entry in enumerate(raw):
        _check_keys(entry, OPTION_KEYS, 'options', locator, after)
        entry = dict(entry)
        entry.setdefault('rate', rate)
        entry.setdefault('numeraire', 'forward' if model_name == 'sabr' else 'spot')
        barriers = entry.pop('barrier', None)
        ladder = barriers if isinstance(barriers, list) else [barriers]
        for j, barrier in enumerate(ladder):
            spec = dict(entry, barrier=barrier)
            if len(ladder) > 1:
                spec['name'] = f"{entry.get('name') or f'opt{i + 1}'}_b{j + 1}"
            if spec.get('steps') is not None:
                spec['steps'] = tuple(spec['steps'])
            try:
                specs.append(OptionSpec(**spec))
            except (TypeError, ValueError) as exc:
                raise locator.error('options', f"option {i + 1}: {exc}", after) from exc
    return specs


def parse_config(text, out_dir=None, grid_file=None):
    """
    Parse and validate a JSON run configuration

    Parameters:
    -----------
    text : str
        The JSON document
    out_dir : str or Path, optional
        Output directory overriding output.dir
    grid_file : str or Path, optional
        Grid file overriding grid_file

    Returns:
    --------
    RunConfig

    Raises:
    -------
    ConfigError
        Invalid JSON, unknown keys or invalid values; the message names the line
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.msg}") from exc
    locator = _Locator(text)
    _check_keys(raw, TOP_LEVEL_KEYS, 'config', locator)
    has_grid = 'grid_file' in raw or grid_file is not None

    task = raw.get('task')
    if task not in TASKS:
        raise locator.error('task', f"task must be one of {TASKS}, got {task!r}")
    config = RunConfig(task=task)

    if 'model' in raw:
        _, at = locator.line('model')
        _check_keys(raw['model'], MODEL_KEYS, 'model', locator, at)
        config.model_name = raw['model'].get('name')
        if config.model_name not in MODEL_CATALOG:
            raise locator.error('name', f"unknown model {config.model_name!r}", at)
        config.model_params = dict(raw['model'].get('params', {}))
    elif task != 'price' or not has_grid:
        raise ConfigError(f"'model' is required for task {task}")

    if 'schedule' in raw:
        _, at = locator.line('schedule')
        block = raw['schedule']
        _check_keys(block, SCHEDULE_KEYS, 'schedule', locator, at)
        horizon = block.get('horizon')
        if not isinstance(horizon, (int, float)) or not horizon > 0:
            raise locator.error('horizon', f"schedule.horizon must be positive, got {horizon!r}", at)
        steps = block.get('steps')
        if not isinstance(steps, int) or steps < 1:
            raise locator.error('steps', f"schedule.steps must be a positive integer, got {steps!r}", at)
        sizes = block.get('sizes')
        if not isinstance(sizes, list) or not sizes or any(not isinstance(n, int) or n < 1 for n in sizes):
            raise locator.error('sizes', f"schedule.sizes must list positive integers, got {sizes!r}", at)
        config.schedule = Schedule(float(horizon), steps, tuple(sizes))
    elif task in ('quantize', 'compare-mc') or (task == 'price' and not has_grid):
        raise ConfigError(f"'schedule' is required for task {task}")

    if 'schemes' in raw:
        schemes = raw['schemes']
        if not isinstance(schemes, list) or any(s not in SCHEMES for s in schemes):
            raise locator.error('schemes', f"schemes must be a list of {SCHEMES}, got {schemes!r}")
        config.schemes = tuple(schemes)

    if 'optimizer' in raw:
        _, at = locator.line('optimizer')
        _check_keys(raw['optimizer'], OPTIMIZER_KEYS, 'optimizer', locator, at)
        try:
            config.optimizer = OptimizerConfig(**raw['optimizer'])
        except (TypeError, ValueError) as exc:
            raise locator.error('optimizer', str(exc)) from exc

    if 'mc' in raw:
        _, at = locator.line('mc')
        _check_keys(raw['mc'], MC_KEYS, 'mc', locator, at)
        try:
            config.mc = McConfig(**raw['mc'])
        except (TypeError, ValueError) as exc:
            raise locator.error('mc', str(exc)) from exc

    if grid_file is not None:
        config.grid_file = Path(grid_file)
    elif 'grid_file' in raw:
        config.grid_file = Path(raw['grid_file'])

    if 'options' in raw:
        _, at = locator.line('options')
        rate = float(config.model_params.get('r', 0.0))
        config.options = _parse_options(raw['options'], locator, config.model_name, rate, at)

    if 'calibration' in raw:
        _, at = locator.line('calibration')
        block = raw['calibration']
        _check_keys(block, CALIBRATION_KEYS, 'calibration', locator, at)
        for key in ('quotes', 'spot', 'init'):
            if key not in block:
                raise locator.error('calibration', f"calibration.{key} is required")
        config.calibration = dict(block)
    elif task == 'calibrate':
        raise ConfigError("'calibration' is required for task calibrate")

    if 'output' in raw:
        _, at = locator.line('output')
        _check_keys(raw['output'], OUTPUT_KEYS, 'output', locator, at)
        if 'dir' in raw['output']:
            config.out_dir = Path(raw['output']['dir'])
        config.text_export = bool(raw['output'].get('text_export', False))
    if out_dir is not None:
        config.out_dir = Path(out_dir)
    return config


def load_config(file_path, out_dir=None, grid_file=None):
    file_path = Path(file_path)
    try:
        text = file_path.read_text(encoding='utf-8')
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file not found: {file_path}") from exc
    return parse_config(text, out_dir, grid_file)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _save_table(df, file_path):
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(file_path, sep=TABLE_SEPARATOR, index=False, float_format=TABLE_FLOAT_FORMAT)
    print(f"  → Saved: {file_path}")
    return file_path


def _grids_for(config, threads=1):
    """Grid sequence of a run: loaded from grid_file (provenance-checked) or built"""
    from src.data.grid_store import check_provenance, load_grids

    if config.grid_file is not None:
        grids = load_grids(config.grid_file)
        if config.model_name is not None:
            check_provenance(grids, config.build_model(), config.schedule, config.schemes)
        print(f"✓ Loaded {len(grids)} grid steps from: {config.grid_file}")
        return grids
    model = config.build_model()
    grids = build_grids(model, config.schedule, config.schemes, config.optimizer, threads)
    print(f"✓ Built {len(grids) - 1} steps for {model.name} (sizes {config.schedule.sizes})")
    return grids


def cmd_quantize(config, threads=1):
    """
    Build the grids of a configuration and write the grid file and summary table

    Returns:
    --------
    pd.DataFrame
        Per-step summary
    """
    from src.data.grid_store import export_grids_text, save_grids

    print("\n" + "="*60)
    print("QUANTIZE")
    print("="*60)
    model = config.build_model()
    grids = build_grids(model, config.schedule, config.schemes, config.optimizer, threads)
    summary = grids.summary()
    print(f"✓ Built {len(grids) - 1} steps for {model.name}")
    print(f"  Newton→Lloyd fallbacks: {grids.fallback_count}")
    print(f"  Max weight-sum residual: {summary['weight_sum_residual'].max():.3e}")

    save_grids(grids, config.out_dir / "grid.npz")
    _save_table(summary, config.out_dir / "grid_summary.csv")
    if config.text_export:
        export_grids_text(grids, config.out_dir / "grid.csv")
    return summary


def cmd_price(config, threads=1):
    """Price the option list on the configured grids; one row per instrument"""
    print("\n" + "="*60)
    print("PRICE")
    print("="*60)
    grids = _grids_for(config, threads)
    table = price_book(grids, config.options)
    print(f"✓ Priced {len(table)} instruments")
    _save_table(table, config.out_dir / "prices.csv")
    return table


def cmd_compare_mc(config, threads=1):
    """
    Price every option on the grids and by Monte Carlo

    Returns:
    --------
    pd.DataFrame
        Columns id, kind, strike, barrier, pmq_price, mc_mean, mc_stderr, z_score
        with z = (pmq - mc) / stderr
    """
    print("\n" + "="*60)
    print("COMPARE WITH MONTE CARLO")
    print("="*60)
    model = config.build_model()
    grids = _grids_for(config, threads)
    horizon = grids.schedule.horizon

    rows = []
    for i, spec in enumerate(config.options):
        pmq_value = price_option(grids, spec)
        try:
            functional = option_functional(spec, grids.dt, horizon)
        except ValueError as exc:
            logger.warning("No Monte Carlo benchmark for %s: %s", spec.kind, exc)
            estimate = None
        else:
            estimate = mc_price(model, functional, horizon, config.mc, threads)
        rows.append({
            'id': spec.name or f"opt{i + 1}",
            'kind': spec.kind,
            'strike': spec.strike,
            'barrier': spec.barrier if spec.barrier is not None else np.nan,
            'pmq_price': pmq_value,
            'mc_mean': estimate.mean if estimate else np.nan,
            'mc_stderr': estimate.stderr if estimate else np.nan,
            'z_score': estimate.z_score(pmq_value) if estimate else np.nan,
        })
    table = pd.DataFrame(rows, columns=COMPARE_COLUMNS)
    outside = int((table['z_score'].abs() > 3).sum())
    print(f"✓ Compared {len(table)} instruments ({config.mc.paths} paths, seed {config.mc.seed})")
    print(f"  Outside three standard errors: {outside}")
    _save_table(table, config.out_dir / "compare_mc.csv")
    return table


def cmd_calibrate(config, threads=1):
    """
    Calibrate the configured model to a quote file

    Returns:
    --------
    CalibResult
    """
    from src.data.load_quotes import load_quotes
    from src.data.preprocess import prepare_quotes
    from src.pricing.calibration import GridSettings, QuoteSet, calibrate

    print("\n" + "="*60)
    print("CALIBRATE")
    print("="*60)
    block = config.calibration
    spot = float(block['spot'])
    rate = float(block.get('rate', config.model_params.get('r', 0.0)))
    quotes = prepare_quotes(load_quotes(block['quotes']), spot, block.get('moneyness_band', MONEYNESS_BAND))
    try:
        quote_set = QuoteSet(quotes, spot, rate)
    except ValueError as exc:
        raise ConfigError(f"calibration.quotes: {exc}") from exc

    sizes = tuple(block.get('sizes') or (config.schedule.sizes if config.schedule else (20, 10)))
    schemes = tuple(block.get('schemes') or config.schemes or ()) or None
    settings = GridSettings(
        sizes=sizes,
        schemes=schemes,
        optimizer=config.optimizer,
        steps_per_year=int(block.get('steps_per_year', CALIB_STEPS_PER_YEAR)),
        min_steps=int(block.get('min_steps', MIN_CALIB_STEPS)),
        threads=threads,
    )
    bounds = {k: (-np.inf if lo is None else lo, np.inf if hi is None else hi)
              for k, (lo, hi) in block.get('bounds', {}).items()}
    base = {k: v for k, v in config.model_params.items() if k != 'r'}
    try:
        result = calibrate(config.model_name, quote_set, block['init'], settings, bounds,
                           int(block.get('budget', CALIB_MAX_EVALS)), block.get('fixed'), base)
    except ValueError as exc:
        if isinstance(exc, PMQError):
            raise
        raise ConfigError(f"calibration: {exc}") from exc

    print(f"✓ Calibration finished after {result.evaluations} evaluations")
    print(f"  RSVE: {result.objective:.6e}")
    for name, value in result.params.items():
        print(f"  {name:>6} = {value:.8f}")
    if result.budget_exhausted:
        print("  ! Evaluation budget exhausted; best parameters so far reported")

    report = pd.DataFrame({
        'parameter': list(result.params) + ['rsve', 'evaluations', 'converged',
                                            'budget_exhausted', 'fallbacks'],
        'value': list(result.params.values()) + [result.objective, result.evaluations,
                                                 int(result.converged), int(result.budget_exhausted),
                                                 result.fallback_count],
    })
    _save_table(report, config.out_dir / "calibration_report.csv")
    _save_table(result.residuals, config.out_dir / "calibration_residuals.csv")
    _save_table(result.trace, config.out_dir / "calibration_trace.csv")
    return result


COMMANDS = {
    'quantize': cmd_quantize,
    'price': cmd_price,
    'compare-mc': cmd_compare_mc,
    'calibrate': cmd_calibrate,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog='pmq',
        description="Quantization grids for SDE systems, option pricing and calibration",
    )
    sub = parser.add_subparsers(dest='command', required=True)
    for name in TASKS:
        p = sub.add_parser(name, help=f"run the {name} task")
        p.add_argument('--config', required=True, help="JSON run configuration")
        p.add_argument('--out', default=None, help="output directory (overrides output.dir)")
        p.add_argument('--seed', type=int, default=None, help="Monte Carlo seed (overrides mc.seed)")
        p.add_argument('--threads', type=int, default=1, help="worker threads")
        p.add_argument('--verbose', action='store_true', help="debug logging")
        if name == 'price':
            p.add_argument('--grid', default=None, help="grid file to price on (overrides grid_file)")
    return parser


def _write_diagnostics(out_dir, command, exc):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "diagnostics.json"
    payload = {
        'command': command,
        'error': type(exc).__name__,
        'message': str(exc),
        'traceback': traceback.format_exception(type(exc), exc, exc.__traceback__),
    }
    path.write_text(json.dumps(payload, indent=2), encoding='utf-8')
    print(f"  → Diagnostics: {path}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    out_dir = Path(args.out) if args.out else TABLES_DIR
    try:
        config = load_config(args.config, args.out, getattr(args, 'grid', None))
        out_dir = config.out_dir
        if config.task != args.command:
            raise ConfigError(f"config task {config.task!r} does not match command {args.command!r}")
        if args.seed is not None:
            config.mc = replace(config.mc, seed=args.seed)
        COMMANDS[args.command](config, threads=max(1, args.threads))
    except PMQError as exc:
        print(f"✗ Error: {exc}")
        if exc.exit_code == EXIT_NUMERICAL:
            _write_diagnostics(out_dir, args.command, exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"✗ Error: {exc}")
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"✗ Numerical failure: {exc}")
        _write_diagnostics(out_dir, args.command, exc)
        return EXIT_NUMERICAL

    print("\n✓ Done")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
