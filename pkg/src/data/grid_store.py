"""
Grid file storage: save, load and text export of a GridSequence

The binary container is a ZIP archive of little-endian .npy arrays readable
by numpy.load:

    header                      uint8   UTF-8 JSON (format, versions, model, hash, schedule)
    step{k}_dim{n}_codewords    <f8     (N^n,)
    step{k}_dim{n}_weights      <f8     (N^n,)    marginal weights
    step{k}_joint_weights       <f8     (N^1, ..., N^d)
    step{k}_transition          <f8     (prev size, size), absent for step 0

Entries are stored uncompressed with a fixed timestamp, so rebuilding the
same configuration reproduces the file byte for byte.
"""

import hashlib
import io
import json
import logging
import sys
import zipfile
from pathlib import Path

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import GRID_BYTE_ORDER, GRID_FLOAT_DTYPE, GRID_FORMAT_VERSION
from src.errors import ProvenanceError
from src.models.sde_models import Schedule, build_model
from src.quantization.grid_builder import GridSequence, ProductGridStep
from src.quantization.quantize_core import Grid1D

logger = logging.getLogger(__name__)

ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
LOSSLESS_FORMAT = '%.17g'


def _canonical(value):
    """Plain JSON value: arrays become (nested) lists of floats"""
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    if isinstance(value, np.ndarray):
        return _canonical(value.tolist())
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, float, np.integer, np.floating)):
        return float(value)
    return value


def params_hash(model_name, params):
    """SHA-256 of the canonical JSON of a model name and its parameters"""
    payload = json.dumps({'model': model_name, 'params': _canonical(params)},
                         sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def build_header(grids):
    """Header dict describing where a grid sequence came from"""
    from src import __version__

    model = grids.model
    schedule = grids.schedule
    return {
        'format_version': GRID_FORMAT_VERSION,
        'library_version': __version__,
        'model': {'name': model.name, 'params': _canonical(model.params)},
        'params_hash': params_hash(model.name, model.params),
        'schedule': {
            'horizon': float(schedule.horizon),
            'steps': int(schedule.steps),
            'sizes': [int(n) for n in schedule.sizes],
        },
        'schemes': list(grids.schemes),
        'dim': int(model.dim),
        'byte_order': 'little' if GRID_BYTE_ORDER == '<' else 'big',
        'dtype': GRID_FLOAT_DTYPE,
        'supports': [[float(lo), None if np.isinf(hi) else float(hi)]
                     for lo, hi in (g.support for g in grids[0].grids)],
        'distortions': [[float(v) for v in step.distortions] for step in grids],
    }


def _grid_arrays(grids):
    for step in grids:
        k = step.index
        for n, grid in enumerate(step.grids):
            yield f"step{k}_dim{n + 1}_codewords", grid.codewords
            yield f"step{k}_dim{n + 1}_weights", step.marginal_weights(n).ravel()
        yield f"step{k}_joint_weights", step.weights
        if step.transition is not None:
            yield f"step{k}_transition", step.transition


def _probabilities(w):
    """Stored marginal weights are sums of joint weights; rescale them onto the simplex"""
    w = np.clip(np.asarray(w, dtype=float), 0.0, None)
    return w / w.sum()


def _write_entry(archive, name, array):
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
    info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    archive.writestr(info, buffer.getvalue())


def save_grids(grids, file_path):
    """
    Save a grid sequence to the binary container

    Parameters:
    -----------
    grids : GridSequence
    file_path : str or Path

    Returns:
    --------
    Path
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(build_header(grids), sort_keys=True, indent=1).encode('utf-8')

    with zipfile.ZipFile(file_path, 'w') as archive:
        _write_entry(archive, 'header', np.frombuffer(header, dtype=np.uint8))
        for name, array in _grid_arrays(grids):
            _write_entry(archive, name, np.asarray(array, dtype=GRID_FLOAT_DTYPE))

    print(f"  → Saved: {file_path}")
    return file_path


def read_header(file_path):
    """Header dict of a grid file"""
    with np.load(file_path, allow_pickle=False) as archive:
        return _decode_header(archive)


def _decode_header(archive):
    if 'header' not in archive.files:
        raise ProvenanceError("Grid file has no header")
    header = json.loads(archive['header'].tobytes().decode('utf-8'))
    if header.get('format_version') != GRID_FORMAT_VERSION:
        raise ProvenanceError(
            f"Grid file format {header.get('format_version')} is not supported "
            f"(expected {GRID_FORMAT_VERSION})"
        )
    model = header['model']
    if params_hash(model['name'], model['params']) != header['params_hash']:
        raise ProvenanceError("Grid file header hash does not match its model parameters")
    return header


def load_grids(file_path, expected_hash=None):
    """
    Load a grid sequence saved by save_grids

    Parameters:
    -----------
    file_path : str or Path
    expected_hash : str, optional
        params_hash the grids must have been built with

    Returns:
    --------
    GridSequence
        Steps carry codewords, weights, transitions and distortions; the
        optimizer diagnostics and pre-quantization laws are not stored

    Raises:
    -------
    ProvenanceError
        Unknown format, corrupted header or a model hash other than expected_hash
    """
    file_path = Path(file_path)
    with np.load(file_path, allow_pickle=False) as archive:
        header = _decode_header(archive)
        if expected_hash is not None and header['params_hash'] != expected_hash:
            raise ProvenanceError(
                f"{file_path} was built for a different model "
                f"(hash {header['params_hash'][:12]}, expected {expected_hash[:12]})"
            )
        model = build_model(header['model']['name'], header['model']['params'])
        sched = header['schedule']
        schedule = Schedule(sched['horizon'], sched['steps'], tuple(sched['sizes']))
        supports = [(lo, np.inf if hi is None else hi) for lo, hi in header['supports']]

        steps = []
        for k in range(schedule.steps + 1):
            grids = tuple(
                Grid1D(archive[f"step{k}_dim{n + 1}_codewords"],
                       _probabilities(archive[f"step{k}_dim{n + 1}_weights"]),
                       supports[n])
                for n in range(header['dim'])
            )
            transition = archive[f"step{k}_transition"] if k > 0 else None
            steps.append(ProductGridStep(
                k, grids, archive[f"step{k}_joint_weights"], transition,
                distortions=tuple(header['distortions'][k]),
            ))

    logger.debug("Loaded %d grid steps from %s", len(steps), file_path)
    return GridSequence(model, schedule, tuple(header['schemes']), steps)


def check_provenance(grids, model, schedule=None, schemes=None):
    """Raise ProvenanceError unless grids were built for this model (and schedule/schemes)"""
    expected = params_hash(model.name, model.params)
    actual = params_hash(grids.model.name, grids.model.params)
    if expected != actual:
        raise ProvenanceError(
            f"Grid model hash {actual[:12]} does not match the configured model {expected[:12]}"
        )
    if schedule is not None and schedule != grids.schedule:
        raise ProvenanceError(f"Grid schedule {grids.schedule} differs from {schedule}")
    if schemes is not None and tuple(schemes) != tuple(grids.schemes):
        raise ProvenanceError(f"Grid schemes {grids.schemes} differ from {tuple(schemes)}")


def export_grids_text(grids, file_path, transitions=True):
    """
    Lossless text export for diffing

    One row per stored number: (array, step, i, j, value) with 17 significant
    digits. Codeword and weight rows use j = dimension; transition rows use
    (i, j) = (previous joint index, joint index) and list non-zero entries only.

    Returns:
    --------
    pd.DataFrame
        The exported table
    """
    frames = []
    for step in grids:
        k = step.index
        for n, grid in enumerate(step.grids):
            idx = np.arange(grid.size)
            frames.append(pd.DataFrame({'array': 'codeword', 'step': k, 'i': idx,
                                        'j': n + 1, 'value': grid.codewords}))
            frames.append(pd.DataFrame({'array': 'weight', 'step': k, 'i': idx,
                                        'j': n + 1, 'value': step.marginal_weights(n).ravel()}))
        frames.append(pd.DataFrame({'array': 'joint_weight', 'step': k, 'i': np.arange(step.size),
                                    'j': 0, 'value': step.flat_weights}))
        if transitions and step.transition is not None:
            rows, cols = np.nonzero(step.transition)
            frames.append(pd.DataFrame({'array': 'transition', 'step': k, 'i': rows,
                                        'j': cols, 'value': step.transition[rows, cols]}))

    table = pd.concat(frames, ignore_index=True)
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(file_path, index=False, float_format=LOSSLESS_FORMAT)
    print(f"  → Saved: {file_path}")
    return table


if __name__ == "__main__":
    from src.config import DEFAULT_GRID_FILE, GBM2D_SCHEDULE, ensure_directories
    from src.models.sde_models import builtin_models
    from src.quantization.grid_builder import pmq

    ensure_directories()
    model = builtin_models()['gbm2d']
    grids = pmq(model, Schedule(*GBM2D_SCHEDULE))
    save_grids(grids, DEFAULT_GRID_FILE)
    loaded = load_grids(DEFAULT_GRID_FILE, params_hash(model.name, model.params))
    print(f"✓ Reloaded {len(loaded)} steps, header hash {read_header(DEFAULT_GRID_FILE)['params_hash'][:12]}")
