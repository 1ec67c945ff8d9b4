"""
Quote filtering and maturity-to-step mapping
"""

import logging
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import MONEYNESS_BAND

logger = logging.getLogger(__name__)


def drop_zero_volume(df):
    """
    Keep only quotes that traded

    Parameters:
    -----------
    df : pd.DataFrame
        Quote table with a 'volume' column

    Returns:
    --------
    pd.DataFrame
        Quotes with non-zero volume
    """
    kept = df[df['volume'] > 0].copy()
    dropped = len(df) - len(kept)
    if dropped:
        print(f"Dropping {dropped} quotes with zero volume")
    else:
        print("✓ No zero-volume quotes found")
    return kept


def filter_moneyness(df, spot, band=MONEYNESS_BAND):
    """
    Keep quotes with |strike / spot - 1| <= band

    Parameters:
    -----------
    df : pd.DataFrame
        Quote table with a 'strike' column
    spot : float
        Current asset price
    band : float
        Half-width of the moneyness window; None keeps everything

    Returns:
    --------
    pd.DataFrame
    """
    if band is None:
        return df.copy()
    if not band > 0:
        raise ValueError(f"Moneyness band must be positive, got {band}")
    moneyness = df['strike'] / spot - 1.0
    kept = df[np.abs(moneyness) <= band + 1e-12].copy()
    print(f"✓ Moneyness filter ±{band:.0%}: kept {len(kept)} of {len(df)} quotes")
    return kept


def maturity_steps(maturities, dt, last_step):
    """
    Grid step on which each maturity is priced: round(T / dt) clipped to 1..last_step

    Parameters:
    -----------
    maturities : array-like
        Maturities in years
    dt : float
        Grid step size
    last_step : int
        Index of the final grid step

    Returns:
    --------
    np.ndarray of int
    """
    steps = np.rint(np.asarray(maturities, dtype=float) / dt).astype(int)
    return np.clip(steps, 1, last_step)


def prepare_quotes(df, spot, band=MONEYNESS_BAND):
    """
    Full quote preparation pipeline

    Parameters:
    -----------
    df : pd.DataFrame
        Quote table as returned by load_quotes
    spot : float
        Current asset price
    band : float, optional
        Moneyness window

    Returns:
    --------
    pd.DataFrame
        Filtered quotes sorted by maturity and strike
    """
    print("\n" + "="*60)
    print("PREPARING QUOTES")
    print("="*60)

    prepared = drop_zero_volume(df)
    prepared = filter_moneyness(prepared, spot, band)
    prepared = prepared.sort_values(['maturity_years', 'strike']).reset_index(drop=True)
    if prepared.empty:
        logger.warning("Every quote was filtered out")

    print(f"\n✓ Quote preparation complete. Final shape: {prepared.shape}")
    print("="*60)
    return prepared
