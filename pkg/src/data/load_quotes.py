"""
Load option quotes from a delimited text file
"""

import logging
import sys
from pathlib import Path

import pandas as pd

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import TABLE_SEPARATOR
from src.errors import QuoteFormatError

logger = logging.getLogger(__name__)

QUOTE_COLUMNS = ['maturity_years', 'strike', 'kind', 'market_implied_vol', 'volume']
QUOTE_KINDS = ('call', 'put', 'american-call', 'american-put')
NUMERIC_COLUMNS = ['maturity_years', 'strike', 'market_implied_vol', 'volume']


def _check_row(line, row):
    for column in NUMERIC_COLUMNS:
        value = pd.to_numeric(row[column], errors='coerce')
        if pd.isna(value):
            raise QuoteFormatError(f"Line {line}: {column}={row[column]!r} is not a number")
        if column == 'volume':
            if value < 0:
                raise QuoteFormatError(f"Line {line}: negative volume {value}")
        elif not value > 0:
            raise QuoteFormatError(f"Line {line}: {column} must be positive, got {value}")
    kind = str(row['kind']).strip().lower()
    if kind not in QUOTE_KINDS:
        raise QuoteFormatError(f"Line {line}: unknown quote kind {row['kind']!r}")


def load_quotes(file_path, verbose=True):
    """
    Load a quote file

    The file has a header line followed by rows of
    maturity_years,strike,kind,market_implied_vol,volume.

    Parameters:
    -----------
    file_path : str or Path
        Path to the quote file
    verbose : bool
        Print the loading summary

    Returns:
    --------
    pd.DataFrame
        One row per quote with the columns of QUOTE_COLUMNS

    Raises:
    -------
    QuoteFormatError
        Missing columns or a malformed row; the message names the file line
    """
    file_path = Path(file_path)
    try:
        raw = pd.read_csv(file_path, sep=TABLE_SEPARATOR, dtype=str, skipinitialspace=True,
                          keep_default_na=False)
    except FileNotFoundError:
        print(f"✗ Error: Quote file not found at {file_path}")
        raise
    except pd.errors.ParserError as exc:
        raise QuoteFormatError(f"{file_path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise QuoteFormatError(f"{file_path}: empty quote file") from exc

    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in QUOTE_COLUMNS if c not in raw.columns]
    if missing:
        raise QuoteFormatError(f"{file_path}: header is missing columns {missing}")
    extra = [c for c in raw.columns if c not in QUOTE_COLUMNS]
    if extra:
        raise QuoteFormatError(f"{file_path}: unexpected columns {extra}")

    for i, row in raw.iterrows():
        # Line 1 is the header
        _check_row(i + 2, row)

    df = raw[QUOTE_COLUMNS].copy()
    for column in NUMERIC_COLUMNS:
        df[column] = pd.to_numeric(df[column])
    df['kind'] = df['kind'].str.strip().str.lower()

    if verbose:
        print(f"✓ Successfully loaded quotes from: {file_path}")
        print(f"  Quotes: {len(df)}")
        print(f"  Maturities: {sorted(df['maturity_years'].unique().tolist())}")
    logger.debug("Loaded %d quotes from %s", len(df), file_path)
    return df


def save_quotes(df, file_path):
    """Write a quote table in the format read by load_quotes"""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    df[QUOTE_COLUMNS].to_csv(file_path, sep=TABLE_SEPARATOR, index=False, float_format='%.17g')
    print(f"  → Saved: {file_path}")
    return file_path


def get_quote_summary(df):
    """
    Print a summary of a quote table

    Parameters:
    -----------
    df : pd.DataFrame
        Quote table
    """
    print("\n" + "="*60)
    print("QUOTE SUMMARY")
    print("="*60)
    print(f"\nQuotes: {len(df)}")
    print(f"\nBy kind:")
    print(df['kind'].value_counts())
    print(f"\nBy maturity:")
    print(df.groupby('maturity_years')['strike'].agg(['count', 'min', 'max']))
    print(f"\nImplied volatility:")
    print(df['market_implied_vol'].describe())
    print("="*60)


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("Usage: python -m src.data.load_quotes QUOTE_FILE")
        sys.exit(2)
    df = load_quotes(sys.argv[1])
    get_quote_summary(df)
