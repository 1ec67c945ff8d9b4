"""
Product Markovian Quantization
Optimal quantization grids for SDE systems, option pricing on the grids and
model calibration to implied-volatility quotes
"""

__version__ = "1.0.0"
