"""
Option pricing on quantization grids and RSVE calibration
"""
