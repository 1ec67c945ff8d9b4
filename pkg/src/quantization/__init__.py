"""
One-dimensional optimal quantization, mixture laws and product grid construction
"""
