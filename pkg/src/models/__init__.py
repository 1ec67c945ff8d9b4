"""
SDE models and independent pricing oracles
"""
