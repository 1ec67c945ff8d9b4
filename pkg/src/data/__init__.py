"""
Quote ingestion, quote filters and grid file storage
"""
