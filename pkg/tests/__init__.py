"""
Test suite for bitquant.

This package contains unit and integration tests for all modules.
"""
