"""
Setup shim for bitquant.

Poetry is the supported build tool:
    poetry install

Plain pip installs also work through this file:
    pip install .
"""

from setuptools import setup

# pyproject.toml holds the package metadata and the bitquant console script.
setup()
