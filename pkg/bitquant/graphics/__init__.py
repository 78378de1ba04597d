"""
Chart rendering for bitquant.
"""

from bitquant.graphics.histogram_chart import highlight_indices, render_histogram

__all__ = ["highlight_indices", "render_histogram"]
