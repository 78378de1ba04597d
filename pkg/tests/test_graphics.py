"""
Tests for the index histogram chart.
"""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bitquant.codec import encode, histogram
from bitquant.graphics import highlight_indices, render_histogram
from bitquant.graphics.histogram_chart import BACKGROUND, BAR_COLOR, HIGHLIGHT_COLOR
from bitquant.quant import quantize_ternary


def close_to(pixel: tuple[int, ...], color: tuple[int, int, int], tol: int = 6) -> bool:
    return all(abs(int(p) - c) <= tol for p, c in zip(pixel, color))


class TestHighlight:
    """Test the uniform-block indices."""

    def test_block_size_five(self) -> None:
        """Test the all-zero, all-one and all-minus-one indices for blocks of five."""
        assert highlight_indices(5) == [0, 121, 242]

    def test_block_size_one(self) -> None:
        """Test single-weight blocks."""
        assert sorted(highlight_indices(1)) == [0, 1, 2]


class TestRenderHistogram:
    """Test bar chart rendering."""

    def test_default_size(self, rng: np.random.Generator) -> None:
        """Test the default canvas for a 243-entry histogram."""
        t = quantize_ternary(rng.standard_normal((16, 40)))
        img = render_histogram(histogram(encode(t)))
        assert img.size == (1215, 480)
        assert img.mode == "RGB"

    def test_bar_colors(self) -> None:
        """Test highlighted, plain and empty bar positions."""
        hist = histogram([0, 0, 2, 2, 2], block_size=2)
        img = render_histogram(hist, size=(360, 120), highlight=[0])
        assert close_to(img.getpixel((30, 90)), HIGHLIGHT_COLOR)
        assert close_to(img.getpixel((105, 60)), BAR_COLOR)
        assert close_to(img.getpixel((216, 60)), BACKGROUND)

    def test_empty_histogram(self) -> None:
        """Test that a histogram without counts renders only the axes."""
        img = render_histogram(histogram([], block_size=1), size=(90, 60))
        assert close_to(img.getpixel((45, 30)), BACKGROUND)

    def test_save_png(self, tmp_path: Path) -> None:
        """Test writing the chart to disk."""
        path = tmp_path / "hist.png"
        render_histogram(histogram([121, 121, 0]), size=(243, 100), output_path=path)
        with Image.open(path) as saved:
            assert saved.size == (243, 100)
            assert saved.format == "PNG"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
