"""
Index-frequency bar chart rendering.

Draws one bar per pattern index of an :class:`IndexHistogram` and highlights
the all-zero, all-one and all-minus-one patterns. Rendering is super-sampled
and downscaled with Lanczos filtering.
"""

import logging
from pathlib import Path

from PIL import Image, ImageDraw

from bitquant.codec.index_codec import IndexHistogram, pattern_table

logger = logging.getLogger(__name__)

BACKGROUND = (250, 250, 252)
AXIS_COLOR = (60, 60, 70)
BAR_COLOR = (120, 140, 170)
HIGHLIGHT_COLOR = (220, 90, 50)


def highlight_indices(block_size: int) -> list[int]:
    """Indices of the all-zero, all-one and all-minus-one blocks."""
    table = pattern_table(block_size)
    return [table.index_of([value] * block_size) for value in (0, 1, -1)]


def render_histogram(
    hist: IndexHistogram,
    size: tuple[int, int] = (1215, 480),
    output_path: Path | None = None,
    *,
    highlight: list[int] | None = None,
) -> Image.Image:
    """
    Render the index histogram as a bar chart.

    Args:
        hist: Index counts (243 entries for block size 5)
        size: Output image dimensions (width, height)
        output_path: Optional path to save PNG
        highlight: Indices drawn in the highlight color; defaults to the
            uniform-block indices for the histogram's table size

    Returns:
        RGB PIL Image
    """
    n = int(hist.counts.size)
    if highlight is None:
        sizes = [k for k in range(1, 6) if 3**k == n]
        highlight = highlight_indices(sizes[0]) if sizes else []

    # 4x super-sampling
    scale = 4
    w, h = size[0] * scale, size[1] * scale
    img = Image.new("RGB", (w, h), BACKGROUND)
    draw = ImageDraw.Draw(img)

    margin = 12 * scale
    base_y = h - margin
    top_y = margin
    plot_w = w - 2 * margin
    bar_w = plot_w / max(n, 1)
    peak = int(hist.counts.max()) if n and hist.total else 0

    for i, count in enumerate(hist.counts):
        if count <= 0 or peak == 0:
            continue
        bar_h = (base_y - top_y) * int(count) / peak
        x0 = margin + i * bar_w
        color = HIGHLIGHT_COLOR if i in highlight else BAR_COLOR
        draw.rectangle([x0, base_y - bar_h, x0 + max(bar_w - scale, scale), base_y], fill=color)

    draw.line([(margin, base_y), (w - margin, base_y)], fill=AXIS_COLOR, width=scale)
    draw.line([(margin, top_y), (margin, base_y)], fill=AXIS_COLOR, width=scale)

    img = img.resize(size, Image.Resampling.LANCZOS)
    if output_path:
        img.save(output_path)
        logger.info("wrote %d-bar histogram chart to %s", n, output_path)
    return img
