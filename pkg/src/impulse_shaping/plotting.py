"""Static SVG line charts drawn from the CSV outputs.

matplotlib is imported lazily so the numerical pipeline never depends on it.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

logger = logging.getLogger(__name__)


def read_csv(path):
    """Column dict from a CSV written by the CLI (comment lines skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    return {h: [float(r[i]) for r in body] for i, h in enumerate(header)}


def line_chart(csv_path, out_path, x, ys, xlabel="t [s]", ylabel="", title=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for y in ys:
        ax.plot(data[x], data[y], label=y, lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return Path(out_path)


def emit(charts):
    """Draw each ``(csv, svg, x, ys, kwargs)`` chart; failures are logged, never raised."""
    written = []
    for csv_path, svg_path, x, ys, kw in charts:
        try:
            written.append(line_chart(csv_path, svg_path, x, ys, **kw))
        except Exception as exc:  # plotting is best effort
            logger.warning("could not draw %s: %s", svg_path, exc)
    return written
