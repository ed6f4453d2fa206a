"""SVG rendering of experiment CSVs (optional; needs matplotlib)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _load(path: Path):
    from .experiments import read_csv

    return read_csv(path)


def _line_plot(path: Path, title: str) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _load(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in dict.fromkeys(r["estimator"] for r in rows):
        sel = [r for r in rows if r["estimator"] == label]
        ax.plot([int(r["m"]) for r in sel], [float(r["value"]) for r in sel], label=label)
    ax.set_xlabel("m")
    ax.set_ylabel(rows[0]["statistic"] if rows else "")
    ax.set_title(title, fontsize=9)
    ax.legend()
    out = path.with_suffix(".svg")
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def _heat_plot(path: Path, title: str) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _load(path)
    p1 = np.array([float(r["p1"]) for r in rows])
    p2 = np.array([float(r["p2"]) for r in rows])
    a = np.array([float(r["a"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    sc = ax.scatter(p1, p2, c=a, s=12 if len(rows) > 200 else 80, marker="s", cmap="viridis")
    fig.colorbar(sc, ax=ax, label="a")
    ax.set_xlabel("p1")
    ax.set_ylabel("p2")
    ax.set_title(title, fontsize=9)
    out = path.with_suffix(".svg")
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def render_svg(experiment, files) -> list[Path]:
    """One SVG per CSV of a figure experiment; tables are skipped."""
    out = []
    for f in files:
        f = Path(f)
        if f.suffix != ".csv" or experiment.id.startswith("table"):
            continue
        header = _load(f)[:1]
        if header and "p1" in header[0]:
            out.append(_heat_plot(f, experiment.caption))
        else:
            out.append(_line_plot(f, experiment.caption))
    return out
