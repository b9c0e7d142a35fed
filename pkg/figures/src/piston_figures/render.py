"""Matplotlib renderers for the three figure kinds."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .jobs import (
    DENSITY_HEADER,
    FIDELITY_HEADER,
    FigureJob,
    FigureKind,
    family_hbar,
    load_table,
    snapshot_time,
)

# Keep text as text in SVG files; glyph paths defeat diffing and search.
plt.rcParams["svg.fonttype"] = "none"


def render(job: FigureJob) -> Path:
    """Render one job to its output path; vector SVG when no suffix given."""
    output = job.output if job.output.suffix else job.output.with_suffix(".svg")
    if job.kind is FigureKind.DENSITY_PANELS:
        fig = _density_panels(job.inputs)
    elif job.kind is FigureKind.FIDELITY_PAIR:
        fig = _fidelity_pair(job.inputs)
    else:
        fig = _hbar_family(job.inputs)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(output)
    plt.close(fig)
    return output


def _density_panels(inputs: tuple[Path, ...]) -> plt.Figure:
    count = len(inputs) // 2
    columns = (inputs[:count], inputs[count:])
    fig, axes = plt.subplots(
        count, 2, figsize=(7.0, 1.8 * count), squeeze=False, sharey="row"
    )
    for col, paths in enumerate(columns):
        for row, path in enumerate(paths):
            data = load_table(path, DENSITY_HEADER)
            q, rho = data[:, 1], data[:, 2]
            ax = axes[row][col]
            ax.plot(q, rho, lw=1.0, color="C0" if col == 0 else "C3")
            ax.set_xlim(0.0, float(q[-1]))
            ax.set_ylim(bottom=0.0)
            ax.text(
                0.97,
                0.9,
                f"t = {snapshot_time(path):g}",
                transform=ax.transAxes,
                ha="right",
                va="top",
                fontsize=8,
            )
            if col == 0:
                ax.set_ylabel(r"$|\psi|^2$")
            if row == count - 1:
                ax.set_xlabel("q")
    axes[0][0].set_title("with CD")
    axes[0][1].set_title("without CD")
    fig.tight_layout()
    return fig


def _fidelity_pair(inputs: tuple[Path, ...]) -> plt.Figure:
    wcd = load_table(inputs[0], FIDELITY_HEADER)
    wocd = load_table(inputs[1], FIDELITY_HEADER)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(wcd[:, 0], wcd[:, 2], color="m", ls="--", label="with CD")
    ax.plot(wocd[:, 0], wocd[:, 2], color="k", lw=1.0, label="without CD")
    ax.set_xlim(float(wcd[0, 0]), float(wcd[-1, 0]))
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\mathcal{F}(t)$")
    ax.legend(loc="lower left", fontsize=9)

    # The with-CD curve hugs unity; magnify it so its dips are visible.
    inset = ax.inset_axes([0.35, 0.3, 0.58, 0.42])
    inset.plot(wcd[:, 0], wcd[:, 2], color="m", ls="--", lw=0.9)
    low = float(np.min(wcd[:, 2]))
    margin = max((1.0 - low) * 0.25, 1e-5)
    inset.set_xlim(float(wcd[0, 0]), float(wcd[-1, 0]))
    inset.set_ylim(low - margin, 1.0 + margin)
    inset.tick_params(labelsize=7)
    fig.tight_layout()
    return fig


def _hbar_family(inputs: tuple[Path, ...]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in inputs:
        data = load_table(path, FIDELITY_HEADER)
        ax.plot(
            data[:, 0],
            data[:, 2],
            lw=1.0,
            label=f"ħ = {family_hbar(path):g}",
        )
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\mathcal{F}(t)$")
    ax.legend(loc="lower left", fontsize=8, ncols=2)
    fig.tight_layout()
    return fig
