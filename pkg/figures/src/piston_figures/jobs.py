"""Figure jobs: input discovery and CSV validation.

Consumes the simulation CLI's documented files only:

- ``fidelity.csv`` with columns ``t,lambda,fidelity,norm,energy_expectation``
- ``density_t{T}.csv`` with columns ``t,q,density``
- ``fidelity_hbar{H}_wocd.csv`` (sweep rows, fidelity columns)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

FIDELITY_HEADER = ("t", "lambda", "fidelity", "norm", "energy_expectation")
DENSITY_HEADER = ("t", "q", "density")

_DENSITY_NAME = re.compile(r"^density_t(.+)\.csv$")
_FAMILY_NAME = re.compile(r"^fidelity_hbar(.+)_wocd\.csv$")


class FigureError(Exception):
    """Missing or malformed figure inputs."""


class FigureKind(Enum):
    DENSITY_PANELS = "DensityPanels"
    FIDELITY_PAIR = "FidelityPair"
    HBAR_FAMILY = "HbarFamily"


@dataclass(frozen=True)
class FigureJob:
    """One figure: which kind, which CSV files, where the image goes."""

    kind: FigureKind
    inputs: tuple[Path, ...]
    output: Path


def load_table(path: Path, header: tuple[str, ...]) -> np.ndarray:
    """Read a CSV with the exact expected header into a 2D float array."""
    if not path.is_file():
        raise FigureError(f"missing input file: {path}")
    with path.open() as handle:
        first = handle.readline().strip()
    if tuple(first.split(",")) != header:
        raise FigureError(
            f"{path}: expected columns {','.join(header)}, found {first!r}"
        )
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FigureError(f"{path}: unreadable rows ({exc})") from exc
    if data.shape[1] != len(header):
        raise FigureError(
            f"{path}: {data.shape[1]} columns, expected {len(header)}"
        )
    return data


def snapshot_time(path: Path) -> float:
    """Snapshot time encoded in a density file name."""
    match = _DENSITY_NAME.match(path.name)
    if match is None:
        raise FigureError(f"not a density snapshot file: {path}")
    try:
        return float(match.group(1))
    except ValueError as exc:
        raise FigureError(f"bad snapshot tag in {path.name}") from exc


def family_hbar(path: Path) -> float:
    """hbar value encoded in a sweep fidelity file name."""
    match = _FAMILY_NAME.match(path.name)
    if match is None:
        raise FigureError(f"not a sweep fidelity file: {path}")
    try:
        return float(match.group(1))
    except ValueError as exc:
        raise FigureError(f"bad hbar tag in {path.name}") from exc


def _density_set(run_dir: Path) -> list[Path]:
    found = [
        path
        for path in run_dir.glob("density_t*.csv")
        if _DENSITY_NAME.match(path.name)
    ]
    if not found:
        raise FigureError(f"no density_t*.csv files under {run_dir}")
    return sorted(found, key=snapshot_time)


def build_job(kind: FigureKind, indir: Path, output: Path) -> FigureJob:
    """Discover the input files for a figure kind under a run directory.

    DensityPanels and FidelityPair expect ``wcd/`` and ``wocd/``
    subdirectories holding the two runs of the same protocol; HbarFamily
    expects the sweep's per-row no-CD fidelity files side by side.
    For DensityPanels the job lists the with-CD snapshots first, then
    the without-CD snapshots, both in time order.
    """
    if not indir.is_dir():
        raise FigureError(f"input directory not found: {indir}")
    if kind is FigureKind.DENSITY_PANELS:
        wcd = _density_set(indir / "wcd")
        wocd = _density_set(indir / "wocd")
        if [snapshot_time(p) for p in wcd] != [snapshot_time(p) for p in wocd]:
            raise FigureError(
                "wcd and wocd snapshot times differ under " + str(indir)
            )
        inputs = tuple(wcd + wocd)
    elif kind is FigureKind.FIDELITY_PAIR:
        inputs = (indir / "wcd" / "fidelity.csv", indir / "wocd" / "fidelity.csv")
        for path in inputs:
            if not path.is_file():
                raise FigureError(f"missing input file: {path}")
    else:
        found = [
            path
            for path in indir.glob("fidelity_hbar*_wocd.csv")
            if _FAMILY_NAME.match(path.name)
        ]
        if not found:
            raise FigureError(f"no fidelity_hbar*_wocd.csv files under {indir}")
        inputs = tuple(sorted(found, key=family_hbar))
    return FigureJob(kind=kind, inputs=inputs, output=output)
