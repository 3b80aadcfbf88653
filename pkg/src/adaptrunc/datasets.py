"""Bundled data sets and CSV loaders.

``galaxy.csv``
    Velocities (km/s) of 82 galaxies in the Corona Borealis region, as
    distributed with the R package MASS (``galaxies``).  The 78th value is
    26690 in that distribution, a known transcription error for 26960; it is
    kept as distributed.
``nile.csv``
    Annual flow of the river Nile at Aswan (10^8 m^3), 1871-1970, as in the
    R ``datasets`` package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = ["load_galaxy", "load_nile", "load_column", "load_panel", "Panel", "standardize"]


def _bundled(name):
    return resources.files("adaptrunc").joinpath("data", name)


def load_column(path, column=None):
    """One numeric column of a CSV file with a header row.

    ``column`` defaults to the last column.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header and at least one row")
    header = [h.strip() for h in rows[0]]
    idx = len(header) - 1 if column is None else header.index(column)
    try:
        return np.array([float(r[idx]) for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: non-numeric or missing value in column {header[idx]!r}") from exc


def load_galaxy(scale=1e4):
    """Galaxy velocities divided by ``scale`` (default: units of 10^4 km/s)."""
    with resources.as_file(_bundled("galaxy.csv")) as p:
        return load_column(p, "velocity") / scale


def load_nile(with_years=False):
    """Nile flows; optionally also the years."""
    with resources.as_file(_bundled("nile.csv")) as p:
        flow = load_column(p, "flow")
        years = load_column(p, "year").astype(int)
    return (years, flow) if with_years else flow


def standardize(y):
    """Subtract the mean and divide by the sample standard deviation."""
    y = np.asarray(y, dtype=float)
    return (y - y.mean()) / y.std(ddof=1)


@dataclass
class Panel:
    """Balanced panel ``y[i, t]`` with regressors ``X[i, t, :]`` and ``Z[i, t]``."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    subjects: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.y.ndim != 2:
            raise ValueError("y must be an n x T array")
        n, T = self.y.shape
        if self.X.ndim != 3 or self.X.shape[:2] != (n, T):
            raise ValueError("X must be n x T x p")
        if self.Z.shape != (n, T):
            raise ValueError("Z must be n x T (one random effect)")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Z))):
            raise ValueError("panel contains missing or non-finite values")


def load_panel(path):
    """Grouped CSV with columns ``subject, age, height, group``.

    The design has one dummy per group level (no separate intercept) plus
    age; the random effect is a subject-level intercept.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"subject", "age", "height", "group"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: columns {sorted(need)} are required")
        rows = list(reader)
    subjects = sorted({r["subject"] for r in rows}, key=lambda s: (len(s), s))
    groups = sorted({r["group"] for r in rows})
    by_subject = {s: sorted((r for r in rows if r["subject"] == s), key=lambda r: float(r["age"])) for s in subjects}
    T = {len(v) for v in by_subject.values()}
    if len(T) != 1:
        raise ValueError(f"{path}: unbalanced panel")
    T = T.pop()
    n, p = len(subjects), len(groups) + 1
    y = np.empty((n, T))
    X = np.zeros((n, T, p))
    for i, s in enumerate(subjects):
        grp = {r["group"] for r in by_subject[s]}
        if len(grp) != 1:
            raise ValueError(f"{path}: subject {s} belongs to several groups")
        g = groups.index(grp.pop())
        for t, r in enumerate(by_subject[s]):
            y[i, t] = float(r["height"])
            X[i, t, g] = 1.0
            X[i, t, -1] = float(r["age"])
    return Panel(y, X, np.ones((n, T)), np.array(subjects))
