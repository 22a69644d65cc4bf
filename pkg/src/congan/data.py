"""Observed (x, y, z) records, optionally carrying simulated latents."""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

LATENT_COLUMNS = ("eta", "omega", "nu", "epsilon")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    eta: np.ndarray | None = None
    omega: np.ndarray | None = None
    nu: np.ndarray | None = None
    epsilon: np.ndarray | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                setattr(self, f.name, np.asarray(v, dtype=float).ravel())
        n = len(self.x)
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and len(v) != n:
                raise ValueError(f"column {f.name} has {len(v)} rows, expected {n}")

    def __len__(self):
        return len(self.x)

    @property
    def has_latents(self) -> bool:
        return self.omega is not None and self.eta is not None

    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.z])

    def subset(self, idx) -> Dataset:
        kw = {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[idx])
              for f in fields(self)}
        return Dataset(**kw)

    def columns(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is not None]


def write_csv(data: Dataset, path) -> None:
    cols = data.columns()
    arrays = [getattr(data, c) for c in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    missing = {"x", "y", "z"} - set(header)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    known = {"x", "y", "z", *LATENT_COLUMNS}
    table = np.array(body, dtype=float).reshape(len(body), len(header))
    kw = {name: table[:, j] for j, name in enumerate(header) if name in known}
    return Dataset(**kw)
