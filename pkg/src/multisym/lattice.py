"""Uniform space-time lattice: Nt time layers, Nx periodic spatial nodes.

Grid functions are numpy arrays whose first two axes are (time, space); any
trailing axes (field components, momentum directions) are carried along.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Grid:
    Nt: int
    Nx: int
    dt: float
    dx: float

    def __post_init__(self):
        if self.Nt < 5 or self.Nx < 4:
            raise ValueError(f"grid needs Nt >= 5 and Nx >= 4, got {self.Nt}x{self.Nx}")
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError("grid spacings must be positive")

    @classmethod
    def periodic(cls, Nt: int, Nx: int, length: float = 2 * np.pi, cfl: float = 1.0) -> "Grid":
        dx = length / Nx
        return cls(Nt, Nx, cfl * dx, dx)

    @property
    def shape(self):
        return (self.Nt, self.Nx)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.Nt)

    @property
    def x(self) -> np.ndarray:
        return self.dx * np.arange(self.Nx)

    @property
    def length(self) -> float:
        return self.Nx * self.dx

    def mesh(self):
        """(T, X) coordinate arrays of shape (Nt, Nx)."""
        return np.meshgrid(self.t, self.x, indexing="ij")

    def coords(self) -> np.ndarray:
        """Base coordinates at every node, shape (Nt, Nx, 2)."""
        T, X = self.mesh()
        return np.stack([T, X], axis=-1)

    def interior(self) -> slice:
        """Time layers where the time derivative stencil is centered."""
        return slice(1, self.Nt - 1)


@dataclass(frozen=True)
class Region:
    """Closed time window [a1, a2] times the whole circle."""

    a1: int
    a2: int

    def check(self, grid: Grid) -> "Region":
        if not (0 <= self.a1 <= self.a2 < grid.Nt):
            raise ValueError(f"region [{self.a1}, {self.a2}] outside 0..{grid.Nt - 1}")
        return self


@dataclass(frozen=True)
class Section:
    grid: Grid
    values: np.ndarray                 # (Nt, Nx, k)
    momenta: Optional[np.ndarray] = None  # (Nt, Nx, 2, k)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[..., None]
        if v.shape[:2] != self.grid.shape:
            raise ValueError(f"section shape {v.shape[:2]} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)
        if self.momenta is not None:
            p = np.asarray(self.momenta, dtype=float)
            if p.shape != v.shape[:2] + (2, v.shape[2]):
                raise ValueError(f"momenta shape {p.shape} does not match section {v.shape}")
            object.__setattr__(self, "momenta", p)

    @property
    def k(self) -> int:
        return self.values.shape[2]


# ---------------------------------------------------------------------------
# derivatives


def d_time(f: np.ndarray, dt: float) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * dt)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dt)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dt)
    return out


def d_space(f: np.ndarray, dx: float) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * dx)


def d_mu(f, grid: Grid, mu: int) -> np.ndarray:
    """Second-order difference along time (mu=0) or periodic space (mu=1)."""
    if isinstance(f, Section):
        f = f.values
    if mu == 0:
        return d_time(f, grid.dt)
    if mu == 1:
        return d_space(f, grid.dx)
    raise ValueError(f"direction must be 0 or 1, got {mu}")


def gradient(f, grid: Grid) -> np.ndarray:
    """Both d_mu stacked on a new last axis: (Nt, Nx, k) -> (Nt, Nx, k, 2), the ``qdot[i, mu]`` layout."""
    if isinstance(f, Section):
        f = f.values
    return np.stack([d_time(f, grid.dt), d_space(f, grid.dx)], axis=-1)


def divergence(P, grid: Grid) -> np.ndarray:
    """d_mu P^mu for P of shape (Nt, Nx, 2, ...)."""
    return d_time(P[:, :, 0], grid.dt) + d_space(P[:, :, 1], grid.dx)


# ---------------------------------------------------------------------------
# integration


def integrate_slice(density, grid: Grid) -> float:
    """Integral over a constant-t slice (weight dx on each node)."""
    density = np.asarray(density, dtype=float)
    if density.shape[0] != grid.Nx:
        raise ValueError("slice density must have one value per spatial node")
    return float(np.sum(density) * grid.dx)


def time_weights(grid: Grid, region: Optional[Region] = None) -> np.ndarray:
    """Trapezoid weights (times dt) on the layers of a region, zero outside."""
    region = Region(0, grid.Nt - 1) if region is None else region.check(grid)
    w = np.zeros(grid.Nt)
    w[region.a1 : region.a2 + 1] = grid.dt
    if region.a2 > region.a1:
        w[region.a1] *= 0.5
        w[region.a2] *= 0.5
    return w


def integrate_region(density, grid: Grid, region: Optional[Region] = None) -> float:
    density = np.asarray(density, dtype=float)
    if density.shape[:2] != grid.shape:
        raise ValueError("region density must be a grid scalar")
    w = time_weights(grid, region)
    density = density.reshape(grid.shape + (-1,)).sum(axis=-1)
    return float(w @ density.sum(axis=1) * grid.dx)


def pairing(f, g, grid: Grid) -> float:
    """<f, g> = sum over components of the full-lattice integral of f g."""
    f = f.values if isinstance(f, Section) else np.asarray(f, dtype=float)
    g = g.values if isinstance(g, Section) else np.asarray(g, dtype=float)
    return integrate_region(f * g, grid)


# ---------------------------------------------------------------------------
# sources


def check_interior_support(f: np.ndarray, grid: Grid, what: str = "source") -> None:
    """Sources and functional derivatives must vanish on the two layers at each time end."""
    edge = np.concatenate([f[:2].ravel(), f[-2:].ravel()])
    if np.any(edge != 0):
        raise ValueError(f"{what} must vanish on time layers 0, 1, Nt-2, Nt-1")


def delta_source(grid: Grid, node, component: int = 0, k: int = 1) -> np.ndarray:
    a, b = node
    if not (2 <= a <= grid.Nt - 3):
        raise ValueError(f"delta source layer {a} too close to the time ends (need 2 <= a <= Nt-3)")
    if not (0 <= component < k):
        raise ValueError(f"component {component} out of range for k={k}")
    f = np.zeros(grid.shape + (k,))
    f[a, b % grid.Nx, component] = 1.0 / (grid.dt * grid.dx)
    return f


# ---------------------------------------------------------------------------
# export


def write_section_csv(path, values) -> None:
    """Rows ``t_index,x_index,component,value`` with round-trip float text."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[..., None]
    values = values.reshape(values.shape[:2] + (-1,))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_index", "x_index", "component", "value"])
        for (a, b, i), v in np.ndenumerate(values):
            w.writerow([a, b, i, format(float(v), ".17g")])


def read_section_csv(path, grid: Grid) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    k = 1 + max(int(r["component"]) for r in rows)
    out = np.zeros(grid.shape + (k,))
    for r in rows:
        out[int(r["t_index"]), int(r["x_index"]), int(r["component"])] = float(r["value"])
    return out
