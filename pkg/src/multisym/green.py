"""Retarded, advanced and causal inverses of the lattice Jacobi operator.

The time stencil of the divergence-form operator couples layers a-2..a+2
(centered d_0 applied twice).  Row r of ``J u = f`` contains ``u[r+2]`` only
through ``A00[r+1] / (4 dt^2)`` and ``u[r-2]`` only through
``A00[r-1] / (4 dt^2)``, so the retarded solution is obtained by marching
forward one layer per row and the advanced one by marching backward.

Sources must vanish on layers 0, 1, Nt-2, Nt-1.  Then

* retarded: ``J u = f`` on rows 0..Nt-3 and ``u = 0`` before the source,
* advanced: ``J u = f`` on rows 2..Nt-1 and ``u = 0`` after the source,
* causal = retarded - advanced solves the homogeneous equation on rows 2..Nt-3.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import SINGULAR_DET, JacobiBlocks, SingularBlockError
from .lattice import Grid, check_interior_support, d_space

MAX_KERNEL_SIZE = 4096


def _block_inverses(blocks: JacobiBlocks) -> np.ndarray:
    A00 = blocks.A[:, :, 0, 0]
    det = np.linalg.det(A00)
    bad = np.abs(det) < SINGULAR_DET
    if np.any(bad):
        layer = int(np.argwhere(bad)[0][0])
        raise SingularBlockError(f"time block singular on layer {layer}")
    return np.linalg.inv(A00)


def _row(blocks: JacobiBlocks, u: np.ndarray, r: int) -> np.ndarray:
    """(J u)[r] for 2 <= r <= Nt-3, touching only layers r-2..r+2."""
    g = blocks.grid
    dt, dx = g.dt, g.dx
    A, M, C = blocks.A, blocks.M, blocks.C
    s = slice(r - 1, r + 2)
    du0 = (u[r : r + 3] - u[r - 2 : r + 1]) / (2 * dt)        # d_0 u on layers r-1, r, r+1
    du1 = d_space(u[s], dx)
    p0 = (np.einsum("abij,abj->abi", M[s, :, 0], u[s])
          + np.einsum("abij,abj->abi", A[s, :, 0, 0], du0)
          + np.einsum("abij,abj->abi", A[s, :, 0, 1], du1))
    p1 = (np.einsum("bij,bj->bi", M[r, :, 1], u[r])
          + np.einsum("bij,bj->bi", A[r, :, 1, 0], du0[1])
          + np.einsum("bij,bj->bi", A[r, :, 1, 1], du1[1]))
    return (
        (p0[2] - p0[0]) / (2 * dt)
        + d_space(p1[None], dx)[0]
        - np.einsum("bij,bj->bi", C[r], u[r])
        - np.einsum("bji,bj->bi", M[r, :, 0], du0[1])
        - np.einsum("bji,bj->bi", M[r, :, 1], du1[1])
    )


def _source_layers(f: np.ndarray):
    nz = np.flatnonzero(np.any(f.reshape(f.shape[0], -1) != 0, axis=1))
    return (int(nz[0]), int(nz[-1])) if nz.size else (None, None)


def green_retarded_apply(blocks: JacobiBlocks, source) -> np.ndarray:
    g = blocks.grid
    f = np.asarray(source, dtype=float).reshape(g.shape + (blocks.k,))
    check_interior_support(f, g)
    u = np.zeros_like(f)
    first, _ = _source_layers(f)
    if first is None:
        return u
    inv = _block_inverses(blocks)
    c = 4 * g.dt**2
    for r in range(first, g.Nt - 2):
        rest = _row(blocks, u, r)  # u[r+2] is still zero here
        u[r + 2] = c * np.einsum("bij,bj->bi", inv[r + 1], f[r] - rest)
    return u


def green_advanced_apply(blocks: JacobiBlocks, source) -> np.ndarray:
    g = blocks.grid
    f = np.asarray(source, dtype=float).reshape(g.shape + (blocks.k,))
    check_interior_support(f, g)
    u = np.zeros_like(f)
    _, last = _source_layers(f)
    if last is None:
        return u
    inv = _block_inverses(blocks)
    c = 4 * g.dt**2
    for r in range(last, 1, -1):
        rest = _row(blocks, u, r)  # u[r-2] is still zero here
        u[r - 2] = c * np.einsum("bij,bj->bi", inv[r - 1], f[r] - rest)
    return u


def green_causal_apply(blocks: JacobiBlocks, source) -> np.ndarray:
    return green_retarded_apply(blocks, source) - green_advanced_apply(blocks, source)


APPLY = {
    "retarded": green_retarded_apply,
    "advanced": green_advanced_apply,
    "causal": green_causal_apply,
}


# ---------------------------------------------------------------------------
# dense kernels


@dataclass(frozen=True)
class GreenKernel:
    """Dense kernel with ``(G f)(x) = sum_y K[x, y] f(y) dt dx``.

    ``data`` has shape ``(Nt, Nx, k, Nt, Nx, k)``.  Columns for source layers
    outside 2..Nt-3 are zero (such sources are not admissible).
    """

    grid: Grid
    k: int
    kind: str
    data: np.ndarray

    def matrix(self) -> np.ndarray:
        n = self.grid.Nt * self.grid.Nx * self.k
        return self.data.reshape(n, n)

    def apply(self, source) -> np.ndarray:
        g = self.grid
        f = np.asarray(source, dtype=float).reshape(-1)
        return (self.matrix() @ f * g.dt * g.dx).reshape(g.shape + (self.k,))

    def interior_block(self) -> np.ndarray:
        """Kernel restricted to layers 2..Nt-3 in both arguments, as a square matrix."""
        s = slice(2, self.grid.Nt - 2)
        d = self.data[s, :, :, s, :, :]
        n = d.shape[0] * d.shape[1] * d.shape[2]
        return d.reshape(n, n)


def _workers() -> int:
    env = os.environ.get("TOOL_THREADS")
    return max(1, int(env)) if env else 1


def materialize_kernel(blocks: JacobiBlocks, kind: str = "causal", workers: int | None = None) -> GreenKernel:
    g, k = blocks.grid, blocks.k
    size = g.Nt * g.Nx * k
    if size > MAX_KERNEL_SIZE:
        raise ValueError(f"kernel of size {size} exceeds {MAX_KERNEL_SIZE}; use the operator-mode apply functions")
    if kind not in APPLY:
        raise ValueError(f"unknown kernel kind {kind!r}")
    apply = APPLY[kind]
    data = np.zeros(g.shape + (k,) + g.shape + (k,))
    cols = [(a, b, j) for a in range(2, g.Nt - 2) for b in range(g.Nx) for j in range(k)]

    def column(col):
        a, b, j = col
        f = np.zeros(g.shape + (k,))
        f[a, b, j] = 1.0 / (g.dt * g.dx)
        return col, apply(blocks, f)

    n = workers or _workers()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(column, cols))
    else:
        results = [column(c) for c in cols]
    for (a, b, j), u in results:
        data[:, :, :, a, b, j] = u
    return GreenKernel(g, k, kind, data)


def write_kernel_csv(path, kernel: GreenKernel) -> None:
    """Rows ``a,b,i,a_src,b_src,j,value`` for the nonzero entries."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "i", "a_src", "b_src", "j", "value"])
        for idx in zip(*np.nonzero(kernel.data)):
            w.writerow([int(i) for i in idx] + [format(float(kernel.data[idx]), ".17g")])
