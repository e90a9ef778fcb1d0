"""Shared test oracles, all deliberately naive and independent of the package
internals they check."""

import numpy as np
import pytest


def dense_grid_from_triple(triple) -> np.ndarray:
    """Materialize v_z (x) M_xy + v_x (x) M_yz + v_y (x) M_xz as a D^3 grid."""
    return (np.einsum("k,ij->ijk", triple.v_z, triple.m_xy)
            + np.einsum("i,jk->ijk", triple.v_x, triple.m_yz)
            + np.einsum("j,ik->ijk", triple.v_y, triple.m_xz))


def trilinear_reference(grid: np.ndarray, x) -> float:
    """Textbook 8-corner trilinear interpolation on the unit cube lattice."""
    d = grid.shape[0]
    t = np.asarray(x, dtype=np.float64) * (d - 1)
    i = np.minimum(t.astype(int), d - 2)
    w = t - i
    out = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wt = ((w[0] if dx else 1 - w[0])
                      * (w[1] if dy else 1 - w[1])
                      * (w[2] if dz else 1 - w[2]))
                out += wt * grid[i[0] + dx, i[1] + dy, i[2] + dz]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
