"""Body-fitted O-grid around a NACA0012 section, smoothed by the elliptic generator.

Writes ``naca_grid.npz`` with the coordinates and the Jacobian.

Usage: python demos/naca_grid.py [n_xi] [n_eta]
"""

import sys

import numpy as np

from tnflow.core import decode_grid
from tnflow.curvilinear import build_curvilinear_operators
from tnflow.grids import (circle_points, control_functions, min_spacing, naca0012_points, naca_grid,
                          orthogonality_deviation, transfinite_grid, winslow_residual)


def main(n_xi: int = 6, n_eta: int = 6) -> None:
    count = 1 << n_xi
    base = transfinite_grid(naca0012_points(count), circle_points(8.0, count), n_xi, n_eta)
    grid = naca_grid(n_xi, n_eta)
    X, Y = grid.coords()
    print(f"transfinite: orthogonality {orthogonality_deviation(base):.3f}, "
          f"min J {decode_grid(base.jac).min():.2e}")
    print(f"elliptic:    orthogonality {orthogonality_deviation(grid):.3f}, "
          f"min J {decode_grid(grid.jac).min():.2e}, residual {winslow_residual(X, Y, control_functions(X, Y)):.1e}")
    print(f"min spacing {min_spacing(grid):.2e}, metric bond {grid.chi_met}, "
          f"Laplacian bond {build_curvilinear_operators(grid).lap.max_bond}")
    np.savez("naca_grid.npz", x=X, y=Y, jac=decode_grid(grid.jac))


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:]))
