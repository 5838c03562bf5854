"""Flow past a cylinder at Re = 20 on a 32x32 O-grid, MPS solver against the dense oracle.

Usage: python demos/cylinder_flow.py [steps] [max_bond]
"""

import sys

import numpy as np

from tnflow.core import TruncationPolicy
from tnflow.flow import (PoissonConfig, build_flow_problem, cp_profile, far_pressure, horizontal_force,
                         horizontal_force_from_wall, relative_error_series, run_flow)
from tnflow.flow_dense import dense_flow_for
from tnflow.grids import cylinder_grid


def main(steps: int = 300, max_bond: int | None = None) -> None:
    grid = cylinder_grid(5, 5)
    pb = build_flow_problem(grid)
    if max_bond is None:
        policy, cfg = TruncationPolicy.exact(), PoissonConfig()
    else:
        policy = TruncationPolicy(max_bond=max_bond, cutoff=1e-14)
        cfg = PoissonConfig(max_bond=max_bond, strict=False)
    print(f"dt = {pb.dt:.4g} s, Laplacian bond {pb.ops.lap.max_bond}")
    fs, infos, samples = run_flow(pb, steps, policy, cfg, sample_every=50)

    dense = dense_flow_for(grid, pb.params)
    ds, ref = dense.run(steps, sample_every=50)
    err = relative_error_series(samples, ref)
    for s, ep, es in zip(samples, err["p"], err["speed"]):
        print(f"step {s['step']:5d}  eps_p {ep:.2e}  eps_speed {es:.2e}")

    theta, cp = cp_profile(fs, grid, pb.params)
    p = ds.p.reshape(dense.shape)
    force_dense = horizontal_force_from_wall(dense.wall_pressure(ds), far_pressure(p), grid)
    print(f"force {horizontal_force(fs, grid):.5f} (dense {force_dense:.5f}), "
          f"max divergence {max(i.divergence for i in infos):.1e}")
    order = np.argsort(theta)
    for th, c in zip(theta[order][::4], cp[order][::4]):
        print(f"theta {th:6.1f}  Cp {c:+.4f}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 300, int(args[1]) if len(args) > 1 else None)
