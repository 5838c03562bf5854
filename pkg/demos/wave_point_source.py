"""Point source in a sponge-bounded box, evolved as an MPS and compared with the far-field formula.

Usage: python demos/wave_point_source.py [steps] [accuracy]
"""

import math
import sys

import numpy as np

from tnflow.discrete import SpongeSpec, WavePhysics, build_M1, build_M2
from tnflow.wave import SourceSpec, analytic_amplitude, diagonal_indices, evolve
from tnflow.core import decode_grid


def main(steps: int = 1500, accuracy: int = 6) -> None:
    phys = WavePhysics()
    sp = SpongeSpec.default(phys)
    src = SourceSpec.from_physics(phys)
    M1, M2 = build_M1(phys, sp, accuracy), build_M2(phys, sp)
    print(f"grid {1 << phys.n_x}x{1 << phys.n_y}, dx = {phys.dx:.3f} m, CFL {phys.cfl:.3f}, "
          f"bonds M1 {M1.max_bond} M2 {M2.max_bond}")

    ix, iy, r = diagonal_indices(phys, src)
    keep = sp.interior_mask(phys)[iy, ix] & (2 * math.pi * phys.f * r / phys.c >= 6)
    ix, iy, r = ix[keep], iy[keep], r[keep]
    peak = np.zeros(len(r))
    bonds = []

    def track(ws):
        bonds.append(ws.p_now.max_bond)
        if ws.k > steps // 2:
            np.maximum(peak, np.abs(decode_grid(ws.p_now)[iy, ix]), out=peak)

    evolve(phys, M1, M2, src, steps, callback=track)
    print(f"largest state bond {max(bonds)} (dense limit {1 << (phys.n // 2)})")
    print("    r [m]   amplitude   analytic")
    for ri, a, b in zip(r, peak, analytic_amplitude(r, phys)):
        print(f"{ri:9.2f} {a:11.4e} {b:10.4e}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:]))
