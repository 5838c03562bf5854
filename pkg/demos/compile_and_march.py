"""Compile the two wave operators into staircase circuits and march a few steps by emulation.

Runs on a small grid so it finishes in about a minute. The compiled
operators are imperfect, so the fidelity against the dense iteration drifts.

Usage: python demos/compile_and_march.py [seconds_per_compile]
"""

import sys

from tnflow.compile import compile_operator
from tnflow.discrete import SpongeSpec, WavePhysics, build_M1, build_M2, dense_wave_operators
from tnflow.vqa import run_tpvqa
from tnflow.wave import SourceSpec, dense_wave_evolve, fidelity_inside


def main(budget: float = 20.0) -> None:
    phys = WavePhysics(n_x=4, n_y=4)
    sp = SpongeSpec.default(phys)
    src = SourceSpec.from_physics(phys)
    ops = {}
    for name, M in (("M1", build_M1(phys, sp, 2)), ("M2", build_M2(phys, sp))):
        ops[name] = compile_operator(M, 4, tol=1e-8, max_iters=10**6, init="random", seed=0, time_limit=budget)
        print(f"{name}: eps {ops[name].epsilon:.2e}, a_q {ops[name].a_q:.4f}, "
              f"{len(ops[name].history) - 1} iterations")

    steps, every = 100, 20
    run = run_tpvqa(phys, src, ops["M1"], ops["M2"], steps, diagnostics_every=every, snapshot_every=every)
    _, ref = dense_wave_evolve(phys, dense_wave_operators(phys, sp, 2), src, steps, snapshot_every=every)
    mask = sp.interior_mask(phys)
    print(" step  fidelity  P_succ(M1)  P_succ(M2)  purity")
    for rec, (k, _, field), r in zip(run.records, run.fields, ref[1:]):
        print(f"{k:5d} {fidelity_inside(field, r, mask):9.5f} {rec.p_succ_1:11.4f} {rec.p_succ_2:11.4f} "
              f"{min(rec.purity_1, rec.purity_2):7.4f}")


if __name__ == "__main__":
    main(*(float(a) for a in sys.argv[1:]))
