"""Approach of the lattice return probability to the diffusive limit.

Nearest-neighbour hops leave a t^(-5/2) correction, r^-6 hops a t^-2 one.
"""
from spinhydro import lattice

for kind, sizes in (("nearest", None), ("powerlaw", [16, 32, 48, 64])):
    spec = lattice.LatticeSpec(L=64, hopping=kind)
    curve = lattice.lattice_survival(spec)
    D = lattice.lattice_diffusion_coefficient(spec, sizes)
    expo, window = lattice.approach_exponent(curve, D, return_window=True)
    print(f"{kind:9s} D = {D:.4f}  exponent {expo:.3f} on [{window[0]:.3g}, {window[1]:.3g}] us")
