"""P1 resonance lines and hyperfine leakage under a drive."""
import numpy as np

from spinhydro import cluster
from spinhydro.constants import DEFAULT_CONSTANTS as K, MHZ

B = 511.0
lines = cluster.p1_subgroup_spectrum(B)
center = lines[2][0]
for f, w in lines:
    print(f"offset {(f - center) / MHZ:8.2f} MHz  weight {w:.4f}")

spec = cluster.HyperfineSpec(B=B)
om = np.linspace(B * K.gamma_e - MHZ * 60, B * K.gamma_e + MHZ * 60, 1201)
sweep = cluster.leakage_sweep(spec, om, np.linspace(0, 20, 801))
x, y = cluster.find_resonances(sweep, n=2)
print("leakage resonances (MHz from gamma_e B):", np.round((x - B * K.gamma_e) / MHZ, 2))
gap, _ = cluster.effective_coupling(spec)
print(f"effective coupling {gap / MHZ:.3f} MHz")

t = np.linspace(0, 3, 31)
for nu in (1 / 12, 1 / 4, 1 / 3):
    print(f"DEER rate at nu = {nu:.3f}: {cluster.deer_decay(110.0, nu, t, realizations=100).meta['rate']:.3f} /us")
