"""Probe survival from the continuum model.

Tabulates the undriven and driven closed forms, shows the late-time
t^(-3/2) tail and how the F kernel enters once a finite lifetime is set.
"""
import numpy as np

from spinhydro import hydro
from spinhydro.curves import loglog_slope

t = np.geomspace(1, 1000, 13)

# spreading without lifetime: the tail falls as t^-1.5 once t >> tau_p, b^2/D
m = hydro.HydroModel(D=0.35, b=4.0, Gamma=1.0, tau_p=30.0)
s = hydro.survival_undriven(m, t)
for lo in (100.0, 1000.0, 10000.0):
    tt = np.geomspace(lo, 10 * lo, 9)
    print(f"slope on [{lo:g}, {10 * lo:g}] us:",
          round(loglog_slope(tt, hydro.survival_undriven(m, tt))[0], 3))

# a lifetime cuts the tail off
m_t1 = hydro.HydroModel(D=0.35, b=4.0, Gamma=1.0, tau_p=30.0, T1=2600.0)
for ti, a, b in zip(t[::3], s[::3], hydro.survival_undriven(m_t1, t[::3])):
    print(f"t = {ti:8.2f} us  S = {a:.4e}  with T1: {b:.4e}")

# drive switched on at t = 0 speeds up spreading and lowers the probe signal
m_dr = hydro.HydroModel(D=0.35, b=4.0, Gamma=1.0, tau_p=30.0, T1=2600.0, D_dr=0.45)
print("driven / undriven at t = 100 us:",
      round(float(hydro.survival_driven(m_dr, 100.0) / hydro.survival_undriven(m_t1, 100.0)), 3))

x = np.array([1e-4, 1e-2, 1.0, 10.0, 100.0])
print("F(x):", np.array2string(hydro.F_kernel(x), precision=6))
