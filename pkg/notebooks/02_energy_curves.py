"""
Bulk and surface energy curves
==============================

Cheap versions of g(b) and E_surf(b). The full sweeps are ``glfield gcurve`` and
``glfield esurf``; the shipped reference curves are loaded at the end.
"""

# %%
from glfield.bulk_cell import g_estimate
from glfield.reference import THETA0, esurf_reference, g_reference
from glfield.surface_strip import StripProblem, d_energy

# %% one cell extrapolation per b, single restart
for b in (0.0, 0.5, 1.2):
    est = g_estimate(b, r_grid=(8, 12, 16), restarts=1, with_neumann=False)
    print(f"g({b}) ~ {est.g:+.4f}  in [{est.lower:+.4f}, {est.upper:+.4f}]")

# %% one strip per b at R = 8: d(b, R) / 2R is an upper estimate of E_surf(b)
for b in (1.0, 1.2, 1.0 / THETA0):
    sol = d_energy(StripProblem(b, 8), restarts=1)
    print(f"b = {b:.4f}: d/2R = {sol.per_length:+.5f}, T used = {sol.T_history[-1][0]}")

# %% shipped curves
g, es = g_reference(), esurf_reference()
print("g:", dict(zip(g.b.round(3), g.g.round(5))))
print("E_surf:", dict(zip(es.b.round(3), es.values.round(5))))
