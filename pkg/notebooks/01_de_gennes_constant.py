"""
The de Gennes constant
======================

Lowest energy of the half-line oscillator, minimized over the shift xi.
"""

# %%
import numpy as np

from glfield.degennes import mu, theta0, theta0_shooting

# %% mu(xi) on a coarse grid: a single well near xi = 0.77
xis = np.linspace(0.0, 1.6, 9)
for xi in xis:
    print(f"xi = {xi:4.2f}   mu = {mu(xi):.6f}")

# %% finite-difference value with its grid-halving table, then the shooting check
res = theta0()
print(res.to_dict())
th, xi = theta0_shooting()
print(f"shooting: Theta0 = {th:.10f} at xi = {xi:.10f}")
