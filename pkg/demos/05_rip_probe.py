"""
Probing the restricted isometry constant
========================================

The probe samples random unit-norm rank-r matrices Z and tracks the running
maximum of | ||A(Z)||^2 - 1 |.  It is a lower bound on the true constant
and tightens as more samples are drawn.
"""

import numpy as np

from scaledgd import SensingOperator, orthonormal_basis_operator, rip_probe

n1 = n2 = 16
for m in (100, 400, 1600, 6400):
    op = SensingOperator.gaussian(n1, n2, m, seed=m)
    curve = rip_probe(op, 2, 300, seed=0)
    print(f"m={m:5d}  after 10 samples {curve[9]:.3f}  after 300 samples {curve[-1]:.3f}")

# %%
# An operator whose measurement matrices form an orthonormal basis is an
# exact isometry.

iso = orthonormal_basis_operator(4, 4, np.random.default_rng(0))
print("orthonormal basis:", rip_probe(iso, 2, 100, seed=1)[-1])
