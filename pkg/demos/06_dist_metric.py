"""
The factorization-invariant distance
====================================

``dist`` aligns the factors (L, R) with the truth over all invertible Q before
measuring the error, so it does not change when the same product is written
with different factors.  It is always within a constant of the Frobenius
error of the product.
"""

import numpy as np

from scaledgd import FactorPair, dist, generate_ground_truth
from scaledgd.model import NORM_CHAIN_FACTOR

rng = np.random.default_rng(0)
gt = generate_ground_truth(12, 10, 3, 4.0, seed=6)
p = FactorPair(gt.Lstar + 0.05 * rng.standard_normal((12, 3)),
               gt.Rstar + 0.05 * rng.standard_normal((10, 3)))
print("dist(p)          ", dist(p, gt))

Q = np.diag([1.0, 10.0, 0.02]) @ np.linalg.qr(rng.standard_normal((3, 3)))[0]
print("dist(p Q, R Q^-T)", dist(p.reparametrize(Q), gt))

fro = np.linalg.norm(p.assemble() - gt.Xstar)
print(f"bound {NORM_CHAIN_FACTOR:.3f} * ||X - X*||_F = {NORM_CHAIN_FACTOR * fro:.4f}")
