"""
A small phase-transition diagram
================================

For each (rank, measurement count) cell a few independent problems are
solved; a trial succeeds when the relative error after 100 iterations is at
most 1e-8.  The outputs are a CSV of cell results and a grayscale PGM image
(white = every trial succeeded).  See docs/rendering.md for viewing them.
"""

import tempfile

from scaledgd.bench import ExperimentSpec, boundary_fit, phase_boundary, run_phase_diagram

spec = ExperimentSpec(kind="phase_diagram", n1=20, n2=22, ranks=tuple(range(1, 6)),
                      ms=tuple(range(100, 1101, 100)), kappas=(5.0,), trials=3,
                      max_iters=100, threshold=1e-8, seed=4, threads=4)
out = tempfile.mkdtemp(prefix="phase-")
res = run_phase_diagram(spec, out=out)
print("wrote", sorted(res.paths))

# %%
# A text rendering of the image: rows are measurement counts (largest on top),
# columns are ranks.

shades = " .:-=+*#%@"
grid = res.success_grid()[::-1]
for m, row in zip(reversed(spec.ms), grid):
    print(f"m={m:5d} |" + "".join(shades[round(9 * s / spec.trials)] * 2 for s in row) + "|")

# %%
# The boundary (first m with at least 80% success) grows linearly in r.

bound = phase_boundary(res)
slope, intercept, r2, _ = boundary_fit(bound)
print(bound)
print(f"m*(r) ~ {slope:.0f} r + {intercept:.0f}  (R^2 = {r2:.3f})")
