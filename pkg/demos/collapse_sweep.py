"""
Collapse of the minimizer as regularization grows
=================================================

Sweep ``lam = alpha * tau`` where ``tau`` is the level at which the largest
singular value falls below the critical magnitude. For each ``alpha`` the
best gradient-descent run over the desk grid is compared with the closed form.
This is a smaller version of ``dmfprox sweep-collapse``.
"""

import numpy as np

from dmfprox.experiments import DESK_INIT_SCALES, DESK_STEP_SIZES, gaussian_target, sweep_collapse
from dmfprox.training import make_grid

target = gaussian_target(6, 7, seed=0)
dims = (7, 10, 10, 6)
alphas = (0.2, 0.5, 0.8, 0.95, 1.05, 1.5)


def grid(d):
    return make_grid(d, DESK_STEP_SIZES, DESK_INIT_SCALES, seeds=(0, 1), max_iters=3000)


rows = sweep_collapse(target, 3, dims, alphas, grid)
print(f"{'alpha':>6} {'GD ||P||_F':>12} {'closed form':>12}")
for r in rows:
    print(f"{r['alpha']:6.2f} {r['gd_product_fro']:12.6f} {r['closedform_product_fro']:12.6f}")

# %%
# The closed-form curve drops to zero discontinuously at alpha = 1.
cf = np.array([r["closedform_product_fro"] for r in rows])
print("zero beyond alpha = 1:", bool(np.all(cf[np.array(alphas) > 1] == 0)))
