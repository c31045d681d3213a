"""
Scalar prox and the jump at the threshold
=========================================

For depth ``L >= 3`` the penalty ``lam |rho|^(2/L)`` is nonconvex and the
minimizer of ``(m - rho)^2 + lam |rho|^(2/L)`` jumps from zero to a positive
value once ``|m|`` crosses a critical magnitude. Depths 1 and 2 give the
familiar ridge and soft-threshold maps.
"""

import numpy as np

from dmfprox import prox_grid_oracle, prox_scalar, threshold_m_bar
from dmfprox.scalar import interior_local_min

lam = 4.0

# the three regimes at m = 3
for depth in (1, 2, 3):
    r = prox_scalar(3.0, lam, depth)
    print(f"L={depth}: rho* = {r.minimizer:.12f} ({r.branch.value})")

# %%
# The critical magnitude for (lam, L) = (4, 3) and the size of the jump.
m_bar = threshold_m_bar(lam, 3)
print(f"m_bar = {m_bar:.12f}")
print(f"just below: {prox_scalar(m_bar * (1 - 1e-6), lam, 3).minimizer}")
print(f"just above: {prox_scalar(m_bar * (1 + 1e-6), lam, 3).minimizer:.9f}")
print(f"jump size rho_m = {interior_local_min(lam, 3):.9f}")

# %%
# Exactly at m_bar both candidates attain the same objective value.
tie = prox_scalar(m_bar, lam, 3)
print(f"tie: candidates {tie.candidates}, unique = {tie.unique}")

# %%
# Cross-check against a brute-force grid search on a few random inputs.
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(50):
    m, depth = rng.uniform(-10, 10), int(rng.integers(1, 9))
    worst = max(worst, abs(prox_scalar(m, lam, depth).minimizer - prox_grid_oracle(m, lam, depth)))
print(f"max |closed form - grid| over 50 draws: {worst:.2e}")

# %%
# Shrinkage curves (saved only when matplotlib is installed).
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    ms = np.linspace(-6, 6, 1201)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for depth in (1, 2, 3, 5):
        ax.plot(ms, [prox_scalar(m, lam, depth).minimizer for m in ms], label=f"L = {depth}")
    ax.set_xlabel("m")
    ax.set_ylabel("rho*(m)")
    ax.legend()
    fig.tight_layout()
    fig.savefig("scalar_prox.png", dpi=120)
    print("wrote scalar_prox.png")
