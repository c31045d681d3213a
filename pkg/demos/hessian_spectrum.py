"""
Hessian spectrum of the scalar chain
====================================

At a global minimizer of ``(m - w_L ... w_1)^2 + (lam / L) sum w_i^2`` the
Hessian has ``L - 1`` eigenvalues equal to ``4 lam / L`` and one larger
eigenvalue that depends only on the common layer magnitude. Flipping the
signs of an even number of layers gives another minimizer with the same
spectrum.
"""

import numpy as np

from dmfprox import hessian_spectrum_scalar
from dmfprox.experiments import scalar_fd_spectrum, sign_patterns

m, lam, depth = 3.0, 4.0, 3
spec = hessian_spectrum_scalar(m, lam, depth)
print("closed form :", np.array2string(spec.eigenvalues(), precision=10))

for signs in sign_patterns(depth, 1.0):
    fd = scalar_fd_spectrum(m, lam, depth, signs)
    print(f"signs {signs}:", np.array2string(fd, precision=10))

# %%
# Below the threshold the minimizer is the origin and the Hessian is a
# multiple of the identity.
print("zero branch :", hessian_spectrum_scalar(0.5, lam, depth).eigenvalues())

# %%
# With vanishing regularization the top eigenvalue tends to 2 L |m|^(2 - 2/L).
for small in (1e-2, 1e-4, 1e-8):
    s = hessian_spectrum_scalar(2.0, small, 3)
    print(f"lam = {small:g}: lambda_max = {s.lambda_max:.8f}  (limit {6 * 2.0 ** (4 / 3):.8f})")
