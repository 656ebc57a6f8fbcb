"""Null spaces of weight matrices, step by step.

A q x p weight with rank below q has a left kernel: directions phi with
phi^T W = 0.  Adding any multiple of phi to a layer input leaves the layer
output unchanged.  This script shows the basic bookkeeping on small
matrices.
"""

import numpy as np

from nullcollide import kernel_basis, left_nullity, min_gram_eigenvalue, numerical_rank, svd

rng = np.random.default_rng(0)

# A 10x4 weight: 10 inputs feeding 4 outputs.  Rank is at most 4, so at
# least 6 independent input directions vanish.
w = rng.normal(size=(10, 4))
s = svd(w).s
print("singular values:", np.round(s, 3))
print("numerical rank:", numerical_rank(s, w.shape))
print("left nullity:", left_nullity(w))

basis = kernel_basis(w)
print("kernel basis shape:", basis.shape)
print("max |phi^T W| over all basis columns:", np.max(np.abs(basis.T @ w)))

# Any input plus a kernel vector maps to the same pre-activation.
x = rng.normal(size=10)
x_hat = x + 3.0 * basis[:, 0]
print("output difference:", np.max(np.abs(x_hat @ w - x @ w)))

# Widening a network: the downstream weight gains an input row, and the
# smallest eigenvalue of its Gram matrix can only go down -- zero becomes
# more likely, and with it exact collisions.
w2 = rng.normal(size=(4, 4))
print("\nmin Gram eigenvalue before widening:", min_gram_eigenvalue(w2))
for extra in range(1, 4):
    w2 = np.vstack([w2, rng.normal(size=(1, 4))])
    print(f"  after {extra} extra input(s):", min_gram_eigenvalue(w2))
