"""Collisions that need no weights at all: ReLU and max-pooling.

These operations are non-injective by themselves.  ReLU erases every
distinction among negative inputs; max-pooling ignores anything below the
window maximum.  Weight null spaces extend the same effect to any
activation function, but these two are the classic warm-up cases.
"""

import numpy as np

from nullcollide import demo_pool_collision, demo_relu_collision

rng = np.random.default_rng(3)

v = rng.normal(size=8)
v1, v2 = demo_relu_collision(v)
print("v1:", np.round(v1, 3))
print("v2:", np.round(v2, 3))
print("ReLU(v1) == ReLU(v2):", np.array_equal(np.maximum(v1, 0), np.maximum(v2, 0)))

z = np.array([1.0, 2.0, 3.0, 0.5, 0.1, 0.9])
z, z_star = demo_pool_collision(z, window=3)
pool = lambda a: np.array([a[i : i + 3].max() for i in range(0, a.size - 2, 3)])
print("\nz:     ", z)
print("z_star:", z_star)
print("max-pool outputs:", pool(z), pool(z_star))
