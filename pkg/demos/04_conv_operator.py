"""Collisions for overlapping convolutions via the materialized operator.

Tiling a patch-kernel vector is only exact when patches do not overlap.
For overlapping convolutions the convolution is still one linear map from
the image to the feature map; materializing it and taking the kernel of
that matrix gives perturbations that are exact for any stride or padding.
"""

import numpy as np

from nullcollide import conv_operator_kernel, materialize_conv_operator, verify_collision
from nullcollide.graph import LayerSpec, build_graph
from nullcollide.toys import container_from_arrays

rng = np.random.default_rng(11)

# 6x6 single-channel image, 3x3 conv with stride 1: 36 inputs, 16 outputs.
w = rng.normal(size=(1, 1, 3, 3))
container = container_from_arrays({"conv.weight": w})
conv = LayerSpec("conv2d", c_in=1, c_out=1, kh=3, kw=3, stride=(1, 1), padding=(0, 0), weight="conv.weight")

op = materialize_conv_operator(conv, (1, 6, 6), container)
print(f"operator shape: {op.shape} (feature map elements x image pixels)")
basis = conv_operator_kernel(conv, (1, 6, 6), container)
print(f"operator kernel dimension: {basis.size} (rank-nullity floor: {36 - 16})")

graph = build_graph("overlap", [1, 6, 6], [conv])
x = rng.uniform(size=(1, 6, 6))
phi = basis.vectors[:, 0].reshape(1, 6, 6)
report = verify_collision(graph, container, x, x + 4.0 * phi)
print(f"feature-map residual with beta=4: {report.layer_residuals[0]:.2e}")
print(f"perturbation linf: {report.perturbation_linf:.3f} -- large change, identical features")
