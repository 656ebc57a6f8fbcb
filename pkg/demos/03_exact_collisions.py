"""Construct exactly colliding inputs and account for the float residuals.

Dense first layer: add a kernel basis vector.  Patchify convolution: tile
the reshaped basis vector over every patch (or only some patches, or
different vectors per patch).  The per-layer residual table shows what
"exact" means in finite precision, and how float32 changes the picture.
"""

import numpy as np

from nullcollide import (
    PerturbationPlan,
    build_patch_perturbation,
    kernel_basis_set,
    null_space_search_dense,
    verify_collision,
)
from nullcollide.toys import random_dense_net, random_patchify_cnn

rng = np.random.default_rng(7)

print("== dense first layer ==")
graph, container = random_dense_net(rng, q=16, p=6, n_classes=4)
basis = kernel_basis_set(graph.layers[0], container)
print(f"first layer 16 -> 6: kernel has {basis.size} basis vectors")
x = rng.uniform(size=16)
x_hat = null_space_search_dense(x, basis, 0, beta=2.0)
for precision in ("f64", "f32"):
    report = verify_collision(graph, container, x, x_hat, precision)
    print(f"  {precision}: per-layer residuals {['%.1e' % r for r in report.layer_residuals]}, "
          f"same prediction: {report.argmax_equal}")

print("\n== patchify convolution ==")
graph, container = random_patchify_cnn(rng, c_in=1, k=4, grid=2, c_out=6, n_classes=5)
conv = graph.layers[0]
basis = kernel_basis_set(conv, container)
print(f"conv 4x4 stride 4, 16-dim patches -> 6 channels: {basis.size} kernel vectors")
x = rng.uniform(size=graph.input_shape)

# same vector in every patch
p = build_patch_perturbation(basis, graph.input_shape, conv, PerturbationPlan(mode="tile_single", beta=1.0))
report = verify_collision(graph, container, x, x + p)
print(f"  tiled everywhere: perturbation linf {report.perturbation_linf:.3f}, "
      f"logit residual {report.logit_residual:.1e}")

# perturb only the top-left patch, leave the rest of the image intact
plan = PerturbationPlan(mode="per_patch", patch_multipliers=(2.0, 0.0, 0.0, 0.0))
p = build_patch_perturbation(basis, graph.input_shape, conv, plan)
report = verify_collision(graph, container, x, x + p)
print(f"  one patch only: {int(np.count_nonzero(p))} pixels touched, "
      f"logit residual {report.logit_residual:.1e}")

# different basis vectors across patches
plan = PerturbationPlan(mode="tile_multi", indices=(0, min(1, basis.size - 1)), beta=1.0)
p = build_patch_perturbation(basis, graph.input_shape, conv, plan)
report = verify_collision(graph, container, x, x + p)
print(f"  alternating vectors: logit residual {report.logit_residual:.1e}")
