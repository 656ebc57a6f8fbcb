"""Exact feature-collision auditing for neural networks via weight null spaces.

Core pieces:

- linalg: SVD, numerical rank, orthonormal left-kernel bases.
- container / graph: weight containers (safetensors layout), model graphs,
  and the q x p analysis orientation shared with inference.
- analyzer: per-layer and model-level nullity metrics and reports.
- refnet: deterministic forward traces and exact input gradients.
- collider: colliding-input construction (dense, tiled-patch, full conv
  operator) and per-layer residual verification.
- attacks: PGD/FGSM, feature matching, and colliding adversarial examples.
"""

from .analyzer import (
    LayerNullityReport,
    ModelNullityReport,
    analyze_layer,
    analyze_model,
    render_report,
)
from .attacks import (
    AdversarialResult,
    AttackConfig,
    ComposedAttackResult,
    FeatureMatchResult,
    colliding_adversarial,
    feature_match,
    fgsm,
    pgd,
)
from .collider import (
    AppliedPerturbation,
    CollisionReport,
    KernelBasisSet,
    PerturbationPlan,
    apply_plan,
    build_patch_perturbation,
    conv_operator_kernel,
    demo_pool_collision,
    demo_relu_collision,
    kernel_basis_set,
    materialize_conv_operator,
    null_space_search_dense,
    verify_collision,
)
from .container import (
    WeightContainer,
    load_container,
    load_tensor,
    save_container,
    save_tensor,
    write_pgm,
)
from .graph import (
    LayerSpec,
    ModelGraph,
    as_analysis_matrix,
    build_graph,
    load_graph,
    save_graph,
    validate_weights,
)
from .linalg import (
    SvdResult,
    TolerancePolicy,
    kernel_basis,
    left_nullity,
    min_gram_eigenvalue,
    numerical_rank,
    svd,
)
from .refnet import (
    CrossEntropy,
    ForwardTrace,
    LogitDistance,
    forward,
    input_gradient,
    predict,
)

__version__ = "0.1.0"
